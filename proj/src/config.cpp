#include "emosllm/config.hpp"

#include <filesystem>

#include <nlohmann/json.hpp>

#include "emosllm/util.hpp"

namespace emosllm {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json phase_to_json(const PhaseConfig& p) {
    return json{{"epochs", p.epochs},
                {"lr_peak", p.lr_peak},
                {"weight_decay", p.weight_decay},
                {"warmup_fraction", p.warmup_fraction},
                {"restart_schedule", p.restart_schedule},
                {"patience", p.patience}};
}

void phase_from_json(const json& j, PhaseConfig& p) {
    get_if(j, "epochs", p.epochs);
    get_if(j, "lr_peak", p.lr_peak);
    get_if(j, "weight_decay", p.weight_decay);
    get_if(j, "warmup_fraction", p.warmup_fraction);
    get_if(j, "restart_schedule", p.restart_schedule);
    get_if(j, "patience", p.patience);
}

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty() || base_dir.empty()) return path;
    const fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
    json corpus{{"n_utterances", c.corpus.n_utterances},
                {"dur_min_s", c.corpus.dur_min_s},
                {"dur_max_s", c.corpus.dur_max_s},
                {"sample_rate", c.corpus.sample_rate},
                {"seed", c.corpus.seed},
                {"cue_strength", c.corpus.cue_strength}};
    std::string classes;
    for (EmotionCode e : c.corpus.classes) classes += emotion_letter(e);
    corpus["classes"] = classes;
    if (!c.corpus.class_probs.empty()) corpus["class_probs"] = c.corpus.class_probs;

    json j{
        {"seed", c.seed},
        {"threads", c.threads},
        {"data_dir", c.data_dir},
        {"run_dir", c.run_dir},
        {"prompts_dir", c.prompts_dir},
        {"corpus", corpus},
        {"encoder",
         {{"kind", encoder_kind_name(c.encoder.kind)},
          {"d_ae", c.encoder.d_ae},
          {"frame_hop_s", c.encoder.frame_hop_s},
          {"frame_len_s", c.encoder.frame_len_s},
          {"fmin_hz", c.encoder.fmin_hz},
          {"fmax_hz", c.encoder.fmax_hz},
          {"identifier", c.encoder.identifier},
          {"conv_channels", c.encoder.conv_channels},
          {"attn_layers", c.encoder.attn_layers},
          {"attn_heads", c.encoder.attn_heads}}},
        {"qpmapper",
         {{"n_q", c.qpmapper.n_q},
          {"layers", c.qpmapper.layers},
          {"heads", c.qpmapper.heads},
          {"d_model", c.qpmapper.d_model},
          {"query_init", c.qpmapper.query_init}}},
        {"lm",
         {{"vocab_size", c.lm.vocab_size},
          {"d_llm", c.lm.d_llm},
          {"layers", c.lm.layers},
          {"heads", c.lm.heads},
          {"max_seq_len", c.lm.max_seq_len},
          {"ff_mult", c.lm.ff_mult}}},
        {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}}},
        {"p1", phase_to_json(c.p1)},
        {"p2", phase_to_json(c.p2)},
        {"p3", phase_to_json(c.p3)},
        {"hints",
         {{"n_shot", c.hints.n_shot},
          {"include_paralinguistics", c.hints.include_paralinguistics},
          {"include_gender", c.hints.include_gender}}},
        {"micro_batch", c.micro_batch},
        {"grad_accum", c.grad_accum},
        {"vocab_limit", c.vocab_limit},
        {"p3_joint_fraction", c.p3_joint_fraction},
        {"max_new_tokens", c.max_new_tokens},
        {"split_ratios", c.split_ratios},
        {"encoder_pretrain_steps", c.encoder_pretrain_steps},
        {"eval_seed", c.eval_seed},
    };
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& json_text, const std::string& base_dir,
                               std::string* canonical_json) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    try {
        get_if(j, "seed", c.seed);
        get_if(j, "threads", c.threads);
        get_if(j, "data_dir", c.data_dir);
        get_if(j, "run_dir", c.run_dir);
        get_if(j, "prompts_dir", c.prompts_dir);
        if (j.contains("corpus")) {
            const json& cj = j.at("corpus");
            get_if(cj, "n_utterances", c.corpus.n_utterances);
            get_if(cj, "dur_min_s", c.corpus.dur_min_s);
            get_if(cj, "dur_max_s", c.corpus.dur_max_s);
            get_if(cj, "sample_rate", c.corpus.sample_rate);
            get_if(cj, "seed", c.corpus.seed);
            get_if(cj, "cue_strength", c.corpus.cue_strength);
            if (cj.contains("classes")) {
                c.corpus.classes.clear();
                for (char l : cj.at("classes").get<std::string>()) {
                    const auto e = emotion_from_letter(l);
                    if (!e) throw ConfigError(std::string("bad class letter: ") + l);
                    c.corpus.classes.push_back(*e);
                }
            }
            if (cj.contains("class_probs"))
                c.corpus.class_probs = cj.at("class_probs").get<std::vector<double>>();
        }
        if (j.contains("encoder")) {
            const json& ej = j.at("encoder");
            if (ej.contains("kind"))
                c.encoder.kind = encoder_kind_from_name(ej.at("kind").get<std::string>());
            get_if(ej, "d_ae", c.encoder.d_ae);
            get_if(ej, "frame_hop_s", c.encoder.frame_hop_s);
            get_if(ej, "frame_len_s", c.encoder.frame_len_s);
            get_if(ej, "fmin_hz", c.encoder.fmin_hz);
            get_if(ej, "fmax_hz", c.encoder.fmax_hz);
            get_if(ej, "identifier", c.encoder.identifier);
            get_if(ej, "conv_channels", c.encoder.conv_channels);
            get_if(ej, "attn_layers", c.encoder.attn_layers);
            get_if(ej, "attn_heads", c.encoder.attn_heads);
        }
        if (j.contains("qpmapper")) {
            const json& qj = j.at("qpmapper");
            get_if(qj, "n_q", c.qpmapper.n_q);
            get_if(qj, "layers", c.qpmapper.layers);
            get_if(qj, "heads", c.qpmapper.heads);
            get_if(qj, "d_model", c.qpmapper.d_model);
            get_if(qj, "query_init", c.qpmapper.query_init);
        }
        if (j.contains("lm")) {
            const json& lj = j.at("lm");
            get_if(lj, "vocab_size", c.lm.vocab_size);
            get_if(lj, "d_llm", c.lm.d_llm);
            get_if(lj, "layers", c.lm.layers);
            get_if(lj, "heads", c.lm.heads);
            get_if(lj, "max_seq_len", c.lm.max_seq_len);
            get_if(lj, "ff_mult", c.lm.ff_mult);
        }
        if (j.contains("lora")) {
            const json& lj = j.at("lora");
            get_if(lj, "rank", c.lora.rank);
            get_if(lj, "alpha", c.lora.alpha);
            get_if(lj, "dropout", c.lora.dropout);
        }
        if (j.contains("p1")) phase_from_json(j.at("p1"), c.p1);
        if (j.contains("p2")) phase_from_json(j.at("p2"), c.p2);
        if (j.contains("p3")) phase_from_json(j.at("p3"), c.p3);
        if (j.contains("hints")) {
            const json& hj = j.at("hints");
            get_if(hj, "n_shot", c.hints.n_shot);
            get_if(hj, "include_paralinguistics", c.hints.include_paralinguistics);
            get_if(hj, "include_gender", c.hints.include_gender);
        }
        get_if(j, "micro_batch", c.micro_batch);
        get_if(j, "grad_accum", c.grad_accum);
        get_if(j, "vocab_limit", c.vocab_limit);
        get_if(j, "p3_joint_fraction", c.p3_joint_fraction);
        get_if(j, "max_new_tokens", c.max_new_tokens);
        if (j.contains("split_ratios")) {
            const auto v = j.at("split_ratios").get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("split_ratios must have 3 entries");
            c.split_ratios = {v[0], v[1], v[2]};
        }
        get_if(j, "encoder_pretrain_steps", c.encoder_pretrain_steps);
        get_if(j, "eval_seed", c.eval_seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field error: ") + e.what());
    }

    // Derived fields.
    c.qpmapper.d_ae = c.encoder.d_ae;
    if (c.qpmapper.d_model <= 0) c.qpmapper.d_model = c.encoder.d_ae;
    c.qpmapper.d_llm = c.lm.d_llm;
    c.data_dir = resolve(base_dir, c.data_dir);
    c.run_dir = resolve(base_dir, c.run_dir);
    c.prompts_dir = resolve(base_dir, c.prompts_dir);

    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    if (c.micro_batch < 1 || c.grad_accum < 1)
        throw ConfigError("micro_batch and grad_accum must be >= 1");
    if (c.encoder.d_ae < 4) throw ConfigError("encoder d_ae must be >= 4");
    if (c.p3_joint_fraction < 0.0 || c.p3_joint_fraction > 1.0)
        throw ConfigError("p3_joint_fraction must be in [0, 1]");

    if (canonical_json) *canonical_json = run_config_to_json(c);
    return c;
}

RunConfig load_run_config(const std::string& path, std::string* canonical_json) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    const std::string text = read_text_file(path);
    return run_config_from_json(text, fs::path(path).parent_path().string(), canonical_json);
}

std::uint64_t run_config_hash(const RunConfig& cfg) {
    return fnv1a64(run_config_to_json(cfg));
}

}  // namespace emosllm
