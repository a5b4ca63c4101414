#include "emosllm/model.hpp"

#include <cmath>

namespace emosllm {

const char* lora_site_name(LoraSite s) {
    switch (s) {
        case LoraSite::q_proj: return "q_proj";
        case LoraSite::k_proj: return "k_proj";
        case LoraSite::v_proj: return "v_proj";
        case LoraSite::o_proj: return "o_proj";
        case LoraSite::gate_proj: return "gate_proj";
        case LoraSite::up_proj: return "up_proj";
        case LoraSite::down_proj: return "down_proj";
    }
    return "?";
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::P1: return "P1";
        case Phase::P2: return "P2";
        case Phase::P3: return "P3";
    }
    return "?";
}

Phase phase_from_name(const std::string& name) {
    if (name == "P1") return Phase::P1;
    if (name == "P2") return Phase::P2;
    if (name == "P3") return Phase::P3;
    throw ConfigError("unknown phase: " + name);
}

std::vector<int> LMDef::base_param_ids() const {
    std::vector<int> ids{tok_embed, pos_embed, final_norm, head};
    for (const auto& b : blocks)
        for (int id : {b.norm1, b.wq, b.wk, b.wv, b.wo, b.norm2, b.w_gate, b.w_up, b.w_down})
            ids.push_back(id);
    return ids;
}

std::vector<int> QPMapperDef::param_ids() const {
    std::vector<int> ids{queries};
    if (in_proj >= 0) ids.push_back(in_proj);
    for (const auto& b : blocks)
        for (int id : {b.norm1, b.wq, b.wk, b.wv, b.wo, b.norm2, b.w_gate, b.w_up, b.w_down})
            ids.push_back(id);
    ids.push_back(final_norm);
    ids.push_back(out_proj);
    return ids;
}

std::vector<int> LoraSet::param_ids() const {
    std::vector<int> ids;
    for (const auto& s : sites) {
        ids.push_back(s.a_id);
        ids.push_back(s.b_id);
    }
    return ids;
}

long long LoraSet::param_count() const {
    long long n = 0;
    for (const auto& s : sites) n += (long long)cfg.rank * (s.d_in + s.d_out);
    return n;
}

const LoraSiteIds* LoraSet::find(int layer, LoraSite site) const {
    for (const auto& s : sites)
        if (s.layer == layer && s.site == site) return &s;
    return nullptr;
}

namespace {

template <typename T>
LMBlockIds init_block(const std::string& prefix, int d, int ff, ParamStore<T>& store, Rng& rng) {
    const auto wstd = [](int d_in) { return 1.0 / std::sqrt(double(d_in)); };
    LMBlockIds b;
    b.norm1 = store.add(prefix + "norm1", ones_mat<T>(1, d));
    b.wq = store.add(prefix + "wq", gaussian_mat<T>(d, d, wstd(d), rng));
    b.wk = store.add(prefix + "wk", gaussian_mat<T>(d, d, wstd(d), rng));
    b.wv = store.add(prefix + "wv", gaussian_mat<T>(d, d, wstd(d), rng));
    b.wo = store.add(prefix + "wo", gaussian_mat<T>(d, d, wstd(d), rng));
    b.norm2 = store.add(prefix + "norm2", ones_mat<T>(1, d));
    b.w_gate = store.add(prefix + "gate_proj", gaussian_mat<T>(d, ff, wstd(d), rng));
    b.w_up = store.add(prefix + "up_proj", gaussian_mat<T>(d, ff, wstd(d), rng));
    b.w_down = store.add(prefix + "down_proj", gaussian_mat<T>(ff, d, wstd(ff), rng));
    return b;
}

}  // namespace

template <typename T>
LMDef init_lm(const LMConfig& cfg, ParamStore<T>& store, Rng& rng) {
    if (cfg.d_llm % cfg.heads != 0) throw ConfigError("lm: d_llm must be divisible by heads");
    LMDef lm;
    lm.cfg = cfg;
    lm.tok_embed = store.add("lm.tok_embed",
                             gaussian_mat<T>(cfg.vocab_size, cfg.d_llm, 0.02, rng));
    lm.pos_embed = store.add("lm.pos_embed",
                             gaussian_mat<T>(cfg.max_seq_len, cfg.d_llm, 0.02, rng));
    for (int l = 0; l < cfg.layers; ++l)
        lm.blocks.push_back(init_block("lm.layer" + std::to_string(l) + ".", cfg.d_llm,
                                       cfg.ff_mult * cfg.d_llm, store, rng));
    lm.final_norm = store.add("lm.final_norm", ones_mat<T>(1, cfg.d_llm));
    lm.head = store.add("lm.head", gaussian_mat<T>(cfg.d_llm, cfg.vocab_size,
                                                   1.0 / std::sqrt(double(cfg.d_llm)), rng));
    return lm;
}

template <typename T>
QPMapperDef init_qpmapper(const QPMapperConfig& cfg, ParamStore<T>& store, Rng& rng) {
    if (cfg.d_model % cfg.heads != 0)
        throw ConfigError("qpmapper: d_model must be divisible by heads");
    if (cfg.n_q < 1) throw ConfigError("qpmapper: n_q must be >= 1");
    QPMapperDef qp;
    qp.cfg = cfg;
    qp.queries = store.add("qp.queries", gaussian_mat<T>(cfg.n_q, cfg.d_model,
                                                         cfg.query_init, rng));
    if (cfg.d_ae != cfg.d_model)
        qp.in_proj = store.add("qp.in_proj", gaussian_mat<T>(cfg.d_ae, cfg.d_model,
                                                             1.0 / std::sqrt(double(cfg.d_ae)), rng));
    for (int l = 0; l < cfg.layers; ++l)
        qp.blocks.push_back(init_block("qp.layer" + std::to_string(l) + ".", cfg.d_model,
                                       2 * cfg.d_model, store, rng));
    qp.final_norm = store.add("qp.final_norm", ones_mat<T>(1, cfg.d_model));
    qp.out_proj = store.add("qp.out_proj", gaussian_mat<T>(cfg.d_model, cfg.d_llm,
                                                           1.0 / std::sqrt(double(cfg.d_model)), rng));
    return qp;
}

template <typename T>
LoraSet inject_lora(const LMDef& lm, const LoraConfig& cfg, ParamStore<T>& store, Rng& rng) {
    if (cfg.rank < 1) throw ConfigError("lora: rank must be >= 1");
    LoraSet set;
    set.cfg = cfg;
    set.injected = true;
    const int d = lm.cfg.d_llm;
    const int ff = lm.cfg.ff_mult * d;
    for (int l = 0; l < int(lm.blocks.size()); ++l) {
        for (LoraSite site : kAllLoraSites) {
            LoraSiteIds s;
            s.layer = l;
            s.site = site;
            switch (site) {
                case LoraSite::gate_proj:
                case LoraSite::up_proj: s.d_in = d; s.d_out = ff; break;
                case LoraSite::down_proj: s.d_in = ff; s.d_out = d; break;
                default: s.d_in = d; s.d_out = d; break;
            }
            const std::string prefix =
                "lora.layer" + std::to_string(l) + "." + lora_site_name(site);
            s.a_id = store.add(prefix + ".A", gaussian_mat<T>(cfg.rank, s.d_in, 0.02, rng));
            s.b_id = store.add(prefix + ".B", Mat<T>(s.d_out, cfg.rank));  // zeros
            set.sites.push_back(s);
        }
    }
    return set;
}

std::vector<int> trainable_parameters(Phase phase, const QPMapperDef& qp, const LoraSet& lora) {
    std::vector<int> ids = qp.param_ids();
    if (phase != Phase::P1 && lora.injected)
        for (int id : lora.param_ids()) ids.push_back(id);
    return ids;
}

AssembledInput assemble(const Tokenizer& tk, int n_q, const std::string& system_text,
                        const std::string& user_text, const std::string& aux_text,
                        const std::string& target_text, Task task, int max_seq_len,
                        const std::string& sample_name) {
    AssembledInput in;
    in.sample_name = sample_name;
    in.n_q = n_q;
    in.guide_ids = tk.encode(guide_phrase());
    in.prompt_ids.push_back(tk.system_id());
    for (int id : tk.encode(system_text)) in.prompt_ids.push_back(id);
    in.prompt_ids.push_back(tk.user_id());
    for (int id : tk.encode(user_text)) in.prompt_ids.push_back(id);
    in.aux_ids = tk.encode(aux_text);
    in.aux_ids.push_back(tk.assistant_id());
    in.target_ids = tk.encode(target_text);

    // Span tagging: for joint targets the tokens before the "Emotion:"
    // label belong to the ASR loss, the rest to the SER loss.
    in.target_task.assign(in.target_ids.size(), task == Task::SER ? std::int8_t(1)
                                                                  : std::int8_t(0));
    if (task == Task::JOINT) {
        std::size_t split = in.target_ids.size();
        for (std::size_t i = 0; i < in.target_ids.size(); ++i)
            if (in.target_ids[i] == tk.emotion_label_id()) {
                split = i;
                break;
            }
        for (std::size_t i = split; i < in.target_task.size(); ++i) in.target_task[i] = 1;
    }
    in.target_is_code.assign(in.target_ids.size(), 0);
    for (std::size_t i = 0; i < in.target_ids.size(); ++i)
        for (EmotionCode c : kAllEmotions)
            if (in.target_ids[i] == tk.emotion_id(c)) in.target_is_code[i] = 1;

    if (in.total_len() > max_seq_len)
        throw DataError("assembled sample '" + sample_name + "' is " +
                        std::to_string(in.total_len()) + " tokens, exceeding max_seq_len " +
                        std::to_string(max_seq_len));
    return in;
}

template LMDef init_lm<float>(const LMConfig&, ParamStore<float>&, Rng&);
template LMDef init_lm<double>(const LMConfig&, ParamStore<double>&, Rng&);
template QPMapperDef init_qpmapper<float>(const QPMapperConfig&, ParamStore<float>&, Rng&);
template QPMapperDef init_qpmapper<double>(const QPMapperConfig&, ParamStore<double>&, Rng&);
template LoraSet inject_lora<float>(const LMDef&, const LoraConfig&, ParamStore<float>&, Rng&);
template LoraSet inject_lora<double>(const LMDef&, const LoraConfig&, ParamStore<double>&, Rng&);

}  // namespace emosllm
