// emosllm: synthetic-corpus SER/ASR pipeline driver.
//
// Subcommands: gen-data, features, train, eval, infer. Exit codes: 0 success,
// 1 usage, 2 config, 3 data, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "emosllm/checkpoint.hpp"
#include "emosllm/engine.hpp"
#include "emosllm/util.hpp"
#include "emosllm/wav_io.hpp"

namespace fs = std::filesystem;
using namespace emosllm;

namespace {

std::string default_config_path() {
    if (const char* env = std::getenv("EMOSLLM_CONFIG_DIR"))
        return std::string(env) + "/run.json";
    return "run.json";
}

struct LoadedRun {
    RunConfig cfg;
    std::string cfg_json;
    PromptPools pools;
};

LoadedRun load_run(const std::string& config_path) {
    LoadedRun run;
    run.cfg = load_run_config(config_path, &run.cfg_json);
    run.pools = load_prompt_pools(run.cfg.prompts_dir);
    return run;
}

Manifest load_run_manifest(const RunConfig& cfg) {
    const std::string path = cfg.data_dir + "/manifest.jsonl";
    if (!fs::exists(path))
        throw DataError("manifest not found: " + path + " (run gen-data first)");
    return load_manifest(path);
}

int cmd_gen_data(const std::string& config_path) {
    LoadedRun run = load_run(config_path);
    CorpusSpec spec = run.cfg.corpus;
    GenerateResult res = generate_corpus(spec, run.cfg.data_dir);
    if (res.up_to_date) {
        std::printf("corpus up-to-date: %zu utterances at %s\n", res.manifest.size(),
                    run.cfg.data_dir.c_str());
        return 0;
    }
    split_manifest(res.manifest, run.cfg.split_ratios, spec.seed);
    save_manifest(res.manifest, run.cfg.data_dir + "/manifest.jsonl");
    int n_train = 0, n_val = 0, n_test = 0;
    for (const auto& r : res.manifest) {
        if (r.split == Split::train) ++n_train;
        else if (r.split == Split::val) ++n_val;
        else ++n_test;
    }
    std::printf("generated %zu utterances (train=%d val=%d test=%d) at %s\n",
                res.manifest.size(), n_train, n_val, n_test, run.cfg.data_dir.c_str());
    return 0;
}

int cmd_features(const std::string& config_path) {
    LoadedRun run = load_run(config_path);
    const Manifest manifest = load_run_manifest(run.cfg);
    std::error_code ec;
    fs::create_directories(run.cfg.run_dir, ec);
    const std::string report = run.cfg.run_dir + "/features.jsonl";
    const std::string bins = run.cfg.run_dir + "/bins.json";
    write_feature_report(manifest, run.cfg.data_dir, report, bins);
    std::printf("wrote %s and %s\n", report.c_str(), bins.c_str());
    return 0;
}

void append_metrics(const std::string& path, const EpochMetrics& m) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot append metrics log: " + path);
    out << m.to_json() << "\n";
}

int cmd_train(const std::string& config_path, const std::string& phase_arg) {
    LoadedRun run = load_run(config_path);
    const Manifest manifest = load_run_manifest(run.cfg);
    std::error_code ec;
    fs::create_directories(run.cfg.run_dir, ec);
    const std::string metrics_path = run.cfg.run_dir + "/metrics.jsonl";

    std::vector<Phase> phases;
    if (phase_arg == "all")
        phases = {Phase::P1, Phase::P2, Phase::P3};
    else
        phases = {phase_from_name(phase_arg)};

    const std::uint64_t cfg_hash = run_config_hash(run.cfg);
    for (Phase phase : phases) {
        ModelState state;
        const std::string tag = phase_name(phase);
        const std::string resume_path = run.cfg.run_dir + "/" + tag + "_last.ckpt";
        const std::string prior_path =
            phase == Phase::P1 ? std::string()
                               : run.cfg.run_dir + "/" +
                                     (phase == Phase::P2 ? std::string("P1")
                                                         : std::string("P2")) +
                                     ".ckpt";

        bool resumed = false;
        if (fs::exists(resume_path) && checkpoint_config_hash(resume_path) == cfg_hash) {
            ModelState candidate = load_checkpoint(resume_path);
            if (candidate.has_trainer_state && candidate.resume_epoch > 0 &&
                candidate.provenance.back() !=
                    tag) {  // phase unfinished: provenance gains the tag only at the end
                state = std::move(candidate);
                resumed = true;
                std::printf("resuming %s from epoch %d\n", tag.c_str(), state.resume_epoch);
            }
        }
        if (!resumed) {
            if (phase == Phase::P1) {
                state = init_model(run.cfg, run.cfg_json, manifest, run.pools);
            } else {
                if (!fs::exists(prior_path))
                    throw DataError("missing prior-phase checkpoint: " + prior_path +
                                    " (train the earlier phase first)");
                state = load_checkpoint(prior_path);
                if (run_config_hash(state.cfg) != cfg_hash)
                    throw ConfigError("checkpoint " + prior_path +
                                      " was trained with a different config");
            }
            state.resume_epoch = 0;
        }
        if (state.pools_hash != run.pools.content_hash())
            throw ConfigError("prompt pools changed since the checkpoint was written");

        FeatureCache cache(state.cfg, &state, state.cfg.data_dir);
        PhaseReport report = run_phase(state, phase, manifest, run.pools, cache,
                                       [&](const EpochMetrics& m) {
                                           append_metrics(metrics_path, m);
                                           std::printf("%s\n", m.to_json().c_str());
                                       });
        std::printf("%s done: %zu epochs%s, checkpoint %s/%s.ckpt\n", tag.c_str(),
                    report.epochs.size(), report.early_stopped ? " (early stop)" : "",
                    run.cfg.run_dir.c_str(), tag.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             const std::string& strategy_arg, bool model_asr, const std::string& class_filter,
             const std::string& report_path) {
    LoadedRun run = load_run(config_path);
    const Manifest manifest = load_run_manifest(run.cfg);
    if (!fs::exists(checkpoint_path))
        throw DataError("checkpoint not found: " + checkpoint_path);
    ModelState state = load_checkpoint(checkpoint_path);

    EvalOptions opts;
    opts.strategy = strategy_from_name(strategy_arg);
    opts.use_model_asr = model_asr;
    opts.eval_seed = state.cfg.eval_seed;
    opts.threads = state.cfg.threads;
    for (char l : class_filter) {
        const auto c = emotion_from_letter(l);
        if (!c) throw UsageError(std::string("bad class letter in filter: ") + l);
        opts.class_filter.push_back(*c);
    }

    FeatureCache cache(state.cfg, &state, state.cfg.data_dir);
    EvalReport report = evaluate(state, manifest, Split::test, run.pools, cache, opts);
    std::printf("%s\n", report.summary_line().c_str());
    const std::string out_path =
        report_path.empty()
            ? run.cfg.run_dir + "/report_" + strategy_name(opts.strategy) + ".jsonl"
            : report_path;
    write_text_file(out_path, report.to_json());
    std::printf("report written to %s\n", out_path.c_str());
    return 0;
}

int cmd_infer(const std::string& config_path, const std::string& checkpoint_path,
              const std::string& audio_path, const std::string& strategy_arg,
              const std::optional<std::string>& transcript) {
    LoadedRun run = load_run(config_path);
    if (!fs::exists(checkpoint_path))
        throw DataError("checkpoint not found: " + checkpoint_path);
    ModelState state = load_checkpoint(checkpoint_path);
    const Waveform audio = read_wav(audio_path);
    const InferenceStrategy strategy = strategy_from_name(strategy_arg);
    InferResult res =
        infer_single(state, audio, transcript, strategy, run.pools, state.cfg.eval_seed);
    std::printf("%s\n", res.raw_answer.c_str());
    if (res.parsed.malformed) {
        std::printf("parsed: malformed (%s)\n", res.parsed.reason.c_str());
    } else {
        std::printf("parsed: asr=%s emotion=%s\n",
                    res.parsed.asr ? ("\"" + *res.parsed.asr + "\"").c_str() : "-",
                    res.parsed.emotion ? std::string(1, emotion_letter(*res.parsed.emotion)).c_str()
                                       : "-");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emosllm: speech emotion recognition pipeline on synthetic audio"};
    app.require_subcommand(1);

    std::string config_path = default_config_path();
    app.add_option("-c,--config", config_path, "run config JSON")->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    auto* feat = app.add_subcommand("features", "paralinguistic feature report + tertile bins");

    auto* train = app.add_subcommand("train", "run curriculum phases");
    std::string phase_arg = "all";
    train->add_option("--phase", phase_arg, "P1, P2, P3 or all")
        ->check(CLI::IsMember({"P1", "P2", "P3", "all"}))
        ->capture_default_str();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string ckpt_path, strategy_arg = "joint-prefix", class_filter, report_path;
    bool model_asr = false;
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--strategy", strategy_arg, "ser-only, prompt-hint, joint-prefix")
        ->check(CLI::IsMember({"ser-only", "prompt-hint", "joint-prefix"}))
        ->capture_default_str();
    eval_cmd->add_flag("--model-asr", model_asr,
                       "joint-prefix uses model transcripts instead of references");
    eval_cmd->add_option("--class-filter", class_filter,
                         "restrict to these emotion letters, e.g. ASHN");
    eval_cmd->add_option("--report", report_path, "report output path");

    auto* infer = app.add_subcommand("infer", "run one utterance through a checkpoint");
    std::string infer_ckpt, audio_path, infer_strategy = "ser-only";
    std::string transcript_arg;
    bool transcript_set = false;
    infer->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
    infer->add_option("--audio", audio_path, "input wav (PCM16 mono)")->required();
    infer->add_option("--strategy", infer_strategy, "ser-only, prompt-hint, joint-prefix")
        ->check(CLI::IsMember({"ser-only", "prompt-hint", "joint-prefix"}))
        ->capture_default_str();
    infer->add_option("--transcript", transcript_arg, "reference transcript")
        ->each([&](const std::string&) { transcript_set = true; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path);
        if (feat->parsed()) return cmd_features(config_path);
        if (train->parsed()) return cmd_train(config_path, phase_arg);
        if (eval_cmd->parsed())
            return cmd_eval(config_path, ckpt_path, strategy_arg, model_asr, class_filter,
                            report_path);
        if (infer->parsed()) {
            std::optional<std::string> transcript;
            if (transcript_set) transcript = transcript_arg;
            return cmd_infer(config_path, infer_ckpt, audio_path, infer_strategy, transcript);
        }
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 1;
}
