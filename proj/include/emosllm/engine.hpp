#pragma once

// End-to-end orchestration: model state, feature caching, the three-phase
// training loop, validation, evaluation strategies, and the rule-based cue
// oracle.

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "emosllm/audio_encoder.hpp"
#include "emosllm/config.hpp"
#include "emosllm/corpus.hpp"
#include "emosllm/curriculum.hpp"
#include "emosllm/decode_eval.hpp"
#include "emosllm/model.hpp"
#include "emosllm/prompts.hpp"

namespace emosllm {

struct ModelState {
    RunConfig cfg;
    std::string cfg_json;
    Tokenizer tokenizer;
    ParamStore<float> store;
    std::optional<TinyConvEncoder> tiny_encoder;
    QPMapperDef qp;
    LMDef lm;
    LoraSet lora;  // injected at the P2 boundary
    paralinguistics::TertileBins bins{};
    bool bins_fitted = false;
    std::vector<std::string> provenance{"init"};
    std::uint64_t pools_hash = 0;
    Rng train_rng{0};
    AdamState adam;
    int resume_epoch = 0;         // epochs already completed in the current phase
    bool has_trainer_state = false;
    double early_best = 0.0;      // early-stop tracking, persisted for resume
    int early_since = 0;
};

// Structural parameter initialization shared by init_model and checkpoint
// loading: LM, QPMapper, optional tiny encoder, optional LoRA injection, in a
// fixed canonical order.
void build_model_defs(ModelState& state, int vocab_size, bool lora_injected);

// Builds a fresh model: tokenizer from the training split, parameter
// initialization, tertile bins fitted on train-split measurements, and the
// pretrained-then-frozen tiny encoder when configured.
ModelState init_model(const RunConfig& cfg, const std::string& cfg_json, const Manifest& manifest,
                      const PromptPools& pools);

// Lazily encodes utterances to feature matrices; thread safe, keyed by id.
class FeatureCache {
public:
    FeatureCache(const RunConfig& cfg, const ModelState* state, std::string manifest_dir);

    const Mat<float>& get(const UtteranceRecord& rec);
    void prefill(const std::vector<const UtteranceRecord*>& recs, int threads);

    Mat<float> encode_waveform(const Waveform& w, const std::string& id) const;

private:
    RunConfig cfg_;
    const ModelState* state_;
    std::string dir_;
    std::unique_ptr<SpectralStandin> standin_;
    std::map<std::string, Mat<float>> cache_;
    std::mutex mu_;
};

struct EpochMetrics {
    std::string phase;
    int epoch = 0;
    double train_loss_asr = 0.0;
    double train_loss_ser = 0.0;
    double train_loss = 0.0;  // weight-mixed
    double val_ser_loss = 0.0;
    double lr = 0.0;
    double w_asr = 0.0;
    double w_ser = 0.0;
    long long optimizer_steps = 0;
    std::string to_json() const;
};

struct PhaseReport {
    Phase phase = Phase::P1;
    std::vector<EpochMetrics> epochs;
    bool early_stopped = false;
    double best_val_ser_loss = 0.0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

// Runs one curriculum phase in place. Parameters outside the phase's
// trainable set are checksum-verified unchanged. Checkpoints: a rolling
// per-epoch snapshot plus the phase-boundary checkpoint, both under
// cfg.run_dir. P3 additionally tracks the best validation snapshot and honors
// early stopping.
PhaseReport run_phase(ModelState& state, Phase phase, const Manifest& manifest,
                      const PromptPools& pools, FeatureCache& cache, const MetricsSink& sink);

struct EvalOptions {
    InferenceStrategy strategy = InferenceStrategy::JOINT_PREFIX;
    bool use_model_asr = false;  // joint-prefix with model-produced transcripts
    std::vector<EmotionCode> class_filter;  // empty = all classes
    std::uint64_t eval_seed = 77;
    int threads = 2;
};

struct SampleEval {
    std::string id;
    EmotionCode label = EmotionCode::N;
    ParsedAnswer parsed;
    std::string raw_answer;
    std::optional<double> wer;
};

struct EvalReport {
    std::string strategy;
    int n = 0;
    double accuracy = 0.0;
    double malformed_rate = 0.0;
    std::optional<double> mean_wer;
    // rows: true class (9); cols: predicted class (9) + malformed bucket.
    std::array<std::array<int, 10>, 9> confusion{};
    std::vector<SampleEval> samples;
    std::string to_json() const;
    std::string summary_line() const;
};

EvalReport evaluate(ModelState& state, const Manifest& manifest, Split split,
                    const PromptPools& pools, FeatureCache& cache, const EvalOptions& opts);

// Single-utterance inference used by the CLI.
struct InferResult {
    ParsedAnswer parsed;
    std::string raw_answer;
};
InferResult infer_single(ModelState& state, const Waveform& audio,
                         const std::optional<std::string>& transcript,
                         InferenceStrategy strategy, const PromptPools& pools,
                         std::uint64_t seed);

// Validation SER loss: masked NLL of the emotion-code token on the given
// split, deterministic in the seed.
double validation_ser_loss(ModelState& state, const Manifest& manifest, Split split,
                           const PromptPools& pools, FeatureCache& cache, std::uint64_t seed);

// Rule-based cue oracle: class keyword match first, then the majority class
// of the measured mean-pitch tertile (mapping fitted on the train split).
double cue_oracle_accuracy(const Manifest& manifest, const std::string& manifest_dir,
                           Split eval_split);

// Paralinguistic report (one JSON line per utterance) plus fitted bins.
void write_feature_report(const Manifest& manifest, const std::string& manifest_dir,
                          const std::string& report_path, const std::string& bins_path);

std::string bins_to_json(const paralinguistics::TertileBins& bins);
paralinguistics::TertileBins bins_from_json(const std::string& text);

}  // namespace emosllm
