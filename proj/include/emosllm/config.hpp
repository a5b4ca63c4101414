#pragma once

// Run configuration: one JSON file fully determines a run together with the
// corpus seed. Paths inside the file resolve relative to the file's
// directory.

#include <array>
#include <string>

#include "emosllm/audio_encoder.hpp"
#include "emosllm/corpus.hpp"
#include "emosllm/model.hpp"
#include "emosllm/prompts.hpp"

namespace emosllm {

struct PhaseConfig {
    int epochs = 2;
    double lr_peak = 5e-4;
    double weight_decay = 0.01;
    double warmup_fraction = 0.1;
    bool restart_schedule = true;
    int patience = 2;  // early stopping, used by P3
};

struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 2;
    std::string data_dir = "data/corpus";
    std::string run_dir = "runs/default";
    std::string prompts_dir = "data/prompts";

    CorpusSpec corpus;
    EncoderSpec encoder;
    QPMapperConfig qpmapper;
    LMConfig lm;
    LoraConfig lora;
    PhaseConfig p1, p2, p3;
    HintSpec hints;

    int micro_batch = 8;
    int grad_accum = 4;  // effective batch = micro_batch * grad_accum
    int vocab_limit = 4096;
    double p3_joint_fraction = 0.5;  // emotion-task samples built as JOINT vs SER
    int max_new_tokens = 24;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    int encoder_pretrain_steps = 150;  // tiny encoder proxy task
    std::uint64_t eval_seed = 77;
};

// Parses the file, applies defaults for missing fields, resolves relative
// paths against the config file location, and returns the canonical JSON
// echo used for hashing.
RunConfig load_run_config(const std::string& path, std::string* canonical_json = nullptr);
RunConfig run_config_from_json(const std::string& json_text, const std::string& base_dir,
                               std::string* canonical_json = nullptr);
std::string run_config_to_json(const RunConfig& cfg);
std::uint64_t run_config_hash(const RunConfig& cfg);

}  // namespace emosllm
