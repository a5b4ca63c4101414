#pragma once

// Prompt pools, answer formats, and auxiliary-text rendering: the system
// prompt, per-task user prompt templates, supplementary paralinguistic
// hinting, n-shot format hinting, and target strings.

#include <optional>
#include <string>
#include <vector>

#include "emosllm/emotions.hpp"
#include "emosllm/paralinguistics.hpp"
#include "emosllm/rng.hpp"

namespace emosllm {

enum class Task { ASR, SER, JOINT };
const char* task_name(Task t);
Task task_from_name(const std::string& name);

struct PromptPool {
    Task task = Task::ASR;
    std::vector<std::string> templates;
};

// One template file per task: one template per line, '#' comments and blank
// lines ignored. SER templates may carry the {options} placeholder.
PromptPool load_prompt_pool(const std::string& path, Task task);

struct PromptPools {
    PromptPool asr, ser, joint;
    const PromptPool& pool(Task t) const;
    std::uint64_t content_hash() const;
};

PromptPools load_prompt_pools(const std::string& dir);

// Uniform draw from the pool (seeded rng).
const std::string& sample_prompt(const PromptPool& pool, Rng& rng);

// Validates the input is a permutation of all nine codes and returns a
// shuffled copy.
std::vector<EmotionCode> randomize_emotion_order(std::vector<EmotionCode> codes, Rng& rng);

// "A: Angry, H: Happy, ..." in the given order.
std::string render_emotion_options(const std::vector<EmotionCode>& codes);

struct HintSpec {
    int n_shot = 0;
    bool include_paralinguistics = false;
    bool include_gender = false;
};

std::string render_supplementary(const paralinguistics::BinnedFeatures& features,
                                 const HintSpec& spec, Rng& rng);

std::string render_nshot(int n, Task task, Rng& rng);

std::string format_target(Task task, const std::optional<std::string>& transcript,
                          const std::optional<EmotionCode>& emotion);

struct UtteranceView {
    std::string id;
    std::string transcript;
    std::optional<EmotionCode> emotion;
    paralinguistics::Gender gender = paralinguistics::Gender::unknown;
};

struct TaskSample {
    std::string utt_id;
    Task task = Task::ASR;
    std::string user_prompt;
    std::string aux_text;
    std::string target_text;
};

TaskSample build_sample(const UtteranceView& utt, Task task, const HintSpec& hints,
                        const PromptPools& pools,
                        const std::optional<paralinguistics::BinnedFeatures>& binned, Rng& rng);

// Fixed protocol strings.
const std::string& system_prompt();
const std::string& guide_phrase();
const std::string& prompt_hint_sentence();

// Texts that must be covered by the tokenizer vocabulary.
std::vector<std::string> prompt_vocabulary_texts(const PromptPools& pools);

}  // namespace emosllm
