#pragma once

// Strict answer parsing and evaluation metrics.

#include <optional>
#include <string>
#include <vector>

#include "emosllm/emotions.hpp"

namespace emosllm {

enum class InferenceStrategy { SER_ONLY, PROMPT_HINT, JOINT_PREFIX };
const char* strategy_name(InferenceStrategy s);
InferenceStrategy strategy_from_name(const std::string& name);

struct ParsedAnswer {
    std::optional<std::string> asr;
    std::optional<EmotionCode> emotion;
    bool malformed = false;
    std::string reason;
};

// Grammar: fields live between '|' delimiters; each non-empty segment inside
// the outermost pair must be "ASR: <text>" or "Emotion: <letter>". Text
// outside the outermost '|' pair is tolerated (models may ramble); anything
// else is malformed with a reason, never misparsed.
ParsedAnswer parse_output(const std::string& text);

// Fraction of exact emotion matches; a missing prediction (malformed output)
// counts as wrong.
double unweighted_accuracy(const std::vector<std::optional<EmotionCode>>& predictions,
                           const std::vector<EmotionCode>& labels);

// Word-level edit distance (unit costs) divided by reference word count.
double word_error_rate(const std::string& reference, const std::string& hypothesis);

}  // namespace emosllm
