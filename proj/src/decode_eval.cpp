#include "emosllm/decode_eval.hpp"

#include <algorithm>

#include "emosllm/util.hpp"

namespace emosllm {

const char* strategy_name(InferenceStrategy s) {
    switch (s) {
        case InferenceStrategy::SER_ONLY: return "ser-only";
        case InferenceStrategy::PROMPT_HINT: return "prompt-hint";
        case InferenceStrategy::JOINT_PREFIX: return "joint-prefix";
    }
    return "?";
}

InferenceStrategy strategy_from_name(const std::string& name) {
    if (name == "ser-only") return InferenceStrategy::SER_ONLY;
    if (name == "prompt-hint") return InferenceStrategy::PROMPT_HINT;
    if (name == "joint-prefix") return InferenceStrategy::JOINT_PREFIX;
    throw UsageError("unknown strategy '" + name +
                     "' (valid: ser-only, prompt-hint, joint-prefix)");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

ParsedAnswer parse_output(const std::string& text) {
    ParsedAnswer out;
    const std::size_t first = text.find('|');
    const std::size_t last = text.rfind('|');
    if (first == std::string::npos || last == first) {
        out.malformed = true;
        out.reason = "no-delimited-fields";
        return out;
    }
    std::vector<std::string> segments;
    std::size_t pos = first + 1;
    while (pos <= last) {
        const std::size_t next = text.find('|', pos);
        if (next == std::string::npos || next > last) break;
        segments.push_back(text.substr(pos, next - pos));
        pos = next + 1;
    }
    bool any_field = false;
    for (const std::string& raw : segments) {
        const std::string seg = trim(raw);
        if (seg.empty()) continue;
        if (starts_with(seg, "ASR:")) {
            if (out.asr) {
                out.malformed = true;
                out.reason = "duplicate-field";
                return out;
            }
            out.asr = trim(seg.substr(4));
            any_field = true;
        } else if (starts_with(seg, "Emotion:")) {
            if (out.emotion) {
                out.malformed = true;
                out.reason = "duplicate-field";
                return out;
            }
            const std::string code = trim(seg.substr(8));
            const auto c = emotion_from_string(code);
            if (!c) {
                out.malformed = true;
                out.reason = "unknown-code";
                return out;
            }
            out.emotion = *c;
            any_field = true;
        } else {
            out.malformed = true;
            out.reason = "unlabeled-segment";
            return out;
        }
    }
    if (!any_field) {
        out.malformed = true;
        out.reason = "no-delimited-fields";
    }
    return out;
}

double unweighted_accuracy(const std::vector<std::optional<EmotionCode>>& predictions,
                           const std::vector<EmotionCode>& labels) {
    if (predictions.size() != labels.size())
        throw InvalidInputError("unweighted_accuracy: prediction/label length mismatch");
    if (labels.empty()) throw InvalidInputError("unweighted_accuracy: empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predictions[i] && *predictions[i] == labels[i]) ++correct;
    return double(correct) / double(labels.size());
}

namespace {

std::vector<std::string> words_of(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

double word_error_rate(const std::string& reference, const std::string& hypothesis) {
    const auto ref = words_of(reference);
    const auto hyp = words_of(hypothesis);
    if (ref.empty()) throw InvalidInputError("word_error_rate: empty reference");

    // Two-row Levenshtein over words, unit costs.
    std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return double(prev[hyp.size()]) / double(ref.size());
}

}  // namespace emosllm
