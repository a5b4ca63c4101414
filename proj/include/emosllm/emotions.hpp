#pragma once

#include <array>
#include <optional>
#include <string>

namespace emosllm {

// The nine single-letter emotion codes used in prompts and answer formats.
enum class EmotionCode { A, S, H, U, F, D, C, N, O };

inline constexpr std::array<EmotionCode, 9> kAllEmotions = {
    EmotionCode::A, EmotionCode::S, EmotionCode::H, EmotionCode::U, EmotionCode::F,
    EmotionCode::D, EmotionCode::C, EmotionCode::N, EmotionCode::O};

inline char emotion_letter(EmotionCode c) {
    static constexpr char letters[] = {'A', 'S', 'H', 'U', 'F', 'D', 'C', 'N', 'O'};
    return letters[int(c)];
}

inline const char* emotion_name(EmotionCode c) {
    static constexpr const char* names[] = {"Angry",   "Sad",      "Happy", "Surprise", "Fear",
                                            "Disgust", "Contempt", "Neutral", "Other"};
    return names[int(c)];
}

inline std::optional<EmotionCode> emotion_from_letter(char l) {
    for (EmotionCode c : kAllEmotions)
        if (emotion_letter(c) == l) return c;
    return std::nullopt;
}

inline std::optional<EmotionCode> emotion_from_string(const std::string& s) {
    if (s.size() != 1) return std::nullopt;
    return emotion_from_letter(s[0]);
}

}  // namespace emosllm
