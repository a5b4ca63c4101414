#pragma once

// Word-level tokenizer with character fallback. Pieces are whitespace-
// separated words; words outside the vocabulary decompose into a word-start
// character piece followed by attach-left character pieces, so unseen input
// never needs an unknown token. Role markers, the '|' delimiter, the answer
// field labels, and the nine emotion letters are dedicated pieces.

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "emosllm/emotions.hpp"

namespace emosllm {

class Tokenizer {
public:
    struct Piece {
        std::string text;
        bool attach_left = false;  // render without a preceding space
        bool special = false;
    };

    static constexpr const char* kSystemMarker = "<|system|>";
    static constexpr const char* kUserMarker = "<|user|>";
    static constexpr const char* kAssistantMarker = "<|assistant|>";
    static constexpr const char* kPipe = "|";
    static constexpr const char* kAsrLabel = "ASR:";
    static constexpr const char* kEmotionLabel = "Emotion:";

    // Builds from a text bundle: special pieces first, then both character
    // variants, then whole words by descending frequency up to vocab_limit.
    static Tokenizer build(const std::vector<std::string>& texts, int vocab_limit);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int vocab_size() const { return int(pieces_.size()); }
    const Piece& piece(int id) const { return pieces_[std::size_t(id)]; }

    int pipe_id() const { return pipe_id_; }
    int asr_label_id() const { return asr_label_id_; }
    int emotion_label_id() const { return emotion_label_id_; }
    int system_id() const { return system_id_; }
    int user_id() const { return user_id_; }
    int assistant_id() const { return assistant_id_; }
    int emotion_id(EmotionCode c) const { return emotion_ids_[std::size_t(int(c))]; }

    std::string serialize() const;                      // JSON
    static Tokenizer deserialize(const std::string& s);

    // Collapses all whitespace runs to single spaces and trims the ends.
    static std::string normalize(const std::string& text);

private:
    void index_pieces();
    int add_piece(const std::string& text, bool attach_left, bool special);

    std::vector<Piece> pieces_;
    std::unordered_map<std::string, int> word_to_id_;       // standalone pieces
    std::unordered_map<char, int> start_char_to_id_;
    std::unordered_map<char, int> cont_char_to_id_;
    int pipe_id_ = -1, asr_label_id_ = -1, emotion_label_id_ = -1;
    int system_id_ = -1, user_id_ = -1, assistant_id_ = -1;
    std::array<int, 9> emotion_ids_{};
};

}  // namespace emosllm
