#include "emosllm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <nlohmann/json.hpp>

#include "emosllm/util.hpp"

namespace emosllm {

using json = nlohmann::json;

namespace {

const std::vector<std::string>& special_pieces() {
    static const std::vector<std::string> specials = [] {
        std::vector<std::string> v{Tokenizer::kSystemMarker, Tokenizer::kUserMarker,
                                   Tokenizer::kAssistantMarker, Tokenizer::kPipe,
                                   Tokenizer::kAsrLabel, Tokenizer::kEmotionLabel};
        for (EmotionCode c : kAllEmotions) v.emplace_back(1, emotion_letter(c));
        return v;
    }();
    return specials;
}

std::vector<std::string> split_words(const std::string& normalized) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < normalized.size()) {
        const std::size_t j = normalized.find(' ', i);
        if (j == std::string::npos) {
            out.push_back(normalized.substr(i));
            break;
        }
        if (j > i) out.push_back(normalized.substr(i, j - i));
        i = j + 1;
    }
    return out;
}

}  // namespace

std::string Tokenizer::normalize(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

int Tokenizer::add_piece(const std::string& text, bool attach_left, bool special) {
    pieces_.push_back(Piece{text, attach_left, special});
    return int(pieces_.size() - 1);
}

void Tokenizer::index_pieces() {
    word_to_id_.clear();
    start_char_to_id_.clear();
    cont_char_to_id_.clear();
    for (int id = 0; id < int(pieces_.size()); ++id) {
        const Piece& p = pieces_[std::size_t(id)];
        if (p.text.size() == 1 && !p.special) {
            if (p.attach_left)
                cont_char_to_id_[p.text[0]] = id;
            else
                start_char_to_id_[p.text[0]] = id;
            continue;
        }
        if (!p.attach_left) word_to_id_[p.text] = id;
    }
    const auto find = [&](const char* w) {
        const auto it = word_to_id_.find(w);
        if (it == word_to_id_.end()) throw ConfigError("tokenizer missing special piece");
        return it->second;
    };
    system_id_ = find(kSystemMarker);
    user_id_ = find(kUserMarker);
    assistant_id_ = find(kAssistantMarker);
    pipe_id_ = find(kPipe);
    asr_label_id_ = find(kAsrLabel);
    emotion_label_id_ = find(kEmotionLabel);
    for (EmotionCode c : kAllEmotions)
        emotion_ids_[std::size_t(int(c))] = find(std::string(1, emotion_letter(c)).c_str());
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, int vocab_limit) {
    Tokenizer tk;
    for (const auto& s : special_pieces()) tk.add_piece(s, false, true);
    // Character fallback, both word-start and continuation variants.
    for (char c = 33; c < 127; ++c) {
        tk.add_piece(std::string(1, c), false, false);
        tk.add_piece(std::string(1, c), true, false);
    }
    const int base = int(tk.pieces_.size());
    if (vocab_limit < base)
        throw ConfigError("tokenizer vocab_limit " + std::to_string(vocab_limit) +
                          " below required base of " + std::to_string(base));

    std::map<std::string, int> freq;  // ordered for determinism
    for (const auto& t : texts)
        for (const auto& w : split_words(normalize(t)))
            if (w.size() > 1) ++freq[w];

    std::vector<std::pair<std::string, int>> words(freq.begin(), freq.end());
    std::stable_sort(words.begin(), words.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [w, n] : words) {
        (void)n;
        if (int(tk.pieces_.size()) >= vocab_limit) break;
        bool is_special = false;
        for (const auto& s : special_pieces()) is_special = is_special || s == w;
        if (!is_special) tk.add_piece(w, false, false);
    }
    tk.index_pieces();
    return tk;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(normalize(text))) {
        const auto it = word_to_id_.find(w);
        if (it != word_to_id_.end()) {
            ids.push_back(it->second);
            continue;
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            char c = w[i];
            const auto& table = i == 0 ? start_char_to_id_ : cont_char_to_id_;
            auto cit = table.find(c);
            if (cit == table.end()) cit = table.find('?');
            ids.push_back(cit->second);
        }
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= int(pieces_.size()))
            throw InvalidInputError("decode: id out of vocabulary");
        const Piece& p = pieces_[std::size_t(id)];
        if (!out.empty() && !p.attach_left) out.push_back(' ');
        out += p.text;
    }
    return out;
}

std::string Tokenizer::serialize() const {
    json arr = json::array();
    for (const auto& p : pieces_)
        arr.push_back(json{{"t", p.text}, {"l", p.attach_left}, {"s", p.special}});
    return arr.dump();
}

Tokenizer Tokenizer::deserialize(const std::string& s) {
    Tokenizer tk;
    const json arr = json::parse(s);
    for (const auto& e : arr)
        tk.add_piece(e.at("t").get<std::string>(), e.at("l").get<bool>(), e.at("s").get<bool>());
    tk.index_pieces();
    return tk;
}

}  // namespace emosllm
