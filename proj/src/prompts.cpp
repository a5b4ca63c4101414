#include "emosllm/prompts.hpp"

#include <algorithm>

#include "emosllm/util.hpp"

namespace emosllm {

const char* task_name(Task t) {
    switch (t) {
        case Task::ASR: return "ASR";
        case Task::SER: return "SER";
        case Task::JOINT: return "JOINT";
    }
    return "?";
}

Task task_from_name(const std::string& name) {
    if (name == "ASR") return Task::ASR;
    if (name == "SER") return Task::SER;
    if (name == "JOINT") return Task::JOINT;
    throw ConfigError("unknown task: " + name);
}

PromptPool load_prompt_pool(const std::string& path, Task task) {
    PromptPool pool;
    pool.task = task;
    const std::string text = read_text_file(path);
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = text.find('\n', i);
        if (j == std::string::npos) j = text.size();
        std::string line = text.substr(i, j - i);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        i = j + 1;
        if (line.empty() || line[0] == '#') continue;
        pool.templates.push_back(line);
    }
    if (pool.templates.empty()) throw ConfigError("empty prompt pool: " + path);
    for (std::size_t a = 0; a < pool.templates.size(); ++a)
        for (std::size_t b = a + 1; b < pool.templates.size(); ++b)
            if (pool.templates[a] == pool.templates[b])
                throw ConfigError("duplicate template in pool: " + path);
    return pool;
}

const PromptPool& PromptPools::pool(Task t) const {
    switch (t) {
        case Task::ASR: return asr;
        case Task::SER: return ser;
        case Task::JOINT: return joint;
    }
    throw ConfigError("bad task");
}

std::uint64_t PromptPools::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const PromptPool* p : {&asr, &ser, &joint})
        for (const auto& t : p->templates) h = fnv1a64(t, fnv1a64("\x1e", h));
    return h;
}

PromptPools load_prompt_pools(const std::string& dir) {
    PromptPools pools;
    pools.asr = load_prompt_pool(dir + "/asr.txt", Task::ASR);
    pools.ser = load_prompt_pool(dir + "/ser.txt", Task::SER);
    pools.joint = load_prompt_pool(dir + "/joint.txt", Task::JOINT);
    return pools;
}

const std::string& sample_prompt(const PromptPool& pool, Rng& rng) {
    if (pool.templates.empty()) throw ConfigError("sample_prompt: empty pool");
    return pool.templates[std::size_t(rng.below(pool.templates.size()))];
}

std::vector<EmotionCode> randomize_emotion_order(std::vector<EmotionCode> codes, Rng& rng) {
    if (codes.size() != kAllEmotions.size())
        throw InvalidInputError("randomize_emotion_order: need all 9 codes");
    std::array<int, 9> seen{};
    for (EmotionCode c : codes) seen[std::size_t(int(c))]++;
    for (int n : seen)
        if (n != 1) throw InvalidInputError("randomize_emotion_order: missing or duplicate code");
    rng.shuffle(codes);
    return codes;
}

std::string render_emotion_options(const std::vector<EmotionCode>& codes) {
    std::string out;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i) out += ", ";
        out += emotion_letter(codes[i]);
        out += ": ";
        out += emotion_name(codes[i]);
    }
    return out;
}

namespace {

const std::vector<std::string>& supplementary_intros() {
    static const std::vector<std::string> intros{
        "Here's a breakdown of paralinguistic cues in the audio:",
        "The following paralinguistic measurements were taken from the audio:",
        "Acoustic voice cues extracted from this recording:",
        "Consider these paralinguistic properties of the speech signal:",
        "Summary of vocal characteristics measured in the audio:",
    };
    return intros;
}

struct BankEntry {
    const char* transcript;
    EmotionCode code;
};

const std::vector<BankEntry>& example_bank() {
    static const std::vector<BankEntry> bank{
        {"You're such a disappointment.", EmotionCode::C},
        {"I'm speechless... didn't expect that.", EmotionCode::U},
        {"I can't shake this feeling of dread.", EmotionCode::F},
        {"What a beautiful morning to be alive.", EmotionCode::H},
        {"Everything turned out fine in the end.", EmotionCode::N},
        {"Stop touching my things right now.", EmotionCode::A},
    };
    return bank;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

}  // namespace

std::string render_supplementary(const paralinguistics::BinnedFeatures& features,
                                 const HintSpec& spec, Rng& rng) {
    using paralinguistics::Feature;
    std::string out;
    if (spec.include_gender && features.gender != paralinguistics::Gender::unknown) {
        out += "The speaker in this audio is ";
        out += paralinguistics::gender_name(features.gender);
        out += ".\n";
    }
    if (spec.include_paralinguistics) {
        const auto& intros = supplementary_intros();
        out += intros[std::size_t(rng.below(intros.size()))];
        out += '\n';
        std::vector<int> order;
        for (int f = 0; f < paralinguistics::kFeatureCount; ++f)
            if (features.labels[std::size_t(f)]) order.push_back(f);
        rng.shuffle(order);
        for (int f : order) {
            out += "- ";
            out += paralinguistics::feature_name(Feature(f));
            out += ": '";
            out += paralinguistics::bin_label_name(*features.labels[std::size_t(f)]);
            out += "'\n";
        }
    }
    return out;
}

std::string render_nshot(int n, Task task, Rng& rng) {
    if (n < 0) throw ConfigError("render_nshot: n must be >= 0");
    if (n == 0) return "";
    const auto& bank = example_bank();
    if (std::size_t(n) > bank.size())
        throw ConfigError("render_nshot: n exceeds example bank size of " +
                          std::to_string(bank.size()));
    std::vector<std::size_t> idx(bank.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    std::string out = "Here are some examples of the expected output:\n";
    for (int i = 0; i < n; ++i) {
        const BankEntry& e = bank[idx[std::size_t(i)]];
        std::optional<std::string> t(e.transcript);
        std::optional<EmotionCode> c(e.code);
        std::string line;
        switch (task) {
            case Task::ASR: line = format_target(Task::ASR, t, std::nullopt); break;
            case Task::SER: line = format_target(Task::SER, std::nullopt, c); break;
            case Task::JOINT: line = format_target(Task::JOINT, t, c); break;
        }
        out += "- '" + line + "'\n";
    }
    return out;
}

std::string format_target(Task task, const std::optional<std::string>& transcript,
                          const std::optional<EmotionCode>& emotion) {
    switch (task) {
        case Task::ASR:
            if (!transcript) throw InvalidInputError("format_target: ASR needs a transcript");
            return "| ASR: " + *transcript + " |";
        case Task::SER:
            if (!emotion) throw InvalidInputError("format_target: SER needs an emotion");
            return std::string("| Emotion: ") + emotion_letter(*emotion) + " |";
        case Task::JOINT:
            if (!transcript || !emotion)
                throw InvalidInputError("format_target: JOINT needs transcript and emotion");
            return "| ASR: " + *transcript + " | Emotion: " + emotion_letter(*emotion) + " |";
    }
    throw ConfigError("format_target: bad task");
}

TaskSample build_sample(const UtteranceView& utt, Task task, const HintSpec& hints,
                        const PromptPools& pools,
                        const std::optional<paralinguistics::BinnedFeatures>& binned, Rng& rng) {
    if ((task == Task::SER || task == Task::JOINT) && !utt.emotion)
        throw InvalidInputError("build_sample: emotion label required for task " +
                                std::string(task_name(task)) + " (utterance " + utt.id + ")");
    TaskSample s;
    s.utt_id = utt.id;
    s.task = task;

    std::string tmpl = sample_prompt(pools.pool(task), rng);
    if (tmpl.find("{options}") != std::string::npos) {
        std::vector<EmotionCode> codes(kAllEmotions.begin(), kAllEmotions.end());
        tmpl = replace_all(tmpl, "{options}",
                           render_emotion_options(randomize_emotion_order(codes, rng)));
    }
    s.user_prompt = tmpl;

    std::string aux;
    if (binned && (hints.include_paralinguistics || hints.include_gender))
        aux += render_supplementary(*binned, hints, rng);
    aux += render_nshot(hints.n_shot, task, rng);
    s.aux_text = aux;

    switch (task) {
        case Task::ASR:
            s.target_text = format_target(Task::ASR, utt.transcript, std::nullopt);
            break;
        case Task::SER:
            s.target_text = format_target(Task::SER, std::nullopt, utt.emotion);
            break;
        case Task::JOINT:
            s.target_text = format_target(Task::JOINT, utt.transcript, utt.emotion);
            break;
    }
    return s;
}

const std::string& system_prompt() {
    static const std::string text =
        "You are a highly capable assistant specialized in audio processing tasks. "
        "You receive inputs containing audio token representations followed by text "
        "instructions, and return structured answer.\n"
        "You may be asked to perform:\n"
        "1. **Automatic Speech Recognition (ASR)** - transcribe the spoken content.\n"
        "2. **Speech Emotion Recognition (SER)** - identify the emotion expressed in the audio.\n"
        "Follow one of the two output formats:\n"
        "- For ASR-only tasks: '| ASR: <transcription> |'\n"
        "- For SER-only tasks: '| Emotion: <emotion code> |'\n"
        "For tasks involving both ASR and SER, use the following format: "
        "'| ASR: <transcription> | Emotion: <emotion code> |'\n"
        "Emotion must be provided as a single letter chosen from the following emotion codes:\n"
        "- A: Angry\n- S: Sad\n- H: Happy\n- U: Surprise\n- F: Fear\n- D: Disgust\n"
        "- C: Contempt\n- N: Neutral\n- O: Other";
    return text;
}

const std::string& guide_phrase() {
    static const std::string text = "Here are some audio tokens:";
    return text;
}

const std::string& prompt_hint_sentence() {
    static const std::string text = "Use the following transcript to help you predict the emotion:";
    return text;
}

std::vector<std::string> prompt_vocabulary_texts(const PromptPools& pools) {
    std::vector<std::string> texts;
    texts.push_back(system_prompt());
    texts.push_back(guide_phrase());
    texts.push_back(prompt_hint_sentence());
    for (const PromptPool* p : {&pools.asr, &pools.ser, &pools.joint})
        for (const auto& t : p->templates) texts.push_back(t);
    std::vector<EmotionCode> codes(kAllEmotions.begin(), kAllEmotions.end());
    texts.push_back(render_emotion_options(codes));
    for (const auto& intro : supplementary_intros()) texts.push_back(intro);
    texts.push_back("The speaker in this audio is male.");
    texts.push_back("The speaker in this audio is female.");
    for (int f = 0; f < paralinguistics::kFeatureCount; ++f)
        texts.push_back(std::string("- ") +
                        paralinguistics::feature_name(paralinguistics::Feature(f)) + ": 'low'");
    texts.push_back("'low' 'medium' 'high'");
    texts.push_back("Here are some examples of the expected output:");
    for (const auto& e : example_bank()) {
        texts.push_back(std::string("- '") +
                        format_target(Task::JOINT, std::string(e.transcript), e.code) + "'");
    }
    return texts;
}

}  // namespace emosllm
