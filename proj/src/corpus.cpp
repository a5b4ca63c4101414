#include "emosllm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "emosllm/rng.hpp"
#include "emosllm/util.hpp"

namespace emosllm {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split: " + name);
}

std::uint64_t CorpusSpec::content_hash() const {
    json j{{"n", n_utterances},
           {"dur_min", dur_min_s},
           {"dur_max", dur_max_s},
           {"sr", sample_rate},
           {"seed", seed},
           {"cue", cue_strength}};
    for (EmotionCode c : classes) j["classes"].push_back(std::string(1, emotion_letter(c)));
    for (double p : class_probs) j["probs"].push_back(p);
    return fnv1a64(j.dump());
}

namespace {

// Class acoustic bands: pitch registers are disjoint so the paralinguistic
// route alone can separate the default four classes.
const std::map<EmotionCode, ClassProfile>& profiles() {
    static const std::map<EmotionCode, ClassProfile> p{
        {EmotionCode::A, {280.0, 340.0, 0.45, 0.70, 0.020, 0.040}},
        {EmotionCode::S, {80.0, 110.0, 0.05, 0.12, 0.002, 0.006}},
        {EmotionCode::H, {200.0, 250.0, 0.30, 0.50, 0.010, 0.020}},
        {EmotionCode::N, {130.0, 170.0, 0.15, 0.30, 0.005, 0.010}},
        {EmotionCode::U, {250.0, 280.0, 0.35, 0.55, 0.015, 0.030}},
        {EmotionCode::F, {340.0, 400.0, 0.10, 0.25, 0.030, 0.050}},
        {EmotionCode::D, {110.0, 130.0, 0.20, 0.35, 0.012, 0.025}},
        {EmotionCode::C, {170.0, 200.0, 0.25, 0.40, 0.008, 0.015}},
        {EmotionCode::O, {80.0, 400.0, 0.05, 0.70, 0.002, 0.050}},
    };
    return p;
}

constexpr double kGlobalF0Lo = 80.0, kGlobalF0Hi = 400.0;
constexpr double kGlobalAmpLo = 0.05, kGlobalAmpHi = 0.70;
constexpr double kGlobalJitLo = 0.002, kGlobalJitHi = 0.050;

const std::map<EmotionCode, std::vector<std::string>>& keyword_map() {
    static const std::map<EmotionCode, std::vector<std::string>> k{
        {EmotionCode::A, {"furious", "seething", "livid"}},
        {EmotionCode::S, {"heartbroken", "weeping", "hopeless"}},
        {EmotionCode::H, {"delighted", "cheerful", "sunshine"}},
        {EmotionCode::N, {"ordinary", "routine", "unremarkable"}},
        {EmotionCode::U, {"astonished", "startling", "unexpected"}},
        {EmotionCode::F, {"terrified", "dreadful", "menacing"}},
        {EmotionCode::D, {"revolting", "nauseating", "foul"}},
        {EmotionCode::C, {"pathetic", "beneath", "laughable"}},
        {EmotionCode::O, {"ambiguous", "unclear", "mixed"}},
    };
    return k;
}

// Neutral fillers used when the keyword cue does not fire.
const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> v{"brief", "long", "early", "late", "busy"};
    return v;
}

const std::vector<std::string>& transcript_templates() {
    static const std::vector<std::string> v{
        "i felt so {w} about the {n} today",
        "that {n} left me feeling {w} again",
        "the {n} this morning was really {w}",
        "honestly the whole {n} seemed {w} to me",
        "my {n} turned out {w} this week",
        "everyone said the {n} was {w} yesterday",
        "i keep thinking the {n} felt {w}",
        "after the {n} i was completely {w}",
    };
    return v;
}

const std::vector<std::string>& transcript_nouns() {
    static const std::vector<std::string> v{"meeting", "journey", "dinner",  "lecture",
                                            "weather", "message", "evening", "project"};
    return v;
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
    const std::size_t pos = s.find(from);
    if (pos != std::string::npos) s.replace(pos, from.size(), to);
    return s;
}

}  // namespace

const ClassProfile& class_profile(EmotionCode c) {
    return profiles().at(c);
}

const std::vector<std::string>& class_keywords(EmotionCode c) {
    return keyword_map().at(c);
}

std::optional<EmotionCode> keyword_class(const std::string& transcript,
                                         const std::vector<EmotionCode>& classes) {
    const std::string padded = " " + transcript + " ";
    for (EmotionCode c : classes)
        for (const auto& kw : class_keywords(c))
            if (padded.find(" " + kw + " ") != std::string::npos) return c;
    return std::nullopt;
}

Waveform synthesize_utterance(const GenParams& gen, double duration_s, int sample_rate,
                              std::uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = sample_rate;
    const int total = int(std::lround(duration_s * sample_rate));
    w.samples.resize(std::size_t(std::max(total, 1)));

    constexpr int kHarmonics = 5;
    constexpr double kDecay = 0.55;
    double norm = 0.0;
    for (int h = 0; h < kHarmonics; ++h) norm += std::pow(kDecay, h);

    const double base_period = double(sample_rate) / gen.f0;
    double pos = 0.0;
    while (pos < double(total)) {
        const double period =
            base_period * std::max(0.3, 1.0 + gen.jitter_level * rng.gaussian());
        const double amp =
            gen.amplitude * std::max(0.0, 1.0 + gen.shimmer_level * rng.gaussian());
        const int start = int(std::ceil(pos));
        const int end = std::min(total, int(std::ceil(pos + period)));
        for (int s = start; s < end; ++s) {
            const double phase = (double(s) - pos) / period;
            double x = 0.0;
            for (int h = 0; h < kHarmonics; ++h)
                x += std::pow(kDecay, h) *
                     std::sin(2.0 * 3.14159265358979323846 * (h + 1) * phase);
            w.samples[std::size_t(s)] = float(amp * x / norm);
        }
        pos += period;
    }
    return w;
}

namespace {

UtteranceRecord make_record(const CorpusSpec& spec, int index, Rng& rng) {
    UtteranceRecord r;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "utt%05d", index);
    r.id = idbuf;
    r.wav_path = std::string("wav/") + idbuf + ".wav";

    // Class draw.
    if (spec.classes.empty()) throw ConfigError("corpus: no classes configured");
    if (!spec.class_probs.empty()) {
        if (spec.class_probs.size() != spec.classes.size())
            throw ConfigError("corpus: class_probs size mismatch");
        double total = 0.0;
        for (double p : spec.class_probs) total += p;
        if (std::abs(total - 1.0) > 1e-6)
            throw ConfigError("corpus: class probabilities must sum to 1");
        double u = rng.uniform(), acc = 0.0;
        r.emotion = spec.classes.back();
        for (std::size_t i = 0; i < spec.classes.size(); ++i) {
            acc += spec.class_probs[i];
            if (u < acc) {
                r.emotion = spec.classes[i];
                break;
            }
        }
    } else {
        r.emotion = spec.classes[std::size_t(rng.below(spec.classes.size()))];
    }
    r.gender = rng.bernoulli(0.5) ? paralinguistics::Gender::female
                                  : paralinguistics::Gender::male;

    const ClassProfile& prof = class_profile(r.emotion);
    const double cue = spec.cue_strength;
    r.gen.f0 = rng.bernoulli(cue) ? rng.uniform(prof.f0_lo, prof.f0_hi)
                                  : rng.uniform(kGlobalF0Lo, kGlobalF0Hi);
    r.gen.amplitude = rng.bernoulli(cue) ? rng.uniform(prof.amp_lo, prof.amp_hi)
                                         : rng.uniform(kGlobalAmpLo, kGlobalAmpHi);
    r.gen.jitter_level = rng.bernoulli(cue) ? rng.uniform(prof.jitter_lo, prof.jitter_hi)
                                            : rng.uniform(kGlobalJitLo, kGlobalJitHi);
    r.gen.shimmer_level = r.gen.jitter_level * rng.uniform(0.8, 1.6);
    r.gen.keyword_on = rng.bernoulli(cue);

    const auto& kws = class_keywords(r.emotion);
    const auto& fillers = filler_words();
    r.gen.keyword = r.gen.keyword_on ? kws[std::size_t(rng.below(kws.size()))]
                                     : fillers[std::size_t(rng.below(fillers.size()))];

    const auto& tmpls = transcript_templates();
    const auto& nouns = transcript_nouns();
    std::string t = tmpls[std::size_t(rng.below(tmpls.size()))];
    t = replace_once(t, "{n}", nouns[std::size_t(rng.below(nouns.size()))]);
    t = replace_once(t, "{w}", r.gen.keyword);
    if (t.find('|') != std::string::npos)
        throw DataError("corpus: transcript contains reserved '|': " + t);
    r.transcript = t;
    return r;
}

json record_to_json(const UtteranceRecord& r) {
    return json{{"id", r.id},
                {"wav", r.wav_path},
                {"transcript", r.transcript},
                {"emotion", std::string(1, emotion_letter(r.emotion))},
                {"gender", paralinguistics::gender_name(r.gender)},
                {"split", split_name(r.split)},
                {"gen",
                 {{"f0", r.gen.f0},
                  {"amp", r.gen.amplitude},
                  {"jitter", r.gen.jitter_level},
                  {"shimmer", r.gen.shimmer_level},
                  {"keyword_on", r.gen.keyword_on},
                  {"keyword", r.gen.keyword}}}};
}

UtteranceRecord record_from_json(const json& j) {
    UtteranceRecord r;
    r.id = j.at("id").get<std::string>();
    r.wav_path = j.at("wav").get<std::string>();
    r.transcript = j.at("transcript").get<std::string>();
    const auto emo = emotion_from_string(j.at("emotion").get<std::string>());
    if (!emo) throw DataError("manifest: bad emotion code for " + r.id);
    r.emotion = *emo;
    r.gender = paralinguistics::gender_from_name(j.at("gender").get<std::string>());
    r.split = split_from_name(j.at("split").get<std::string>());
    const auto& g = j.at("gen");
    r.gen.f0 = g.at("f0").get<double>();
    r.gen.amplitude = g.at("amp").get<double>();
    r.gen.jitter_level = g.at("jitter").get<double>();
    r.gen.shimmer_level = g.at("shimmer").get<double>();
    r.gen.keyword_on = g.at("keyword_on").get<bool>();
    r.gen.keyword = g.at("keyword").get<std::string>();
    if (r.transcript.find('|') != std::string::npos)
        throw DataError("manifest: transcript contains reserved '|' (" + r.id + ")");
    return r;
}

}  // namespace

GenerateResult generate_corpus(const CorpusSpec& spec, const std::string& out_dir) {
    if (spec.n_utterances < 1) throw ConfigError("corpus: n_utterances must be >= 1");
    if (spec.cue_strength < 0.0 || spec.cue_strength > 1.0)
        throw ConfigError("corpus: cue_strength must be in [0, 1]");
    for (EmotionCode c : spec.classes) (void)class_profile(c);

    GenerateResult result;
    const std::string state_path = out_dir + "/corpus.state.json";
    const std::uint64_t spec_hash = spec.content_hash();

    Manifest manifest;
    std::vector<Waveform> waves;
    manifest.reserve(std::size_t(spec.n_utterances));
    waves.reserve(std::size_t(spec.n_utterances));
    for (int i = 0; i < spec.n_utterances; ++i) {
        Rng rng(mix_seed(spec.seed, std::uint64_t(i), 0xC0));
        UtteranceRecord r = make_record(spec, i, rng);
        const double dur = rng.uniform(spec.dur_min_s, spec.dur_max_s);
        waves.push_back(synthesize_utterance(r.gen, dur, spec.sample_rate,
                                             mix_seed(spec.seed, std::uint64_t(i), 0xA0)));
        manifest.push_back(std::move(r));
    }

    // Up-to-date check: same spec hash and every wav matches its recorded
    // checksum.
    if (fs::exists(state_path)) {
        try {
            const json state = json::parse(read_text_file(state_path));
            if (state.at("spec_hash").get<std::uint64_t>() == spec_hash) {
                bool ok = true;
                const auto& sums = state.at("wav_checksums");
                for (std::size_t i = 0; i < manifest.size() && ok; ++i) {
                    const std::string p = out_dir + "/" + manifest[i].wav_path;
                    if (!fs::exists(p)) {
                        ok = false;
                        break;
                    }
                    const std::string bytes = read_text_file(p);
                    ok = sums.at(i).get<std::uint64_t>() == fnv1a64(bytes);
                }
                if (ok && fs::exists(out_dir + "/manifest.jsonl")) {
                    result.manifest = load_manifest(out_dir + "/manifest.jsonl");
                    result.up_to_date = true;
                    return result;
                }
            }
        } catch (const std::exception&) {
            // fall through and regenerate
        }
    }

    std::error_code ec;
    fs::create_directories(out_dir + "/wav", ec);
    if (ec) throw DataError("corpus: cannot create output dir " + out_dir);

    json sums = json::array();
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const std::string p = out_dir + "/" + manifest[i].wav_path;
        write_wav(p, waves[i]);
        sums.push_back(fnv1a64(read_text_file(p)));
    }
    save_manifest(manifest, out_dir + "/manifest.jsonl");
    json state{{"spec_hash", spec_hash}, {"wav_checksums", sums}};
    write_text_file(state_path, state.dump(2) + "\n");
    result.manifest = std::move(manifest);
    return result;
}

Manifest load_manifest(const std::string& path) {
    const std::string text = read_text_file(path);
    Manifest m;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = text.find('\n', i);
        if (j == std::string::npos) j = text.size();
        const std::string line = text.substr(i, j - i);
        i = j + 1;
        if (line.empty()) continue;
        m.push_back(record_from_json(json::parse(line)));
    }
    if (m.empty()) throw DataError("empty manifest: " + path);
    std::map<std::string, int> ids;
    for (const auto& r : m)
        if (++ids[r.id] > 1) throw DataError("manifest: duplicate id " + r.id);
    return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
    std::string out;
    for (const auto& r : m) out += record_to_json(r).dump() + "\n";
    write_text_file(path, out);
}

void split_manifest(Manifest& m, const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split_manifest: ratios must sum to 1");

    std::map<EmotionCode, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < m.size(); ++i) by_class[m[i].emotion].push_back(i);

    Rng rng(mix_seed(seed, 0x5D17));
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 3)
            throw DataError(std::string("split_manifest: class ") + emotion_letter(cls) +
                            " has fewer than 3 samples");
        rng.shuffle(idx);
        // Largest-remainder allocation keeps each split within one sample of
        // its exact share.
        const double n = double(idx.size());
        std::array<std::size_t, 3> want{};
        std::array<double, 3> frac{};
        std::size_t used = 0;
        for (int s = 0; s < 3; ++s) {
            const double exact = n * ratios[std::size_t(s)];
            want[std::size_t(s)] = std::size_t(exact);
            frac[std::size_t(s)] = exact - double(want[std::size_t(s)]);
            used += want[std::size_t(s)];
        }
        while (used < idx.size()) {
            int best = 0;
            for (int s = 1; s < 3; ++s)
                if (frac[std::size_t(s)] > frac[std::size_t(best)]) best = s;
            want[std::size_t(best)] += 1;
            frac[std::size_t(best)] = -1.0;
            ++used;
        }
        // Guarantee at least one val/test sample per class when requested.
        for (int s = 1; s < 3; ++s)
            if (ratios[std::size_t(s)] > 0.0 && want[std::size_t(s)] == 0 && want[0] > 1) {
                want[std::size_t(s)] += 1;
                want[0] -= 1;
            }
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s)
            for (std::size_t k = 0; k < want[std::size_t(s)]; ++k)
                m[idx[pos++]].split = Split(s);
    }
}

std::vector<const UtteranceRecord*> records_of_split(const Manifest& m, Split s) {
    std::vector<const UtteranceRecord*> out;
    for (const auto& r : m)
        if (r.split == s) out.push_back(&r);
    return out;
}

std::vector<std::string> corpus_vocabulary_texts() {
    std::vector<std::string> texts = transcript_templates();
    for (const auto& n : transcript_nouns()) texts.push_back(n);
    for (const auto& f : filler_words()) texts.push_back(f);
    for (const auto& [cls, kws] : keyword_map())
        for (const auto& k : kws) texts.push_back(k);
    return texts;
}

Tokenizer build_tokenizer(const Manifest& m, const std::vector<std::string>& prompt_texts,
                          int vocab_limit) {
    std::vector<std::string> texts;
    for (const auto& r : m)
        if (r.split == Split::train) texts.push_back(r.transcript);
    if (texts.empty()) throw DataError("build_tokenizer: no training transcripts");
    for (const auto& t : prompt_texts) texts.push_back(t);
    for (const auto& t : corpus_vocabulary_texts()) texts.push_back(t);
    return Tokenizer::build(texts, vocab_limit);
}

}  // namespace emosllm
