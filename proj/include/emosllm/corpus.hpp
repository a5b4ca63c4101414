#pragma once

// Synthetic corpus generation and dataset plumbing: harmonic-tone "voices"
// with controlled pitch/loudness/perturbation, class-correlated transcript
// keywords, JSONL manifests, stratified splits, and tokenizer construction.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emosllm/emotions.hpp"
#include "emosllm/paralinguistics.hpp"
#include "emosllm/tokenizer.hpp"
#include "emosllm/wav_io.hpp"

namespace emosllm {

enum class Split { train, val, test };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct CorpusSpec {
    int n_utterances = 2000;
    std::vector<EmotionCode> classes = {EmotionCode::A, EmotionCode::S, EmotionCode::H,
                                        EmotionCode::N};
    std::vector<double> class_probs;  // empty = uniform
    double dur_min_s = 0.6;
    double dur_max_s = 1.1;
    int sample_rate = 16000;
    std::uint64_t seed = 1;
    double cue_strength = 0.9;

    std::uint64_t content_hash() const;
};

struct GenParams {
    double f0 = 0.0;
    double amplitude = 0.0;
    double jitter_level = 0.0;
    double shimmer_level = 0.0;
    bool keyword_on = false;
    std::string keyword;
};

struct UtteranceRecord {
    std::string id;
    std::string wav_path;  // relative to the manifest directory
    std::string transcript;
    EmotionCode emotion = EmotionCode::N;
    paralinguistics::Gender gender = paralinguistics::Gender::unknown;
    Split split = Split::train;
    GenParams gen;
};

using Manifest = std::vector<UtteranceRecord>;

// Acoustic profile of one emotion class: the band the cue draws from when it
// fires. Exposed so the rule-based oracle can share the band definitions.
struct ClassProfile {
    double f0_lo, f0_hi;
    double amp_lo, amp_hi;
    double jitter_lo, jitter_hi;
};
const ClassProfile& class_profile(EmotionCode c);
const std::vector<std::string>& class_keywords(EmotionCode c);
std::optional<EmotionCode> keyword_class(const std::string& transcript,
                                         const std::vector<EmotionCode>& classes);

// Synthesizes one utterance waveform from its generation parameters.
Waveform synthesize_utterance(const GenParams& gen, double duration_s, int sample_rate,
                              std::uint64_t seed);

struct GenerateResult {
    Manifest manifest;
    bool up_to_date = false;  // outputs already present with matching checksums
};

// Writes <out_dir>/wav/*.wav, <out_dir>/manifest.jsonl and
// <out_dir>/corpus.state.json. Re-running with an unchanged spec verifies the
// recorded checksums and skips the rewrite.
GenerateResult generate_corpus(const CorpusSpec& spec, const std::string& out_dir);

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

// Stratified by emotion class; ratios must sum to 1.
void split_manifest(Manifest& m, const std::array<double, 3>& ratios, std::uint64_t seed);

std::vector<const UtteranceRecord*> records_of_split(const Manifest& m, Split s);

// Tokenizer over training transcripts plus all prompt/template text.
Tokenizer build_tokenizer(const Manifest& m, const std::vector<std::string>& prompt_texts,
                          int vocab_limit);

// Every text a desk-scale corpus can produce (all transcript template words
// and keywords); used to keep the tokenizer total.
std::vector<std::string> corpus_vocabulary_texts();

}  // namespace emosllm
