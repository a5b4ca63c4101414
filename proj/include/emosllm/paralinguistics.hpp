#pragma once

// Paralinguistic feature extraction: utterance loudness, framewise pitch by
// normalized autocorrelation, pitch statistics, cycle-level jitter and
// shimmer, and tertile binning of training distributions.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "emosllm/wav_io.hpp"

namespace emosllm::paralinguistics {

enum class Gender { male, female, unknown };

const char* gender_name(Gender g);
Gender gender_from_name(const std::string& name);

struct PitchParams {
    double frame_len_s = 0.040;
    double hop_s = 0.010;
    double f0_min = 60.0;
    double f0_max = 500.0;
    double voicing_threshold = 0.45;
};

struct PitchPoint {
    int frame = 0;
    double f0 = 0.0;  // Hz, valid only when voiced
    bool voiced = false;
};

using PitchTrack = std::vector<PitchPoint>;

struct PitchStats {
    double mean_pitch = 0.0;
    double pitch_range = 0.0;
};

struct ParalinguisticVector {
    double loudness = 0.0;
    std::optional<double> mean_pitch;
    std::optional<double> pitch_range;
    std::optional<double> jitter;
    std::optional<double> shimmer;
    Gender gender = Gender::unknown;
};

double compute_loudness(const Waveform& w);
PitchTrack estimate_pitch_track(const Waveform& w, const PitchParams& p = {});
std::optional<PitchStats> compute_pitch_stats(const PitchTrack& track);
std::optional<double> compute_jitter(const PitchTrack& track);
std::optional<double> compute_shimmer(const Waveform& w, const PitchTrack& track,
                                      const PitchParams& p = {});

ParalinguisticVector extract(const Waveform& w, Gender gender, const PitchParams& p = {});

// The five binnable features, in canonical order.
enum class Feature { loudness = 0, pitch, pitch_range, jitter, shimmer };
inline constexpr int kFeatureCount = 5;
const char* feature_name(Feature f);  // display names used in prompts

enum class BinLabel { low, medium, high };
const char* bin_label_name(BinLabel l);

struct Thresholds {
    double t_low = 0.0;
    double t_high = 0.0;
};

struct TertileBins {
    std::array<Thresholds, kFeatureCount> per_feature{};
    std::array<int, kFeatureCount> fitted_on{};
};

// t_low / t_high are the 33.33rd / 66.67th percentiles with linear
// interpolation between order statistics. Requires >= 3 values per feature.
TertileBins fit_tertile_bins(const std::array<std::vector<double>, kFeatureCount>& training_values);

// value < t_low -> low; t_low <= value < t_high -> medium; value >= t_high -> high.
BinLabel bin_feature(double value, const Thresholds& t);

struct BinnedFeatures {
    std::array<std::optional<BinLabel>, kFeatureCount> labels{};
    Gender gender = Gender::unknown;
};

BinnedFeatures bin_vector(const ParalinguisticVector& v, const TertileBins& bins);

// Interpolated percentile (0 <= p <= 1) used by the bin fitter; exposed for
// reuse and testing.
double interpolated_percentile(std::vector<double> values, double p);

}  // namespace emosllm::paralinguistics
