#include "emosllm/paralinguistics.hpp"

#include <algorithm>
#include <cmath>

#include "emosllm/kernels/kernels.hpp"
#include "emosllm/util.hpp"

namespace emosllm::paralinguistics {

const char* gender_name(Gender g) {
    switch (g) {
        case Gender::male: return "male";
        case Gender::female: return "female";
        default: return "unknown";
    }
}

Gender gender_from_name(const std::string& name) {
    if (name == "male") return Gender::male;
    if (name == "female") return Gender::female;
    return Gender::unknown;
}

const char* feature_name(Feature f) {
    switch (f) {
        case Feature::loudness: return "loudness";
        case Feature::pitch: return "pitch";
        case Feature::pitch_range: return "pitch range";
        case Feature::jitter: return "jitter";
        case Feature::shimmer: return "shimmer";
    }
    return "?";
}

const char* bin_label_name(BinLabel l) {
    switch (l) {
        case BinLabel::low: return "low";
        case BinLabel::medium: return "medium";
        case BinLabel::high: return "high";
    }
    return "?";
}

double compute_loudness(const Waveform& w) {
    if (w.samples.empty()) throw InvalidInputError("compute_loudness: empty waveform");
    const double energy =
        kernels::dot(w.samples.data(), w.samples.data(), w.samples.size());
    return std::sqrt(energy / double(w.samples.size()));
}

namespace {

// Normalized autocorrelation of one frame at integer lag, using prefix sums
// of squared samples for the two denominator windows.
double nacf(const float* x, int len, int lag, const std::vector<double>& sqsum) {
    const int overlap = len - lag;
    const double num = kernels::dot(x, x + lag, std::size_t(overlap));
    const double e0 = sqsum[std::size_t(overlap)] - sqsum[0];
    const double e1 = sqsum[std::size_t(len)] - sqsum[std::size_t(lag)];
    const double denom = std::sqrt(e0 * e1);
    if (denom <= 1e-12) return 0.0;
    return num / denom;
}

}  // namespace

PitchTrack estimate_pitch_track(const Waveform& w, const PitchParams& p) {
    if (w.sample_rate <= 0 || w.samples.empty())
        throw InvalidInputError("estimate_pitch_track: invalid waveform");
    if (!(p.f0_min > 0.0 && p.f0_min < p.f0_max && p.f0_max < w.sample_rate / 2.0))
        throw InvalidInputError("estimate_pitch_track: need 0 < f0_min < f0_max < nyquist");
    const int sr = w.sample_rate;
    const int frame_len = int(std::lround(p.frame_len_s * sr));
    const int hop = int(std::lround(p.hop_s * sr));
    if (frame_len < 2 || hop < 1)
        throw InvalidInputError("estimate_pitch_track: frame/hop too small");
    if (double(frame_len) < 2.0 * sr / p.f0_min)
        throw InvalidInputError("estimate_pitch_track: frame shorter than 2 periods of f0_min");
    if (int(w.samples.size()) < frame_len)
        throw InvalidInputError("estimate_pitch_track: waveform shorter than one frame");

    const int lag_min = std::max(2, int(std::floor(sr / p.f0_max)));
    const int lag_max = std::min(frame_len - 1, int(std::ceil(sr / p.f0_min)));

    const int n_frames = 1 + (int(w.samples.size()) - frame_len) / hop;
    PitchTrack track;
    track.reserve(std::size_t(n_frames));

    std::vector<float> frame(static_cast<std::size_t>(frame_len), 0.0f);
    std::vector<double> sqsum(static_cast<std::size_t>(frame_len) + 1, 0.0);

    for (int t = 0; t < n_frames; ++t) {
        const float* src = w.samples.data() + std::size_t(t) * hop;
        double mean = 0.0;
        for (int i = 0; i < frame_len; ++i) mean += src[i];
        mean /= frame_len;
        for (int i = 0; i < frame_len; ++i) frame[std::size_t(i)] = float(src[i] - mean);

        sqsum[0] = 0.0;
        for (int i = 0; i < frame_len; ++i)
            sqsum[std::size_t(i) + 1] =
                sqsum[std::size_t(i)] + double(frame[std::size_t(i)]) * frame[std::size_t(i)];

        PitchPoint pt;
        pt.frame = t;
        if (sqsum[std::size_t(frame_len)] <= 1e-10) {
            track.push_back(pt);
            continue;
        }

        int best_lag = -1;
        double best_r = -2.0;
        for (int lag = lag_min; lag <= lag_max; ++lag) {
            const double r = nacf(frame.data(), frame_len, lag, sqsum);
            if (r > best_r) {
                best_r = r;
                best_lag = lag;
            }
        }
        if (best_lag < 0 || best_r < p.voicing_threshold) {
            track.push_back(pt);
            continue;
        }

        // Prefer the shortest period (sub-multiple of the best lag) whose
        // peak is comparable; this counters octave-down errors from the
        // autocorrelation's repeats at multiples of the true period.
        int chosen = best_lag;
        for (int k = best_lag / lag_min; k >= 2; --k) {
            const int center = int(std::lround(double(best_lag) / k));
            int local = -1;
            double local_r = -2.0;
            for (int lag = std::max(lag_min, center - 2);
                 lag <= std::min(lag_max, center + 2); ++lag) {
                const double r = nacf(frame.data(), frame_len, lag, sqsum);
                if (r > local_r) {
                    local_r = r;
                    local = lag;
                }
            }
            if (local > 0 && local_r >= 0.9 * best_r) {
                chosen = local;
                break;
            }
        }

        // Parabolic refinement around the chosen integer lag.
        double lag_refined = double(chosen);
        if (chosen > lag_min && chosen < lag_max) {
            const double rm = nacf(frame.data(), frame_len, chosen - 1, sqsum);
            const double r0 = nacf(frame.data(), frame_len, chosen, sqsum);
            const double rp = nacf(frame.data(), frame_len, chosen + 1, sqsum);
            const double denom = rm - 2.0 * r0 + rp;
            if (std::abs(denom) > 1e-12) {
                const double delta = 0.5 * (rm - rp) / denom;
                if (std::abs(delta) <= 1.0) lag_refined += delta;
            }
        }

        pt.voiced = true;
        pt.f0 = std::clamp(double(sr) / lag_refined, p.f0_min, p.f0_max);
        track.push_back(pt);
    }
    return track;
}

std::optional<PitchStats> compute_pitch_stats(const PitchTrack& track) {
    double sum = 0.0, lo = 0.0, hi = 0.0;
    int n = 0;
    for (const auto& pt : track) {
        if (!pt.voiced) continue;
        if (n == 0) {
            lo = hi = pt.f0;
        } else {
            lo = std::min(lo, pt.f0);
            hi = std::max(hi, pt.f0);
        }
        sum += pt.f0;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return PitchStats{sum / n, hi - lo};
}

std::optional<double> compute_jitter(const PitchTrack& track) {
    double diff_sum = 0.0, period_sum = 0.0;
    int diff_n = 0, period_n = 0;
    std::size_t i = 0;
    while (i < track.size()) {
        if (!track[i].voiced) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < track.size() && track[j + 1].voiced &&
               track[j + 1].frame == track[j].frame + 1)
            ++j;
        if (j > i) {
            for (std::size_t t = i; t <= j; ++t) {
                period_sum += 1.0 / track[t].f0;
                ++period_n;
            }
            for (std::size_t t = i; t < j; ++t) {
                diff_sum += std::abs(1.0 / track[t].f0 - 1.0 / track[t + 1].f0);
                ++diff_n;
            }
        }
        i = j + 1;
    }
    if (diff_n < 1) return std::nullopt;
    const double mean_period = period_sum / period_n;
    if (mean_period <= 0.0) return std::nullopt;
    return (diff_sum / diff_n) / mean_period;
}

std::optional<double> compute_shimmer(const Waveform& w, const PitchTrack& track,
                                      const PitchParams& p) {
    if (w.sample_rate <= 0) throw InvalidInputError("compute_shimmer: invalid waveform");
    const int sr = w.sample_rate;
    const int hop = int(std::lround(p.hop_s * sr));
    const int frame_len = int(std::lround(p.frame_len_s * sr));

    double diff_sum = 0.0, amp_sum = 0.0;
    int diff_n = 0, amp_n = 0;

    std::size_t i = 0;
    while (i < track.size()) {
        if (!track[i].voiced) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < track.size() && track[j + 1].voiced &&
               track[j + 1].frame == track[j].frame + 1)
            ++j;
        // Voiced run [i, j]: walk cycle by cycle, reading the local period
        // from the nearest frame of the run.
        const double run_start = double(track[i].frame) * hop;
        const double run_end =
            std::min(double(track[j].frame) * hop + frame_len, double(w.samples.size()));
        double pos = run_start;
        std::vector<double> peaks;
        while (true) {
            const int frame_idx = std::clamp(int((pos - run_start) / hop) + int(track[i].frame),
                                             track[i].frame, track[j].frame);
            const auto& pt = track[std::size_t(frame_idx - track[i].frame) + i];
            const double period = double(sr) / pt.f0;
            if (pos + period > run_end) break;
            double peak = 0.0;
            const int a = int(pos);
            const int b = int(pos + period);
            for (int s = a; s < b && s < int(w.samples.size()); ++s)
                peak = std::max(peak, double(std::abs(w.samples[std::size_t(s)])));
            peaks.push_back(peak);
            pos += period;
        }
        for (std::size_t c = 0; c + 1 < peaks.size(); ++c) {
            diff_sum += std::abs(peaks[c] - peaks[c + 1]);
            ++diff_n;
        }
        for (double a : peaks) {
            amp_sum += a;
            ++amp_n;
        }
        i = j + 1;
    }
    if (diff_n < 1 || amp_n < 2) return std::nullopt;
    const double mean_amp = amp_sum / amp_n;
    if (mean_amp <= 0.0) return std::nullopt;
    return (diff_sum / diff_n) / mean_amp;
}

ParalinguisticVector extract(const Waveform& w, Gender gender, const PitchParams& p) {
    ParalinguisticVector v;
    v.loudness = compute_loudness(w);
    v.gender = gender;
    const PitchTrack track = estimate_pitch_track(w, p);
    if (auto stats = compute_pitch_stats(track)) {
        v.mean_pitch = stats->mean_pitch;
        v.pitch_range = stats->pitch_range;
    }
    v.jitter = compute_jitter(track);
    v.shimmer = compute_shimmer(w, track, p);
    return v;
}

double interpolated_percentile(std::vector<double> values, double p) {
    if (values.empty()) throw InvalidInputError("percentile of empty set");
    std::sort(values.begin(), values.end());
    const double h = p * double(values.size() - 1);
    const auto lo = std::size_t(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = h - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

TertileBins fit_tertile_bins(const std::array<std::vector<double>, kFeatureCount>& training_values) {
    TertileBins bins;
    for (int f = 0; f < kFeatureCount; ++f) {
        const auto& vals = training_values[std::size_t(f)];
        if (vals.size() < 3)
            throw InvalidInputError(std::string("fit_tertile_bins: need >= 3 values for ") +
                                    feature_name(Feature(f)));
        bins.per_feature[std::size_t(f)].t_low = interpolated_percentile(vals, 1.0 / 3.0);
        bins.per_feature[std::size_t(f)].t_high = interpolated_percentile(vals, 2.0 / 3.0);
        bins.fitted_on[std::size_t(f)] = int(vals.size());
    }
    return bins;
}

BinLabel bin_feature(double value, const Thresholds& t) {
    if (value < t.t_low) return BinLabel::low;
    if (value < t.t_high) return BinLabel::medium;
    return BinLabel::high;
}

BinnedFeatures bin_vector(const ParalinguisticVector& v, const TertileBins& bins) {
    BinnedFeatures out;
    out.gender = v.gender;
    const auto set = [&](Feature f, const std::optional<double>& val) {
        if (val)
            out.labels[std::size_t(int(f))] = bin_feature(*val, bins.per_feature[std::size_t(int(f))]);
    };
    out.labels[0] = bin_feature(v.loudness, bins.per_feature[0]);
    set(Feature::pitch, v.mean_pitch);
    set(Feature::pitch_range, v.pitch_range);
    set(Feature::jitter, v.jitter);
    set(Feature::shimmer, v.shimmer);
    return out;
}

}  // namespace emosllm::paralinguistics
