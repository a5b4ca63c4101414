#include "emosllm/audio_encoder.hpp"

#include <cmath>

#include "emosllm/kernels/kernels.hpp"

namespace emosllm {

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

constexpr double kPi = 3.14159265358979323846;
constexpr float kLogFloor = 1e-10f;

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace

EncoderKind encoder_kind_from_name(const std::string& name) {
    if (name == "spectral_standin") return EncoderKind::spectral_standin;
    if (name == "tiny_conv_transformer") return EncoderKind::tiny_conv_transformer;
    throw ConfigError("unknown encoder kind: " + name);
}

const char* encoder_kind_name(EncoderKind k) {
    return k == EncoderKind::spectral_standin ? "spectral_standin" : "tiny_conv_transformer";
}

SpectralStandin::SpectralStandin(const EncoderSpec& spec, int sample_rate)
    : spec_(spec), sample_rate_(sample_rate) {
    if (spec.d_ae < 4) throw ConfigError("SpectralStandin: d_ae must be >= 4");
    if (spec.frame_hop_s <= 0.0) throw ConfigError("SpectralStandin: frame_hop_s must be > 0");
    frame_len_ = int(std::lround(spec.frame_len_s * sample_rate));
    hop_ = int(std::lround(spec.frame_hop_s * sample_rate));
    if (frame_len_ < 2 || hop_ < 1) throw ConfigError("SpectralStandin: frame or hop too small");
    nfft_ = next_pow2(frame_len_);
    nbins_ = nfft_ / 2 + 1;

    window_.resize(std::size_t(frame_len_));
    for (int i = 0; i < frame_len_; ++i)
        window_[std::size_t(i)] =
            float(0.5 - 0.5 * std::cos(2.0 * kPi * i / (frame_len_ - 1)));

    dft_basis_ = Mat<float>(nfft_, 2 * nbins_);
    for (int n = 0; n < nfft_; ++n) {
        for (int b = 0; b < nbins_; ++b) {
            const double ang = 2.0 * kPi * n * b / nfft_;
            dft_basis_.at(n, b) = float(std::cos(ang));
            dft_basis_.at(n, nbins_ + b) = float(-std::sin(ang));
        }
    }

    // Triangular filters with centers evenly spaced on the mel scale.
    const double mel_lo = hz_to_mel(spec.fmin_hz);
    const double mel_hi = hz_to_mel(std::min(spec.fmax_hz, sample_rate / 2.0));
    std::vector<double> edges(std::size_t(spec.d_ae) + 2);
    for (int i = 0; i < spec.d_ae + 2; ++i)
        edges[std::size_t(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (spec.d_ae + 1));
    centers_hz_.assign(edges.begin() + 1, edges.end() - 1);

    filterbank_ = Mat<float>(nbins_, spec.d_ae);
    for (int b = 0; b < nbins_; ++b) {
        const double f = double(b) * sample_rate / nfft_;
        for (int c = 0; c < spec.d_ae; ++c) {
            const double lo = edges[std::size_t(c)];
            const double mid = edges[std::size_t(c) + 1];
            const double hi = edges[std::size_t(c) + 2];
            double wgt = 0.0;
            if (f > lo && f < hi)
                wgt = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            filterbank_.at(b, c) = float(wgt);
        }
    }
}

FeatureSequence SpectralStandin::encode(const Waveform& w, const std::string& source_id) const {
    if (w.sample_rate != sample_rate_)
        throw InvalidInputError("SpectralStandin: sample rate mismatch");
    const int n_samples = int(w.samples.size());
    const int n_frames = n_samples / hop_;
    if (n_frames < 1)
        throw InvalidInputError("SpectralStandin: waveform shorter than one hop");

    // Frames matrix (zero padded at the tail), windowed.
    Mat<float> frames(n_frames, nfft_);
    for (int t = 0; t < n_frames; ++t) {
        const int start = t * hop_;
        float* dst = frames.row(t);
        const int avail = std::min(frame_len_, n_samples - start);
        for (int i = 0; i < avail; ++i)
            dst[i] = w.samples[std::size_t(start + i)] * window_[std::size_t(i)];
    }

    Mat<float> spectrum(n_frames, 2 * nbins_);
    kernels::gemm_nn(frames.data(), dft_basis_.data(), spectrum.data(), n_frames, nfft_,
                     2 * nbins_, false);

    Mat<float> power(n_frames, nbins_);
    for (int t = 0; t < n_frames; ++t) {
        const float* re = spectrum.row(t);
        const float* im = re + nbins_;
        float* p = power.row(t);
        for (int b = 0; b < nbins_; ++b) p[b] = re[b] * re[b] + im[b] * im[b];
    }

    FeatureSequence out;
    out.source_id = source_id;
    out.values = Mat<float>(n_frames, spec_.d_ae);
    kernels::gemm_nn(power.data(), filterbank_.data(), out.values.data(), n_frames, nbins_,
                     spec_.d_ae, false);
    for (auto& v : out.values.a) v = std::log(kLogFloor + v);
    return out;
}

std::vector<int> TinyConvEncoder::param_ids() const {
    std::vector<int> ids{conv1_w, conv2_w, final_norm, recon_head, mask_embed};
    for (const auto& b : blocks)
        for (int id : {b.norm1, b.wq, b.wk, b.wv, b.wo, b.norm2, b.w_gate, b.w_up, b.w_down})
            ids.push_back(id);
    return ids;
}

template <typename T>
TinyConvEncoder init_tiny_encoder(const EncoderSpec& spec, int sample_rate, ParamStore<T>& store,
                                  Rng& rng) {
    if (spec.d_ae < 4) throw ConfigError("tiny encoder: d_ae must be >= 4");
    TinyConvEncoder enc;
    enc.spec = spec;
    enc.sample_rate = sample_rate;
    const int total_stride = std::max(2, int(std::lround(spec.frame_hop_s * sample_rate)));
    enc.s1 = 8;
    enc.k1 = 16;
    enc.s2 = std::max(1, total_stride / enc.s1);
    enc.k2 = 2 * enc.s2;

    const int c1 = spec.conv_channels;
    const int d = spec.d_ae;
    const auto wstd = [](int d_in) { return 1.0 / std::sqrt(double(d_in)); };

    enc.conv1_w = store.add("encoder.conv1.w", gaussian_mat<T>(enc.k1, c1, wstd(enc.k1), rng));
    enc.conv2_w =
        store.add("encoder.conv2.w", gaussian_mat<T>(enc.k2 * c1, d, wstd(enc.k2 * c1), rng));
    for (int l = 0; l < spec.attn_layers; ++l) {
        TinyConvEncoder::Block b;
        const std::string p = "encoder.block" + std::to_string(l) + ".";
        b.norm1 = store.add(p + "norm1", ones_mat<T>(1, d));
        b.wq = store.add(p + "wq", gaussian_mat<T>(d, d, wstd(d), rng));
        b.wk = store.add(p + "wk", gaussian_mat<T>(d, d, wstd(d), rng));
        b.wv = store.add(p + "wv", gaussian_mat<T>(d, d, wstd(d), rng));
        b.wo = store.add(p + "wo", gaussian_mat<T>(d, d, wstd(d), rng));
        b.norm2 = store.add(p + "norm2", ones_mat<T>(1, d));
        b.w_gate = store.add(p + "w_gate", gaussian_mat<T>(d, 2 * d, wstd(d), rng));
        b.w_up = store.add(p + "w_up", gaussian_mat<T>(d, 2 * d, wstd(d), rng));
        b.w_down = store.add(p + "w_down", gaussian_mat<T>(2 * d, d, wstd(2 * d), rng));
        enc.blocks.push_back(b);
    }
    enc.final_norm = store.add("encoder.final_norm", ones_mat<T>(1, d));
    enc.recon_head = store.add("encoder.recon_head", gaussian_mat<T>(d, d, wstd(d), rng));
    enc.mask_embed = store.add("encoder.mask_embed", gaussian_mat<T>(1, d, 0.02, rng));
    for (int id : enc.param_ids()) store[id].trainable = true;
    return enc;
}

namespace {

template <typename T>
typename Tape<T>::Ref tiny_conv_stack(const TinyConvEncoder& enc, Tape<T>& tape,
                                      ParamStore<T>& store, const Waveform& w,
                                      std::vector<typename Tape<T>::Ref>* leaves) {
    const int min_len = enc.k1 + enc.s1 * (enc.k2 - 1);
    if (int(w.samples.size()) < min_len)
        throw InvalidInputError("tiny encoder: waveform shorter than one frame");
    Mat<T> x(int(w.samples.size()), 1);
    for (std::size_t i = 0; i < w.samples.size(); ++i) x.a[i] = T(w.samples[i]);
    auto in = tape.constant(std::move(x));
    const auto leaf = [&](int pid) {
        auto r = tape.leaf(&store[pid].value, pid, store[pid].trainable);
        if (leaves) leaves->push_back(r);
        return r;
    };
    auto h = tape.matmul_nn(tape.unfold_rows(in, enc.k1, enc.s1), leaf(enc.conv1_w));
    h = tape.silu(h);
    h = tape.matmul_nn(tape.unfold_rows(h, enc.k2, enc.s2), leaf(enc.conv2_w));
    h = tape.silu(h);
    return h;
}

template <typename T>
typename Tape<T>::Ref tiny_attn_stack(const TinyConvEncoder& enc, Tape<T>& tape,
                                      ParamStore<T>& store, typename Tape<T>::Ref h) {
    const auto leaf = [&](int pid) {
        return tape.leaf(&store[pid].value, pid, store[pid].trainable);
    };
    for (const auto& b : enc.blocks) {
        auto n1 = tape.rmsnorm(h, leaf(b.norm1));
        auto att = tape.attention(tape.matmul_nn(n1, leaf(b.wq)), tape.matmul_nn(n1, leaf(b.wk)),
                                  tape.matmul_nn(n1, leaf(b.wv)), enc.spec.attn_heads, false);
        h = tape.add(h, tape.matmul_nn(att, leaf(b.wo)));
        auto n2 = tape.rmsnorm(h, leaf(b.norm2));
        auto gated = tape.mul(tape.silu(tape.matmul_nn(n2, leaf(b.w_gate))),
                              tape.matmul_nn(n2, leaf(b.w_up)));
        h = tape.add(h, tape.matmul_nn(gated, leaf(b.w_down)));
    }
    return tape.rmsnorm(h, leaf(enc.final_norm));
}

}  // namespace

template <typename T>
typename Tape<T>::Ref tiny_encoder_forward(const TinyConvEncoder& enc, Tape<T>& tape,
                                           ParamStore<T>& store, const Waveform& w) {
    auto h = tiny_conv_stack(enc, tape, store, w, nullptr);
    return tiny_attn_stack(enc, tape, store, h);
}

template <typename T>
typename Tape<T>::Ref tiny_encoder_mask_loss(const TinyConvEncoder& enc, Tape<T>& tape,
                                             ParamStore<T>& store, const Waveform& w,
                                             double mask_rate, Rng& rng) {
    auto conv = tiny_conv_stack(enc, tape, store, w, nullptr);
    const Mat<T>& cv = tape.val(conv);
    const int n = cv.rows;
    const int d = cv.cols;

    std::vector<int> masked;
    for (int t = 0; t < n; ++t)
        if (rng.uniform() < mask_rate) masked.push_back(t);
    if (masked.empty()) masked.push_back(0);
    Mat<T> keep(n, d);
    keep.fill(T(1));
    Mat<T> mask_col(n, 1);
    for (int t : masked) {
        for (int j = 0; j < d; ++j) keep.at(t, j) = T(0);
        mask_col.at(t, 0) = T(1);
    }

    Mat<T> target = cv;  // reconstruction target, detached from the graph
    auto kept = tape.mul(conv, tape.constant(std::move(keep)));
    auto mfill = tape.matmul_nn(tape.constant(std::move(mask_col)),
                                tape.leaf(&store[enc.mask_embed].value, enc.mask_embed,
                                          store[enc.mask_embed].trainable));
    auto h = tape.add(kept, mfill);
    h = tiny_attn_stack(enc, tape, store, h);
    auto pred = tape.matmul_nn(h, tape.leaf(&store[enc.recon_head].value, enc.recon_head,
                                            store[enc.recon_head].trainable));
    return tape.mse_rows(pred, std::move(target), std::move(masked));
}

template TinyConvEncoder init_tiny_encoder<float>(const EncoderSpec&, int, ParamStore<float>&, Rng&);
template TinyConvEncoder init_tiny_encoder<double>(const EncoderSpec&, int, ParamStore<double>&, Rng&);
template Tape<float>::Ref tiny_encoder_forward<float>(const TinyConvEncoder&, Tape<float>&,
                                                      ParamStore<float>&, const Waveform&);
template Tape<double>::Ref tiny_encoder_forward<double>(const TinyConvEncoder&, Tape<double>&,
                                                        ParamStore<double>&, const Waveform&);
template Tape<float>::Ref tiny_encoder_mask_loss<float>(const TinyConvEncoder&, Tape<float>&,
                                                        ParamStore<float>&, const Waveform&,
                                                        double, Rng&);
template Tape<double>::Ref tiny_encoder_mask_loss<double>(const TinyConvEncoder&, Tape<double>&,
                                                          ParamStore<double>&, const Waveform&,
                                                          double, Rng&);

}  // namespace emosllm
