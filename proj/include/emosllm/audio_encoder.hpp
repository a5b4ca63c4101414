#pragma once

// Pluggable audio feature extractors. The spectral stand-in is a
// deterministic, parameter-free log filterbank; the tiny conv-transformer is
// trainable from scratch on a masked-frame reconstruction proxy and is then
// frozen for the rest of the pipeline.

#include <string>
#include <vector>

#include "emosllm/autograd.hpp"
#include "emosllm/wav_io.hpp"

namespace emosllm {

enum class EncoderKind { spectral_standin, tiny_conv_transformer };

struct EncoderSpec {
    EncoderKind kind = EncoderKind::spectral_standin;
    int d_ae = 64;
    double frame_hop_s = 0.010;
    double frame_len_s = 0.025;
    double fmin_hz = 50.0;
    double fmax_hz = 6400.0;
    std::string identifier = "standin-mel64";
    // tiny encoder only
    int conv_channels = 32;
    int attn_layers = 2;
    int attn_heads = 4;
};

struct FeatureSequence {
    Mat<float> values;  // n x d_ae
    std::string source_id;
};

// Triangular mel-spaced filterbank over short-time power spectra.
class SpectralStandin {
public:
    explicit SpectralStandin(const EncoderSpec& spec, int sample_rate);

    FeatureSequence encode(const Waveform& w, const std::string& source_id = {}) const;

    // Center frequency (Hz) of each filter; exposed for tests.
    const std::vector<double>& centers_hz() const { return centers_hz_; }

private:
    EncoderSpec spec_;
    int sample_rate_;
    int frame_len_;
    int hop_;
    int nfft_;
    int nbins_;
    std::vector<float> window_;
    Mat<float> dft_basis_;     // nfft x 2*nbins (cos | sin)
    Mat<float> filterbank_;    // nbins x d_ae
    std::vector<double> centers_hz_;
};

// Strided 1-D convolutions followed by bidirectional self-attention blocks.
struct TinyConvEncoder {
    EncoderSpec spec;
    int sample_rate = 16000;
    int k1 = 0, s1 = 0, k2 = 0, s2 = 0;

    // parameter ids in the owning store
    int conv1_w = -1, conv2_w = -1;
    struct Block {
        int norm1 = -1, wq = -1, wk = -1, wv = -1, wo = -1;
        int norm2 = -1, w_gate = -1, w_up = -1, w_down = -1;
    };
    std::vector<Block> blocks;
    int final_norm = -1;
    int recon_head = -1;   // used only by the pretraining proxy
    int mask_embed = -1;

    std::vector<int> param_ids() const;
};

template <typename T>
TinyConvEncoder init_tiny_encoder(const EncoderSpec& spec, int sample_rate, ParamStore<T>& store,
                                  Rng& rng);

// Forward to features (rows = frames, cols = d_ae).
template <typename T>
typename Tape<T>::Ref tiny_encoder_forward(const TinyConvEncoder& enc, Tape<T>& tape,
                                           ParamStore<T>& store, const Waveform& w);

// Masked-frame reconstruction loss for self-supervised pretraining.
template <typename T>
typename Tape<T>::Ref tiny_encoder_mask_loss(const TinyConvEncoder& enc, Tape<T>& tape,
                                             ParamStore<T>& store, const Waveform& w,
                                             double mask_rate, Rng& rng);

// Marks a parameter group frozen: the optimizer will never step it.
// Idempotent.
template <typename T>
void freeze(ParamStore<T>& store, const std::vector<int>& ids) {
    for (int id : ids) store[id].trainable = false;
}

template <typename T>
void unfreeze(ParamStore<T>& store, const std::vector<int>& ids) {
    for (int id : ids) store[id].trainable = true;
}

EncoderKind encoder_kind_from_name(const std::string& name);
const char* encoder_kind_name(EncoderKind k);

}  // namespace emosllm
