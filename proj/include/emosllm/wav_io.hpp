#pragma once

#include <string>
#include <vector>

namespace emosllm {

struct Waveform {
    std::vector<float> samples;  // amplitudes, nominally in [-1, 1]
    int sample_rate = 16000;

    double duration_s() const {
        return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0;
    }
};

// Canonical storage: RIFF/WAVE, 16-bit linear PCM, single channel.
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

}  // namespace emosllm
