#include "emosllm/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "emosllm/util.hpp"

namespace emosllm {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
    s.push_back(char(v & 0xff));
    s.push_back(char((v >> 8) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(s[off + std::size_t(i)]);
    return v;
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
    return std::uint16_t(std::uint8_t(s[off]) | (std::uint8_t(s[off + 1]) << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
    if (w.sample_rate <= 0) throw InvalidInputError("write_wav: sample_rate must be positive");
    const std::uint32_t n = std::uint32_t(w.samples.size());
    const std::uint32_t data_bytes = n * 2;
    std::string out;
    out.reserve(44 + data_bytes);
    out += "RIFF";
    put_u32(out, 36 + data_bytes);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, std::uint32_t(w.sample_rate));
    put_u32(out, std::uint32_t(w.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out += "data";
    put_u32(out, data_bytes);
    for (float x : w.samples) {
        const float c = std::clamp(x, -1.0f, 1.0f);
        const auto q = std::int16_t(std::lrintf(c * 32767.0f));
        out.push_back(char(q & 0xff));
        out.push_back(char((q >> 8) & 0xff));
    }
    write_text_file(path, out);
}

Waveform read_wav(const std::string& path) {
    const std::string s = read_text_file(path);
    if (s.size() < 44 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0)
        throw DataError("not a RIFF/WAVE file: " + path);
    std::size_t off = 12;
    int sample_rate = 0;
    bool fmt_seen = false;
    Waveform w;
    while (off + 8 <= s.size()) {
        const std::string id = s.substr(off, 4);
        const std::uint32_t len = get_u32(s, off + 4);
        off += 8;
        if (off + len > s.size()) throw DataError("truncated chunk in " + path);
        if (id == "fmt ") {
            if (len < 16) throw DataError("bad fmt chunk in " + path);
            const auto format = get_u16(s, off);
            const auto channels = get_u16(s, off + 2);
            sample_rate = int(get_u32(s, off + 4));
            const auto bits = get_u16(s, off + 14);
            if (format != 1 || channels != 1 || bits != 16)
                throw DataError("unsupported WAV encoding (need PCM16 mono): " + path);
            fmt_seen = true;
        } else if (id == "data") {
            if (!fmt_seen) throw DataError("data chunk before fmt in " + path);
            w.sample_rate = sample_rate;
            w.samples.resize(len / 2);
            for (std::size_t i = 0; i < w.samples.size(); ++i) {
                const auto lo = std::uint8_t(s[off + 2 * i]);
                const auto hi = std::uint8_t(s[off + 2 * i + 1]);
                const auto q = std::int16_t(lo | (hi << 8));
                w.samples[i] = float(q) / 32767.0f;
            }
            return w;
        }
        off += len + (len & 1);
    }
    throw DataError("no data chunk in " + path);
}

}  // namespace emosllm
