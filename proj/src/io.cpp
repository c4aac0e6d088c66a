// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stemflow::io {

namespace {

constexpr char kLatentMagic[4] = {'S', 'F', 'L', 'T'};
constexpr std::uint32_t kLatentVersion = 1;

template <class T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <class T>
void append_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.append(buf, sizeof(T));
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::io, "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(Errc::io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(Errc::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void append_u16(std::string& out, std::uint16_t v) { append_le(out, v); }
void append_u32(std::string& out, std::uint32_t v) { append_le(out, v); }
void append_f32(std::string& out, float v) { append_le(out, v); }
std::uint16_t load_u16(const char* p) { return load_le<std::uint16_t>(p); }
std::uint32_t load_u32(const char* p) { return load_le<std::uint32_t>(p); }
float load_f32(const char* p) { return load_le<float>(p); }

std::string encode_latent(const Matrix& latent) {
    std::string out;
    out.reserve(16 + static_cast<std::size_t>(latent.size()) * 4);
    out.append(kLatentMagic, 4);
    append_u32(out, static_cast<std::uint32_t>(latent.rows()));
    append_u32(out, static_cast<std::uint32_t>(latent.cols()));
    append_u32(out, kLatentVersion);
    for (Eigen::Index i = 0; i < latent.size(); ++i) append_f32(out, static_cast<float>(latent.data()[i]));
    return out;
}

Matrix decode_latent(std::string_view bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kLatentMagic, 4) != 0) {
        throw Error(Errc::io, "not a latent file");
    }
    const auto rows = load_u32(bytes.data() + 4);
    const auto cols = load_u32(bytes.data() + 8);
    const auto version = load_u32(bytes.data() + 12);
    if (version != kLatentVersion) throw Error(Errc::io, "unsupported latent file version");
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (bytes.size() != 16 + count * 4) throw Error(Errc::io, "latent file size mismatch");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < count; ++i) m.data()[i] = load_f32(bytes.data() + 16 + 4 * i);
    return m;
}

void write_latent(const std::filesystem::path& path, const Matrix& latent) {
    write_file_atomic(path, encode_latent(latent));
}

Matrix read_latent(const std::filesystem::path& path) { return decode_latent(read_file(path)); }

std::string encode_wav(std::span<const double> samples, int sample_rate) {
    const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
    std::string out;
    out.reserve(44 + data_bytes);
    out.append("RIFF");
    append_u32(out, 36 + data_bytes);
    out.append("WAVE");
    out.append("fmt ");
    append_u32(out, 16);
    append_u16(out, 1);  // PCM
    append_u16(out, 1);  // mono
    append_u32(out, static_cast<std::uint32_t>(sample_rate));
    append_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
    append_u16(out, 2);
    append_u16(out, 16);
    out.append("data");
    append_u32(out, data_bytes);
    for (double s : samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
        append_u16(out, static_cast<std::uint16_t>(q));
    }
    return out;
}

std::vector<double> decode_wav(std::string_view bytes, int* sample_rate) {
    auto fail = [] { throw Error(Errc::io, "malformed WAV data"); };
    if (bytes.size() < 12 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 4) != "WAVE") fail();
    std::size_t pos = 12;
    std::uint16_t channels = 0, bits = 0;
    std::uint32_t rate = 0;
    while (pos + 8 <= bytes.size()) {
        const auto id = bytes.substr(pos, 4);
        const auto size = load_u32(bytes.data() + pos + 4);
        pos += 8;
        if (pos + size > bytes.size()) fail();
        if (id == "fmt ") {
            if (size < 16 || load_u16(bytes.data() + pos) != 1) fail();
            channels = load_u16(bytes.data() + pos + 2);
            rate = load_u32(bytes.data() + pos + 4);
            bits = load_u16(bytes.data() + pos + 14);
        } else if (id == "data") {
            if (channels != 1 || bits != 16) throw Error(Errc::io, "only 16-bit mono WAV is supported");
            if (sample_rate) *sample_rate = static_cast<int>(rate);
            std::vector<double> out(size / 2);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out[i] = static_cast<std::int16_t>(load_u16(bytes.data() + pos + 2 * i)) / 32767.0;
            }
            return out;
        }
        pos += size + (size & 1u);
    }
    fail();
    return {};
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples) {
    write_file_atomic(path, encode_wav(samples));
}

std::vector<double> read_wav(const std::filesystem::path& path) { return decode_wav(read_file(path)); }

}  // namespace stemflow::io
