// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace stemflow {

// Toy audio format: mono, 1536 samples/s, 128-sample hop, 12 latent frames/s.
inline constexpr int kSampleRate = 1536;
inline constexpr int kHop = 128;
inline constexpr int kFrameRate = kSampleRate / kHop;
inline constexpr int kLatentDim = 8;
inline constexpr int kActivityDim = 16;
inline constexpr int kNumStemTypes = 6;
inline constexpr int kNumStyles = 16;
inline constexpr std::array<int, 7> kTempoGrid = {60, 75, 90, 105, 120, 135, 150};

/// Row-major dynamic matrix. Latents are T x D with one frame per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

/// Builds an independent generator for a named sub-stream of `seed`.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream);

enum class Errc {
    invalid_argument,
    io,
    numeric,
    not_found,
    conflict,
    internal,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

enum class StemType : std::uint8_t { drums = 0, bass, keys, guitar, pad, lead };

std::string_view stem_type_name(StemType type);
std::optional<StemType> parse_stem_type(std::string_view name);
/// Parses or throws Errc::invalid_argument.
StemType stem_type_from_string(std::string_view name);
std::vector<StemType> parse_stem_list(std::string_view comma_separated);

/// Index of `tempo_bpm` in kTempoGrid, or nullopt when off-grid.
std::optional<int> tempo_bucket(int tempo_bpm);

/// Latent frames per beat: round(60 * 12 / tempo).
int frames_per_beat(int tempo_bpm);

/// Per-frame binary activity, 1 = active.
using ActivityMask = std::vector<std::uint8_t>;

std::string mask_to_string(const ActivityMask& mask);
ActivityMask mask_from_string(std::string_view bits);

struct StemLatent {
    Matrix frames;  // T x kLatentDim

    int num_frames() const { return static_cast<int>(frames.rows()); }
};

struct StemWaveform {
    std::vector<double> samples;
    std::optional<StemType> stem_type;  // empty for mixes

    int num_frames() const { return static_cast<int>(samples.size()) / kHop; }
};

inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

}  // namespace stemflow
