// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stemflow/common.hpp"

namespace stemflow::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

void append_u16(std::string& out, std::uint16_t v);
void append_u32(std::string& out, std::uint32_t v);
void append_f32(std::string& out, float v);
std::uint16_t load_u16(const char* p);
std::uint32_t load_u32(const char* p);
float load_f32(const char* p);

/// Latent file: 16-byte header {"SFLT", T, D, version} then row-major
/// little-endian float32 frames.
std::string encode_latent(const Matrix& latent);
Matrix decode_latent(std::string_view bytes);
void write_latent(const std::filesystem::path& path, const Matrix& latent);
Matrix read_latent(const std::filesystem::path& path);

/// 16-bit PCM mono WAV at kSampleRate. Samples are clamped to [-1, 1].
std::string encode_wav(std::span<const double> samples, int sample_rate = kSampleRate);
std::vector<double> decode_wav(std::string_view bytes, int* sample_rate = nullptr);
void write_wav(const std::filesystem::path& path, std::span<const double> samples);
std::vector<double> read_wav(const std::filesystem::path& path);

}  // namespace stemflow::io
