// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "stemflow/common.hpp"

namespace stemflow::codec {

/// Fixed orthonormal analysis basis: kLatentDim rows of kHop samples each.
/// Rows are DCT-II atoms at fixed frequency indices, so the basis is the same
/// for every build and every process.
const Eigen::Matrix<double, kLatentDim, kHop, Eigen::RowMajor>& basis();

/// Projects each 128-sample hop onto the basis. Throws when the sample count
/// is not a multiple of kHop.
StemLatent encode(std::span<const double> samples);
inline StemLatent encode(const StemWaveform& w) { return encode(w.samples); }

/// Expands each latent frame through the transposed basis.
StemWaveform decode(const StemLatent& latent);

/// RMS of every 128-sample frame.
std::vector<double> frame_rms(std::span<const double> samples);

/// Frame is active iff its RMS >= 10^(cutoff_db/20) relative to full scale.
ActivityMask detect_activity(std::span<const double> samples, double cutoff_db = -60.0);
inline ActivityMask detect_activity(const StemWaveform& w, double cutoff_db = -60.0) {
    return detect_activity(w.samples, cutoff_db);
}

double rms(std::span<const double> samples);

/// Sample-wise weighted sum. No clipping.
StemWaveform mix(std::span<const StemWaveform> stems, std::span<const double> gains);
StemWaveform mix(std::span<const StemWaveform> stems);  // unity gains

/// Scales by one global gain so the overall RMS hits target_dbfs.
/// Throws on an all-zero input.
StemWaveform normalize_mix(const StemWaveform& w, double target_dbfs = -16.0);

/// Latent-domain sum; equal to encode(mix(decoded stems)) by linearity.
Matrix sum_latents(std::span<const Matrix* const> latents);

}  // namespace stemflow::codec
