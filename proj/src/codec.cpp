// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/codec.hpp"

#include <cmath>
#include <numbers>

namespace stemflow::codec {

namespace {

// DCT-II frequency indices of the eight atoms.
constexpr std::array<int, kLatentDim> kAtomFrequencies = {3, 5, 8, 12, 17, 23, 30, 38};

using Basis = Eigen::Matrix<double, kLatentDim, kHop, Eigen::RowMajor>;

Basis make_basis() {
    Basis b;
    const double scale = std::sqrt(2.0 / kHop);
    for (int d = 0; d < kLatentDim; ++d) {
        for (int n = 0; n < kHop; ++n) {
            b(d, n) = scale * std::cos(std::numbers::pi * (n + 0.5) * kAtomFrequencies[d] / kHop);
        }
    }
    return b;
}

void require_hop_multiple(std::size_t n) {
    if (n % kHop != 0) {
        throw Error(Errc::invalid_argument,
                    "waveform length " + std::to_string(n) + " is not a multiple of the hop size");
    }
}

}  // namespace

const Basis& basis() {
    static const Basis b = make_basis();
    return b;
}

StemLatent encode(std::span<const double> samples) {
    require_hop_multiple(samples.size());
    const auto frames = static_cast<Eigen::Index>(samples.size() / kHop);
    Eigen::Map<const Matrix> blocks(samples.data(), frames, kHop);
    StemLatent out;
    out.frames = blocks * basis().transpose();
    return out;
}

StemWaveform decode(const StemLatent& latent) {
    if (latent.frames.cols() != kLatentDim) {
        throw Error(Errc::invalid_argument,
                    "latent width " + std::to_string(latent.frames.cols()) + " != " +
                        std::to_string(kLatentDim));
    }
    StemWaveform w;
    w.samples.resize(static_cast<std::size_t>(latent.frames.rows()) * kHop);
    Eigen::Map<Matrix> blocks(w.samples.data(), latent.frames.rows(), kHop);
    blocks.noalias() = latent.frames * basis();
    return w;
}

std::vector<double> frame_rms(std::span<const double> samples) {
    require_hop_multiple(samples.size());
    std::vector<double> out(samples.size() / kHop);
    for (std::size_t f = 0; f < out.size(); ++f) {
        double acc = 0.0;
        for (int n = 0; n < kHop; ++n) {
            const double s = samples[f * kHop + n];
            acc += s * s;
        }
        out[f] = std::sqrt(acc / kHop);
    }
    return out;
}

ActivityMask detect_activity(std::span<const double> samples, double cutoff_db) {
    const double threshold = db_to_amplitude(cutoff_db);
    const auto env = frame_rms(samples);
    ActivityMask mask(env.size());
    for (std::size_t f = 0; f < env.size(); ++f) mask[f] = env[f] >= threshold;
    return mask;
}

double rms(std::span<const double> samples) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return std::sqrt(acc / static_cast<double>(samples.size()));
}

StemWaveform mix(std::span<const StemWaveform> stems, std::span<const double> gains) {
    if (stems.size() != gains.size()) {
        throw Error(Errc::invalid_argument, "mix: gain count does not match stem count");
    }
    StemWaveform out;
    if (stems.empty()) return out;
    const auto n = stems.front().samples.size();
    out.samples.assign(n, 0.0);
    for (std::size_t k = 0; k < stems.size(); ++k) {
        if (stems[k].samples.size() != n) {
            throw Error(Errc::invalid_argument, "mix: stems have different lengths");
        }
        const double g = gains[k];
        for (std::size_t i = 0; i < n; ++i) out.samples[i] += g * stems[k].samples[i];
    }
    return out;
}

StemWaveform mix(std::span<const StemWaveform> stems) {
    std::vector<double> gains(stems.size(), 1.0);
    return mix(stems, gains);
}

StemWaveform normalize_mix(const StemWaveform& w, double target_dbfs) {
    const double current = rms(w.samples);
    if (!(current > 0.0)) {
        throw Error(Errc::invalid_argument, "normalize_mix: input is silent, gain is undefined");
    }
    const double gain = db_to_amplitude(target_dbfs) / current;
    StemWaveform out = w;
    for (double& s : out.samples) s *= gain;
    return out;
}

Matrix sum_latents(std::span<const Matrix* const> latents) {
    if (latents.empty()) throw Error(Errc::invalid_argument, "sum_latents: empty input");
    Matrix acc = *latents.front();
    for (std::size_t i = 1; i < latents.size(); ++i) {
        if (latents[i]->rows() != acc.rows() || latents[i]->cols() != acc.cols()) {
            throw Error(Errc::invalid_argument, "sum_latents: shape mismatch");
        }
        acc += *latents[i];
    }
    return acc;
}

}  // namespace stemflow::codec
