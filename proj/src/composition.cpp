// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/composition.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stemflow/codec.hpp"

namespace stemflow {

namespace {

enum class EnvelopeShape { decaying, raised_cosine };

// Every stem puts its beat accent on latent channel 0 and a constant timbre
// on channels 1..7. The shared accent channel is what makes stems of one
// composition rhythmically aligned.
struct StemProfile {
    double accent;
    double sustain;
    double decay;  // per beat
    EnvelopeShape shape;
    std::array<double, kLatentDim - 1> timbre;
};

constexpr std::array<StemProfile, kNumStemTypes> kProfiles = {{
    // drums
    {1.0, 0.25, 8.0, EnvelopeShape::decaying, {1.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.5}},
    // bass
    {0.8, 0.60, 3.0, EnvelopeShape::decaying, {0.0, 1.0, 0.4, 0.0, 0.0, 0.0, 0.0}},
    // keys
    {0.7, 0.50, 4.0, EnvelopeShape::decaying, {0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 0.0}},
    // guitar
    {0.7, 0.50, 5.0, EnvelopeShape::decaying, {0.0, 0.0, 0.0, 1.0, 0.5, 0.0, 0.0}},
    // pad
    {0.6, 0.80, 0.0, EnvelopeShape::raised_cosine, {0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 0.0}},
    // lead
    {0.6, 0.60, 2.0, EnvelopeShape::decaying, {0.3, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5}},
}};

constexpr std::uint64_t kStyleStream = 0x5354594c45ull;
constexpr std::uint64_t kPatternStream = 0x5041545445524eull;

std::array<double, kLatentDim - 1> style_direction(int style) {
    Rng rng = derive_rng(kStyleStream, {static_cast<std::uint64_t>(style)});
    std::normal_distribution<double> normal;
    std::array<double, kLatentDim - 1> v{};
    double norm = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

double style_decay_scale(int style) { return 0.8 + 0.4 * style / (kNumStyles - 1); }

}  // namespace

void validate(const CompositionSpec& spec) {
    auto fail = [](const std::string& msg) { throw Error(Errc::invalid_argument, msg); };
    if (!tempo_bucket(spec.tempo_bpm)) fail("tempo " + std::to_string(spec.tempo_bpm) + " is not on the grid");
    const int period = frames_per_beat(spec.tempo_bpm);
    if (spec.phase < 0 || spec.phase >= period) fail("phase out of range");
    if (spec.style < 0 || spec.style >= kNumStyles) fail("style out of range");
    if (spec.clip_frames <= 0) fail("clip_frames must be positive");
    if (spec.stems.empty()) fail("composition has no stems");
    std::array<bool, kNumStemTypes> seen{};
    for (const auto& s : spec.stems) {
        const auto idx = static_cast<std::size_t>(s.type);
        if (idx >= kNumStemTypes) fail("invalid stem type");
        if (seen[idx]) fail("duplicate stem type " + std::string(stem_type_name(s.type)));
        seen[idx] = true;
        for (const auto& span : s.silent) {
            if (span.begin < 0 || span.end > spec.clip_frames || span.begin > span.end) {
                fail("silent span out of range");
            }
        }
    }
}

ActivityMask planned_activity(const StemSpec& stem, int clip_frames) {
    ActivityMask mask(static_cast<std::size_t>(clip_frames), 1);
    for (const auto& span : stem.silent) {
        for (int f = span.begin; f < span.end; ++f) mask[static_cast<std::size_t>(f)] = 0;
    }
    return mask;
}

StemLatent render_stem_latent(const CompositionSpec& spec, const StemSpec& stem) {
    const auto& profile = kProfiles.at(static_cast<std::size_t>(stem.type));
    const int period = frames_per_beat(spec.tempo_bpm);

    Rng rng = derive_rng(kPatternStream, {stem.pattern_seed, static_cast<std::uint64_t>(stem.type),
                                          static_cast<std::uint64_t>(spec.style)});
    std::uniform_real_distribution<double> jitter(0.85, 1.15);
    std::normal_distribution<double> normal;

    const double decay = profile.decay * jitter(rng) * style_decay_scale(spec.style);
    const auto style_dir = style_direction(spec.style);
    std::array<double, kLatentDim - 1> timbre{};
    double norm = 0.0;
    for (std::size_t i = 0; i < timbre.size(); ++i) {
        timbre[i] = profile.timbre[i] + 0.35 * style_dir[i] + 0.15 * normal(rng);
        norm += timbre[i] * timbre[i];
    }
    norm = std::sqrt(norm);

    StemLatent latent;
    latent.frames = Matrix::Zero(spec.clip_frames, kLatentDim);
    const auto mask = planned_activity(stem, spec.clip_frames);
    double energy = 0.0;
    int active = 0;
    for (int f = 0; f < spec.clip_frames; ++f) {
        if (!mask[static_cast<std::size_t>(f)]) continue;
        const int tau = ((f - spec.phase) % period + period) % period;
        const double x = static_cast<double>(tau) / period;
        const double env = profile.shape == EnvelopeShape::decaying
                               ? std::exp(-decay * x)
                               : 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * x));
        latent.frames(f, 0) = profile.accent * env;
        for (std::size_t i = 0; i < timbre.size(); ++i) {
            latent.frames(f, static_cast<Eigen::Index>(i + 1)) = profile.sustain * timbre[i] / norm;
        }
        energy += latent.frames.row(f).squaredNorm();
        ++active;
    }
    if (active > 0) {
        // Frame RMS in the waveform domain is |z_f| / sqrt(hop).
        const double current = std::sqrt(energy / (active * static_cast<double>(kHop)));
        latent.frames *= db_to_amplitude(stem.loudness_db) / current;
    }
    return latent;
}

std::vector<StemWaveform> synthesize_composition(const CompositionSpec& spec) {
    validate(spec);
    std::vector<StemWaveform> out;
    out.reserve(spec.stems.size());
    for (const auto& stem : spec.stems) {
        StemWaveform w = codec::decode(render_stem_latent(spec, stem));
        w.stem_type = stem.type;
        out.push_back(std::move(w));
    }
    return out;
}

CompositionSpec random_composition(const GeneratorConfig& config, Rng& rng) {
    CompositionSpec spec;
    spec.clip_frames = config.clip_frames;
    spec.tempo_bpm = kTempoGrid[std::uniform_int_distribution<std::size_t>(0, kTempoGrid.size() - 1)(rng)];
    spec.phase = std::uniform_int_distribution<int>(0, frames_per_beat(spec.tempo_bpm) - 1)(rng);
    spec.style = std::uniform_int_distribution<int>(0, kNumStyles - 1)(rng);

    const int max_stems = std::min(config.max_stems, kNumStemTypes);
    const int count = std::uniform_int_distribution<int>(config.min_stems, max_stems)(rng);

    // Sequential weighted sampling without replacement.
    std::array<double, kNumStemTypes> weights = config.type_weights;
    std::vector<StemType> types;
    for (int k = 0; k < count; ++k) {
        std::discrete_distribution<int> pick(weights.begin(), weights.end());
        const int t = pick(rng);
        types.push_back(static_cast<StemType>(t));
        weights[static_cast<std::size_t>(t)] = 0.0;
    }

    std::uniform_real_distribution<double> loudness(config.loudness_min_db, config.loudness_max_db);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int T = config.clip_frames;
    for (StemType type : types) {
        StemSpec stem;
        stem.type = type;
        stem.pattern_seed = rng();
        stem.loudness_db = loudness(rng);
        if (unit(rng) < config.partial_activity_prob && T >= 8) {
            const int length = std::uniform_int_distribution<int>(T / 8, T / 2)(rng);
            switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
                case 0:
                    stem.silent.push_back({0, length});
                    break;
                case 1:
                    stem.silent.push_back({T - length, T});
                    break;
                default: {
                    const int begin = std::uniform_int_distribution<int>(1, T - length - 1)(rng);
                    stem.silent.push_back({begin, begin + length});
                    break;
                }
            }
        }
        spec.stems.push_back(std::move(stem));
    }
    return spec;
}

}  // namespace stemflow
