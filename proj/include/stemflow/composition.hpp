// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "stemflow/common.hpp"

namespace stemflow {

/// Frames [begin, end) forced silent.
struct SilentSpan {
    int begin = 0;
    int end = 0;
};

struct StemSpec {
    StemType type = StemType::drums;
    std::uint64_t pattern_seed = 0;
    double loudness_db = -20.0;  // RMS over active frames
    std::vector<SilentSpan> silent;
};

/// Recipe for one toy multi-stem composition. All stems share tempo, phase
/// and style.
struct CompositionSpec {
    int tempo_bpm = 120;
    int phase = 0;  // onset offset in frames, 0 .. frames_per_beat-1
    int style = 0;  // 0 .. kNumStyles-1
    int clip_frames = 96;
    std::vector<StemSpec> stems;
};

/// Throws Errc::invalid_argument on an off-grid tempo, out-of-range phase or
/// style, an empty stem list, duplicate stem types or bad silent spans.
void validate(const CompositionSpec& spec);

/// The activity plan of a stem as a per-frame mask.
ActivityMask planned_activity(const StemSpec& stem, int clip_frames);

/// Latent of one stem. Deterministic in (tempo, phase, style, type,
/// pattern_seed, loudness, plan).
StemLatent render_stem_latent(const CompositionSpec& spec, const StemSpec& stem);

/// Renders every stem. Audio is produced inside the codec subspace, so
/// decode(encode(w)) == w on the output.
std::vector<StemWaveform> synthesize_composition(const CompositionSpec& spec);

struct GeneratorConfig {
    int clip_frames = 96;
    int min_stems = 3;
    int max_stems = 6;
    /// Relative weights for sequential sampling of distinct stem types.
    std::array<double, kNumStemTypes> type_weights = {4.0, 4.0, 2.0, 2.0, 1.5, 1.5};
    double loudness_min_db = -26.0;
    double loudness_max_db = -14.0;
    /// Probability that a stem gets a silent span in its activity plan.
    double partial_activity_prob = 0.5;
};

/// Draws a random valid composition.
CompositionSpec random_composition(const GeneratorConfig& config, Rng& rng);

}  // namespace stemflow
