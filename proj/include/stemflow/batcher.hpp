// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "stemflow/corpus.hpp"

namespace stemflow {

/// Which condition units are replaced by their null value. The context unit
/// covers both the context-type clause and the sub-mix channels.
struct DropFlags {
    bool stem_type = false;
    bool style = false;
    bool tempo = false;
    bool context = false;
    bool activity = false;

    static DropFlags all() { return {true, true, true, true, true}; }
    bool any() const { return stem_type || style || tempo || context || activity; }
};

/// Per-stem conditioning bundle.
struct ConditionSet {
    StemType stem_type = StemType::drums;
    int style_token = 0;
    int tempo_bpm = 120;
    std::uint8_t context_types = 0;         // multi-hot over stem types
    std::shared_ptr<const Matrix> submix;   // null means all zeros
    std::optional<ActivityMask> activity;   // absent means unconstrained
    DropFlags drop;
};

enum class GroupTask { from_scratch, conditional };

struct BatchGroup {
    int composition = 0;
    std::vector<int> stems;  // indices into the composition's stems
    GroupTask task = GroupTask::from_scratch;
    std::vector<int> context_stems;  // left-out stems summed into the sub-mix
};

struct BatchEntry {
    int composition = 0;
    int stem = 0;
    int group = 0;
    ConditionSet conditions;
    int noise_index = -1;  // into TrainingBatch::noises
    double timestep = 0.5;
};

struct TrainingBatch {
    int clip_frames = 0;
    std::vector<BatchEntry> entries;
    std::vector<BatchGroup> groups;
    std::vector<std::shared_ptr<const Matrix>> noises;

    const Matrix& noise(const BatchEntry& e) const { return *noises.at(static_cast<std::size_t>(e.noise_index)); }
};

struct BatcherConfig {
    int batch_size = 32;
    bool grouping = true;       // group_sampling: grouped | independent
    bool noise_sharing = true;  // noise_sharing: shared | independent
    double conditional_fraction = 0.5;
    double dropout_p = 1.0 / 3.0;
    double timestep_mu = 0.0;
    double timestep_sigma = 1.0;
    bool share_timestep_in_group = false;
    bool activity_conditioning = true;
};

/// Samples mixes and stem subsets until `batch_size` stems are collected.
/// Subset size is uniform on 1..K, truncated to the remaining slots. With
/// grouping off every entry is a singleton group from its own mix.
TrainingBatch build_batch(const Dataset& dataset, int batch_size, bool grouping_enabled, Rng& rng);

/// Flags ceil(L * fraction) uniformly chosen groups as conditional and fills
/// their sub-mix from a random nonempty subset of the left-out stems. Groups
/// that used every stem of their mix stay from-scratch.
void select_conditional_groups(TrainingBatch& batch, const Dataset& dataset, Rng& rng,
                               double conditional_fraction = 0.5);

/// One standard-normal T x D tensor per group (shared) or per entry.
void assign_noise(TrainingBatch& batch, bool sharing_enabled, Rng& rng);

/// t = sigmoid(mu + sigma * z), strictly inside (0, 1).
void sample_timesteps(TrainingBatch& batch, double mu, double sigma, Rng& rng,
                      bool share_within_group = false);

/// Drops each condition unit independently with probability p.
void apply_condition_dropout(TrainingBatch& batch, double p, Rng& rng);

/// Full pipeline: build, conditional groups, noise, timesteps, dropout.
TrainingBatch make_training_batch(const Dataset& dataset, const BatcherConfig& config, Rng& rng);

/// Noised target x(t) = (1 - t) x + t eps for one entry.
Matrix noised_latent(const Dataset& dataset, const TrainingBatch& batch, const BatchEntry& entry);

const Matrix& target_latent(const Dataset& dataset, const BatchEntry& entry);

}  // namespace stemflow
