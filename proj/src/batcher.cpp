// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/batcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stemflow/codec.hpp"

namespace stemflow {

namespace {

// Uniform random subset of `pool` with size uniform on 1..|pool|.
std::vector<int> sample_subset(std::vector<int> pool, Rng& rng) {
    const int size = std::uniform_int_distribution<int>(1, static_cast<int>(pool.size()))(rng);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(size));
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<int> iota_vector(std::size_t n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

Matrix standard_normal(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

}  // namespace

TrainingBatch build_batch(const Dataset& dataset, int batch_size, bool grouping_enabled, Rng& rng) {
    if (batch_size < 1) throw Error(Errc::invalid_argument, "batch size must be >= 1");
    if (dataset.compositions.empty()) throw Error(Errc::invalid_argument, "dataset is empty");

    TrainingBatch batch;
    batch.clip_frames = dataset.clip_frames;
    std::uniform_int_distribution<int> pick_mix(0, static_cast<int>(dataset.compositions.size()) - 1);

    int remaining = batch_size;
    while (remaining > 0) {
        const int m = pick_mix(rng);
        const auto& comp = dataset.compositions[static_cast<std::size_t>(m)];
        std::vector<int> members;
        if (grouping_enabled) {
            members = sample_subset(iota_vector(comp.stems.size()), rng);
            if (static_cast<int>(members.size()) > remaining) {
                // Overflow: keep a uniform subset of the drawn members.
                std::shuffle(members.begin(), members.end(), rng);
                members.resize(static_cast<std::size_t>(remaining));
                std::sort(members.begin(), members.end());
            }
        } else {
            members.push_back(
                std::uniform_int_distribution<int>(0, static_cast<int>(comp.stems.size()) - 1)(rng));
        }

        const int group_id = static_cast<int>(batch.groups.size());
        BatchGroup group;
        group.composition = m;
        group.stems = members;
        for (int s : members) {
            const auto& stem = comp.stems[static_cast<std::size_t>(s)];
            BatchEntry e;
            e.composition = m;
            e.stem = s;
            e.group = group_id;
            e.conditions.stem_type = stem.type;
            e.conditions.style_token = comp.style;
            e.conditions.tempo_bpm = comp.tempo_bpm;
            e.conditions.activity = stem.mask;
            batch.entries.push_back(std::move(e));
        }
        remaining -= static_cast<int>(members.size());
        batch.groups.push_back(std::move(group));
    }
    return batch;
}

void select_conditional_groups(TrainingBatch& batch, const Dataset& dataset, Rng& rng,
                               double conditional_fraction) {
    const auto L = batch.groups.size();
    const auto wanted = static_cast<std::size_t>(std::ceil(static_cast<double>(L) * conditional_fraction));
    auto order = iota_vector(L);
    std::shuffle(order.begin(), order.end(), rng);

    for (auto& g : batch.groups) {
        g.task = GroupTask::from_scratch;
        g.context_stems.clear();
    }
    std::vector<std::shared_ptr<const Matrix>> submix(L);
    std::vector<std::uint8_t> context_bits(L, 0);

    for (std::size_t i = 0; i < std::min(wanted, L); ++i) {
        auto& g = batch.groups[static_cast<std::size_t>(order[i])];
        const auto& comp = dataset.compositions[static_cast<std::size_t>(g.composition)];
        std::vector<int> left_out;
        for (int s = 0; s < static_cast<int>(comp.stems.size()); ++s) {
            if (std::find(g.stems.begin(), g.stems.end(), s) == g.stems.end()) left_out.push_back(s);
        }
        if (left_out.empty()) continue;
        g.task = GroupTask::conditional;
        g.context_stems = sample_subset(left_out, rng);

        std::vector<const Matrix*> parts;
        std::uint8_t bits = 0;
        for (int s : g.context_stems) {
            const auto& stem = comp.stems[static_cast<std::size_t>(s)];
            parts.push_back(&stem.latent);
            bits |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(stem.type));
        }
        submix[static_cast<std::size_t>(order[i])] = std::make_shared<const Matrix>(codec::sum_latents(parts));
        context_bits[static_cast<std::size_t>(order[i])] = bits;
    }

    for (auto& e : batch.entries) {
        const auto g = static_cast<std::size_t>(e.group);
        e.conditions.submix = submix[g];
        e.conditions.context_types = context_bits[g];
    }
}

void assign_noise(TrainingBatch& batch, bool sharing_enabled, Rng& rng) {
    batch.noises.clear();
    const int T = batch.clip_frames;
    if (sharing_enabled) {
        for (std::size_t g = 0; g < batch.groups.size(); ++g) {
            batch.noises.push_back(std::make_shared<const Matrix>(standard_normal(T, kLatentDim, rng)));
        }
        for (auto& e : batch.entries) e.noise_index = e.group;
    } else {
        for (auto& e : batch.entries) {
            e.noise_index = static_cast<int>(batch.noises.size());
            batch.noises.push_back(std::make_shared<const Matrix>(standard_normal(T, kLatentDim, rng)));
        }
    }
}

void sample_timesteps(TrainingBatch& batch, double mu, double sigma, Rng& rng, bool share_within_group) {
    if (!(sigma > 0.0)) throw Error(Errc::invalid_argument, "timestep sigma must be positive");
    std::normal_distribution<double> normal;
    constexpr double lo = 1e-6;
    constexpr double hi = 1.0 - 1e-6;
    auto draw = [&] {
        const double t = 1.0 / (1.0 + std::exp(-(mu + sigma * normal(rng))));
        return std::clamp(t, lo, hi);
    };
    if (share_within_group) {
        std::vector<double> per_group(batch.groups.size());
        for (auto& t : per_group) t = draw();
        for (auto& e : batch.entries) e.timestep = per_group[static_cast<std::size_t>(e.group)];
    } else {
        for (auto& e : batch.entries) e.timestep = draw();
    }
}

void apply_condition_dropout(TrainingBatch& batch, double p, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw Error(Errc::invalid_argument, "dropout p must be in [0, 1)");
    std::bernoulli_distribution drop(p);
    for (auto& e : batch.entries) {
        auto& d = e.conditions.drop;
        d.stem_type = drop(rng);
        d.style = drop(rng);
        d.tempo = drop(rng);
        d.context = drop(rng);
        d.activity = drop(rng);
    }
}

TrainingBatch make_training_batch(const Dataset& dataset, const BatcherConfig& config, Rng& rng) {
    TrainingBatch batch = build_batch(dataset, config.batch_size, config.grouping, rng);
    select_conditional_groups(batch, dataset, rng, config.conditional_fraction);
    assign_noise(batch, config.noise_sharing, rng);
    sample_timesteps(batch, config.timestep_mu, config.timestep_sigma, rng, config.share_timestep_in_group);
    apply_condition_dropout(batch, config.dropout_p, rng);
    if (!config.activity_conditioning) {
        for (auto& e : batch.entries) e.conditions.activity.reset();
    }
    return batch;
}

const Matrix& target_latent(const Dataset& dataset, const BatchEntry& entry) {
    return dataset.compositions.at(static_cast<std::size_t>(entry.composition))
        .stems.at(static_cast<std::size_t>(entry.stem))
        .latent;
}

Matrix noised_latent(const Dataset& dataset, const TrainingBatch& batch, const BatchEntry& entry) {
    const double t = entry.timestep;
    return (1.0 - t) * target_latent(dataset, entry) + t * batch.noise(entry);
}

}  // namespace stemflow
