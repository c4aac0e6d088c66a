// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stemflow/model.hpp"

namespace stemflow {

struct TrainConfig {
    int steps = 8000;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    int checkpoint_every = 1000;  // 0 disables periodic checkpoints
    std::uint64_t seed = 0;
    std::string setting = "C";
    BatcherConfig batcher;
    ModelConfig model;
};

/// Settings of the ablation grid: A = no grouping, no noise sharing;
/// B = grouping only; C = grouping and noise sharing.
TrainConfig config_for_setting(std::string_view setting, TrainConfig base = {});

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Mean over entries of |v - (x - eps)|^2 / (T * D), plus dLoss/dv.
struct Objective {
    double loss = 0.0;
    std::vector<double> per_entry;
    Matrix d_velocity;
};

/// Throws Errc::numeric naming the first non-finite entry.
Objective rf_objective(const Matrix& velocity, const Matrix& target_velocity, int frames);

/// Stacked x(t) and target velocity x - eps for a prepared batch.
struct BatchTensors {
    Matrix noised;
    Matrix target_velocity;
    std::vector<ResolvedConditions> conditions;
};
BatchTensors prepare_batch(const Dataset& dataset, const TrainingBatch& batch);

template <class S>
struct LossAndGrad {
    double loss = 0.0;
    std::vector<S> grad;
};

/// RF loss and its gradient w.r.t. every parameter.
template <class S>
LossAndGrad<S> rf_loss(const VelocityNet<S>& net, std::span<const S> params, const Dataset& dataset,
                       const TrainingBatch& batch);

extern template LossAndGrad<float> rf_loss(const VelocityNet<float>&, std::span<const float>, const Dataset&,
                                           const TrainingBatch&);
extern template LossAndGrad<double> rf_loss(const VelocityNet<double>&, std::span<const double>, const Dataset&,
                                            const TrainingBatch&);

struct TrainState {
    ModelParams params;
    std::vector<float> adam_m;
    std::vector<float> adam_v;
    std::int64_t step = 0;
    std::vector<double> losses;
};

TrainState init_train_state(const TrainConfig& config);

/// The batch used at `step`; depends only on (dataset, config, step).
TrainingBatch batch_for_step(const Dataset& dataset, const TrainConfig& config, std::int64_t step);

/// One AdamW step (decoupled weight decay). Appends the loss.
void train_step(TrainState& state, const TrainConfig& config, const Dataset& dataset, const TrainingBatch& batch);

struct TrainOptions {
    std::optional<std::filesystem::path> out_dir;  // checkpoints + train_log.csv
    std::function<void(std::int64_t step, double loss)> on_step;
};

/// Runs from `state` (fresh or resumed) up to config.steps.
TrainState train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options = {},
                 std::optional<TrainState> resume = std::nullopt);

// Checkpoint: "SFCK", u32 format version, u32 header length, JSON header
// (configs, provenance, tensor table), then little-endian float32 sections.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TrainConfig config;
    TrainState state;
};

std::string encode_checkpoint(const TrainConfig& config, const TrainState& state);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stemflow
