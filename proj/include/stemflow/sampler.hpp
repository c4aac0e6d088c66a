// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stemflow/model.hpp"

namespace stemflow {

/// Inclusive 1-based step interval where guidance is applied; empty when lo > hi.
struct CfgWindow {
    int lo = 1;
    int hi = 0;

    bool contains(int step) const { return step >= lo && step <= hi; }
    bool empty() const { return lo > hi; }
};

/// [3, 28] at 32 steps, scaled to N steps. A lower edge that rounds below
/// step 1 leaves the window empty.
CfgWindow default_cfg_window(int num_steps);

struct SampleConfig {
    int num_steps = 32;
    double cfg_scale = 3.0;
    std::optional<CfgWindow> cfg_window;  // default_cfg_window when unset
    bool share_noise = true;
    std::uint64_t seed = 0;

    CfgWindow window() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const SampleConfig& c);
void from_json(const nlohmann::json& j, SampleConfig& c);

/// Guided velocity inside the window, v_cond outside.
Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double scale, int step, CfgWindow window);

/// Unguided Euler integration from t = 1 to t = 0: x <- x + v(x, t) / N.
using VelocityField = std::function<Matrix(const Matrix& x, double t)>;
Matrix euler_integrate(Matrix x, int num_steps, const VelocityField& v);

/// Guided field: fills v_cond and, when `guided`, v_uncond.
using GuidedField = std::function<void(const Matrix& x, double t, bool guided, Matrix& v_cond, Matrix& v_uncond)>;
Matrix euler_integrate(Matrix x, const SampleConfig& config, const GuidedField& field);

struct StemRequest {
    StemType stem_type = StemType::drums;
    std::optional<ActivityMask> activity;
};

/// Fields shared by every request of one call.
struct GenerationContext {
    int style_token = 0;
    int tempo_bpm = 120;
    std::shared_ptr<const Matrix> submix;  // null means zeros (from scratch)
    std::uint8_t context_types = 0;
};

struct SampleHooks {
    std::function<void(const std::vector<Matrix>& initial_noise)> on_initial_noise;
};

/// One batched sampling call for all requests. Returns T x D latents.
std::vector<Matrix> euler_sample(const VelocityModel& model, std::span<const StemRequest> requests,
                                 const GenerationContext& context, const SampleConfig& config, int frames = 96,
                                 const SampleHooks& hooks = {});

struct Generation {
    std::vector<Matrix> latents;
    std::vector<StemWaveform> stems;
    StemWaveform mix;  // unity-gain sum normalized to -16 dBFS; empty when no stems
};

/// Decodes latents, mixes them at unity gain and normalizes the mix.
Generation render_generation(std::vector<Matrix> latents, std::span<const StemRequest> requests);

Generation generate(const VelocityModel& model, std::span<const StemRequest> requests,
                    const GenerationContext& context, const SampleConfig& config, const SampleHooks& hooks = {});

Generation generate_from_scratch(const VelocityModel& model, std::span<const StemRequest> requests, int style_token,
                                 int tempo_bpm, const SampleConfig& config, const SampleHooks& hooks = {});

struct ContextStem {
    StemType type = StemType::drums;
    Matrix latent;
};

/// Conditions every request on the latent-domain sum of `context`.
Generation generate_conditional(const VelocityModel& model, std::span<const ContextStem> context,
                                std::span<const StemRequest> requests, int style_token, int tempo_bpm,
                                const SampleConfig& config, const SampleHooks& hooks = {});

enum class WorkflowMode { k_pass, two_pass, one_pass };
std::string_view workflow_mode_name(WorkflowMode mode);
WorkflowMode parse_workflow_mode(std::string_view name);

struct WorkflowReport {
    WorkflowMode mode = WorkflowMode::one_pass;
    int stems = 0;
    double wall_time_ms = 0.0;
    std::vector<double> per_pass_ms;
    std::vector<int> pass_sizes;
    SampleConfig config;
};

nlohmann::json to_json(const WorkflowReport& r);

struct WorkflowResult {
    Generation generation;  // stems in request order
    WorkflowReport report;
};

/// k_pass: one stem per pass, each conditioned on all earlier outputs.
/// two_pass: ceil(K/2) from scratch, then floor(K/2) on their sub-mix.
/// one_pass: all K in one call. Pass i > 0 uses a seed derived from
/// (config.seed, i); pass 0 uses config.seed itself.
WorkflowResult run_workflow(const VelocityModel& model, std::span<const StemRequest> requests, int style_token,
                            int tempo_bpm, WorkflowMode mode, const SampleConfig& config);

}  // namespace stemflow
