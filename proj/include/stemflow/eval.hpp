// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stemflow/sampler.hpp"

namespace stemflow {

inline constexpr int kFeatureDim = 2 + 1 + kLatentDim + 2 + kLatentDim;
using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

// Layout of FeatureVector.
inline constexpr int kFeatPeriod = 0;
inline constexpr int kFeatPhase = 1;
inline constexpr int kFeatActivity = 2;
inline constexpr int kFeatEnergy = 3;
inline constexpr int kFeatEnvMean = kFeatEnergy + kLatentDim;
inline constexpr int kFeatEnvVar = kFeatEnvMean + 1;
inline constexpr int kFeatHistogram = kFeatEnvVar + 1;

struct Rhythm {
    int period = 0;  // 0 marks a silent clip
    int phase = 0;
};

/// Beat period from the autocorrelation of the frame-RMS envelope (lags
/// 4..16) and phase from a comb matched filter at that period.
Rhythm estimate_rhythm(std::span<const double> samples, double cutoff_db = -60.0);

FeatureVector extract_features(std::span<const double> samples, double cutoff_db = -60.0);
inline FeatureVector extract_features(const StemWaveform& w) { return extract_features(w.samples); }

/// Minimum set size for a stable covariance.
inline constexpr std::size_t kMinFrechetSet = kFeatureDim + 1;

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with S += 1e-6 I.
/// Works for any dimension; rows of `a`/`b` are samples.
double frechet_distance(const Matrix& a, const Matrix& b, std::size_t min_size = 2);
double frechet_distance(std::span<const FeatureVector> a, std::span<const FeatureVector> b);

/// Per-dimension standardization fitted on a reference set.
struct FeatureScaler {
    FeatureVector mean = FeatureVector::Zero();
    FeatureVector scale = FeatureVector::Ones();

    static FeatureScaler fit(std::span<const FeatureVector> reference);
    FeatureVector apply(const FeatureVector& f) const;
};

struct TypedFeature {
    StemType type = StemType::drums;
    FeatureVector features;
};

struct MacroFad {
    double value = 0.0;
    std::map<StemType, double> per_type;
    std::vector<StemType> excluded;  // too few samples or absent from the reference
};

/// Unweighted mean over stem types of the per-type Frechet distance.
MacroFad macro_fad_by_stem_type(std::span<const TypedFeature> generated, std::span<const TypedFeature> reference);

/// Fraction of non-silent stems whose period equals the modal period and
/// whose phase is within +-1 frame (circular) of the modal phase.
/// Returns 0 when every stem is silent.
double sync_coherence(std::span<const Rhythm> rhythms);
double sync_coherence(std::span<const StemWaveform> stems);

/// Frame-wise F1 with "active" as the positive class. 1.0 when neither side
/// has a positive frame.
double activity_f1(const ActivityMask& target, const ActivityMask& detected);
double activity_f1(const ActivityMask& target, const StemWaveform& generated, double cutoff_db = -60.0);

/// Nearest-centroid style classifier over standardized mix features.
class StyleClassifier {
public:
    static StyleClassifier fit(std::span<const FeatureVector> mixes, std::span<const int> styles);
    int predict(const FeatureVector& f) const;

private:
    FeatureScaler scaler_;
    std::map<int, FeatureVector> centroids_;
};

struct EvalConfig {
    int requests = 64;
    int stems_per_request = 4;
    std::uint64_t heldout_seed = 777;
    int reference_count = 512;
    bool use_masks = true;
    bool include_timing = true;
    int workflow_requests = 8;
    SampleConfig sampler;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EvalCell {
    std::string setting;
    bool infer_share = false;
    bool present = true;
    double fad_stem = 0.0;
    double fad_mix = 0.0;
    double style_acc = 0.0;
    double sync = 0.0;
    double f1 = 0.0;
    double wall_time_ms = 0.0;
    MacroFad fad_detail;
};

/// Held-out K-stem specs used as generation requests.
std::vector<CompositionSpec> heldout_specs(int count, int stems, std::uint64_t seed,
                                           std::optional<double> partial_activity_prob = std::nullopt);

/// Reference features (held-out compositions, disjoint from training data).
struct Reference {
    std::vector<TypedFeature> stems;
    std::vector<FeatureVector> mixes;
    std::vector<int> mix_styles;
    FeatureScaler stem_scaler;
    FeatureScaler mix_scaler;
    StyleClassifier style;
};
Reference build_reference(std::span<const CompositionSpec> specs);

struct GeneratedSet {
    std::vector<Generation> generations;
    double wall_time_ms = 0.0;
};

GeneratedSet generate_for_specs(const VelocityModel& model, std::span<const CompositionSpec> specs,
                                const SampleConfig& config, bool use_masks);

EvalCell evaluate_cell(const std::string& setting, bool infer_share, std::span<const CompositionSpec> specs,
                       const GeneratedSet& generated, const Reference& reference, bool use_masks);

/// Every (setting x inference sharing) cell; a null model marks the cell absent.
std::vector<EvalCell> run_eval_suite(const std::map<std::string, const VelocityModel*>& models,
                                     const EvalConfig& config);

struct WorkflowTiming {
    WorkflowMode mode = WorkflowMode::one_pass;
    int stems = 0;
    int requests = 0;
    double wall_time_ms = 0.0;
};

/// Runs every workflow mode on config.workflow_requests held-out specs,
/// interleaving modes per request. Timing covers sampling only.
std::vector<WorkflowTiming> time_workflows(const VelocityModel& model, const EvalConfig& config);

/// Header: mode,K,requests,wall_time_ms,ratio_to_k_pass
std::string format_workflow_timing(std::span<const WorkflowTiming> rows);

/// Header: setting,infer_share,fad_stem,fad_mix,style_acc,sync,f1,wall_time_ms
std::string format_report(std::span<const EvalCell> cells, bool include_timing = true);

}  // namespace stemflow
