// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stemflow/batcher.hpp"

namespace stemflow {

struct ModelConfig {
    int latent_dim = kLatentDim;
    int activity_dim = kActivityDim;
    int hidden_width = 128;
    int num_blocks = 4;
    int embed_dim = 32;
    int kernel_size = 5;
    int time_features = 16;  // sin/cos pairs
    std::uint64_t parameter_seed = 0;

    int input_channels() const { return 2 * latent_dim + activity_dim; }
    int channel_map_width() const { return latent_dim + activity_dim; }
    /// Temporal dilation of block i: 1, 2, 4, 8, 1, 2, ...
    int dilation(int block) const { return 1 << (block % 4); }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct TensorInfo {
    std::string name;
    int rows = 0;
    int cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Flat parameter registry with stable names and fixed offsets.
class ParamLayout {
public:
    explicit ParamLayout(const ModelConfig& config);

    const std::vector<TensorInfo>& tensors() const { return tensors_; }
    std::size_t size() const { return size_; }
    const TensorInfo& find(std::string_view name) const;

    struct Block {
        std::size_t conv_w, conv_b, cond_w, cond_b, mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b;
    };
    std::size_t stem_emb, style_emb, tempo_emb, context_emb, context_null, activity_emb;
    std::size_t time_w, time_b, lift_w, lift_b, head_w, head_b;
    std::vector<Block> blocks;

private:
    std::size_t add(std::string name, int rows, int cols);

    std::vector<TensorInfo> tensors_;
    std::size_t size_ = 0;
};

/// Parameter storage on the widest SIMD alignment, so kernels take the same
/// code path (and rounding) whatever address the heap hands out.
template <class S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

/// Trainable parameters (theta) with the config that shapes them.
struct ModelParams {
    ModelConfig config;
    std::vector<float> values;

    std::size_t count() const { return values.size(); }
};

/// Deterministic init from config.parameter_seed. Linear weights use
/// N(0, 1/fan_in); the output head starts at zero.
ModelParams init_params(const ModelConfig& config);

// Embedding-table row indices. The last row of each table is its null token.
inline constexpr int kNullStemRow = kNumStemTypes;
inline constexpr int kNullStyleRow = kNumStyles;
inline constexpr int kNullTempoRow = static_cast<int>(kTempoGrid.size());
inline constexpr std::uint8_t kActivitySilentRow = 0;
inline constexpr std::uint8_t kActivityActiveRow = 1;
inline constexpr std::uint8_t kActivityUnconstrainedRow = 2;

/// A ConditionSet with dropout applied and mapped to table rows.
struct ResolvedConditions {
    int stem_row = kNullStemRow;
    int style_row = kNullStyleRow;
    int tempo_row = kNullTempoRow;
    bool context_null = true;
    std::uint8_t context_bits = 0;
    const Matrix* submix = nullptr;            // null means zeros
    std::vector<std::uint8_t> activity_rows;   // one row index per frame
    double timestep = 1.0;
};

/// Throws Errc::invalid_argument on out-of-vocabulary indices or mask length
/// mismatch. `cond` must outlive the result (sub-mix is referenced).
ResolvedConditions resolve_conditions(const ConditionSet& cond, int frames, double timestep);

/// The all-dropped input used as the CFG unconditional branch.
ResolvedConditions unconditional(int frames, double timestep);

struct ConditionEmbedding {
    Eigen::VectorXd summary;  // embed_dim
    Matrix channel_map;       // T x (D + activity_dim)
};

/// Summary vector (sum of stem/style/tempo/context embeddings) and the
/// channel map (sub-mix latent next to per-frame activity embeddings).
ConditionEmbedding embed_conditions(const ConditionSet& cond, const ModelParams& params, int frames);

/// Velocity network v(x_t, t, C). Rows of every activation matrix are
/// frames; N entries of T frames are stacked as N*T rows. No layer mixes
/// information across entries.
template <class S>
class VelocityNet {
public:
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    struct Workspace {
        int entries = 0;
        int frames = 0;
        Mat input;      // N*T x Cin
        Mat time_feat;  // N x 2F
        Mat cond;       // N x E
        std::vector<Mat> h, c, a, u;
    };

    explicit VelocityNet(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    const ParamLayout& layout() const { return layout_; }

    /// x_t is N*T x D. Returns the N*T x D velocity and fills `ws` for backward.
    Mat forward(std::span<const S> params, const Mat& x_t, std::span<const ResolvedConditions> entries,
                int frames, Workspace& ws) const;

    /// Accumulates dLoss/dparams into `grad` given dLoss/dv.
    void backward(std::span<const S> params, const Workspace& ws, std::span<const ResolvedConditions> entries,
                  const Mat& d_out, std::span<S> grad) const;

private:
    ModelConfig config_;
    ParamLayout layout_;
};

extern template class VelocityNet<float>;
extern template class VelocityNet<double>;

/// Read-only float model for inference. Safe for concurrent predict calls.
class VelocityModel {
public:
    explicit VelocityModel(ModelParams params);

    const ModelParams& params() const { return params_; }
    const ModelConfig& config() const { return params_.config; }

    /// Stacked x_t (N*T x D) to velocity (N*T x D).
    Matrix predict(const Matrix& x_t, std::span<const ResolvedConditions> entries, int frames) const;

private:
    ModelParams params_;
    AlignedVector<float> aligned_;
    VelocityNet<float> net_;
};

}  // namespace stemflow
