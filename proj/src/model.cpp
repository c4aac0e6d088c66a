// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/model.hpp"

#include <cmath>

namespace stemflow {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c) {
    j = json{{"latent_dim", c.latent_dim},     {"activity_dim", c.activity_dim},
             {"hidden_width", c.hidden_width}, {"num_blocks", c.num_blocks},
             {"embed_dim", c.embed_dim},       {"kernel_size", c.kernel_size},
             {"time_features", c.time_features}, {"parameter_seed", c.parameter_seed}};
}

void from_json(const json& j, ModelConfig& c) {
    ModelConfig d;
    c.latent_dim = j.value("latent_dim", d.latent_dim);
    c.activity_dim = j.value("activity_dim", d.activity_dim);
    c.hidden_width = j.value("hidden_width", d.hidden_width);
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.embed_dim = j.value("embed_dim", d.embed_dim);
    c.kernel_size = j.value("kernel_size", d.kernel_size);
    c.time_features = j.value("time_features", d.time_features);
    c.parameter_seed = j.value("parameter_seed", d.parameter_seed);
    if (c.latent_dim != kLatentDim) throw Error(Errc::invalid_argument, "latent_dim must be 8");
    if (c.hidden_width < 1 || c.num_blocks < 0 || c.embed_dim < 1 || c.kernel_size < 1 ||
        c.kernel_size % 2 == 0 || c.time_features < 1 || c.activity_dim < 1) {
        throw Error(Errc::invalid_argument, "invalid model config");
    }
}

// ---------------------------------------------------------------------------
// Layout

ParamLayout::ParamLayout(const ModelConfig& c) {
    const int E = c.embed_dim;
    const int H = c.hidden_width;
    stem_emb = add("emb.stem_type", kNumStemTypes + 1, E);
    style_emb = add("emb.style", kNumStyles + 1, E);
    tempo_emb = add("emb.tempo", static_cast<int>(kTempoGrid.size()) + 1, E);
    context_emb = add("emb.context", kNumStemTypes, E);
    context_null = add("emb.context_null", 1, E);
    activity_emb = add("emb.activity", 3, c.activity_dim);
    time_w = add("time.w", E, 2 * c.time_features);
    time_b = add("time.b", 1, E);
    lift_w = add("lift.w", H, c.input_channels());
    lift_b = add("lift.b", 1, H);
    for (int i = 0; i < c.num_blocks; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        Block b{};
        b.conv_w = add(p + "conv.w", H, c.kernel_size);
        b.conv_b = add(p + "conv.b", 1, H);
        b.cond_w = add(p + "cond.w", H, E);
        b.cond_b = add(p + "cond.b", 1, H);
        b.mlp_in_w = add(p + "mlp_in.w", H, H);
        b.mlp_in_b = add(p + "mlp_in.b", 1, H);
        b.mlp_out_w = add(p + "mlp_out.w", H, H);
        b.mlp_out_b = add(p + "mlp_out.b", 1, H);
        blocks.push_back(b);
    }
    head_w = add("head.w", c.latent_dim, H);
    head_b = add("head.b", 1, c.latent_dim);
}

std::size_t ParamLayout::add(std::string name, int rows, int cols) {
    const std::size_t offset = size_;
    tensors_.push_back({std::move(name), rows, cols, offset});
    size_ += tensors_.back().size();
    return offset;
}

const TensorInfo& ParamLayout::find(std::string_view name) const {
    for (const auto& t : tensors_) {
        if (t.name == name) return t;
    }
    throw Error(Errc::not_found, "no parameter named " + std::string(name));
}

ModelParams init_params(const ModelConfig& config) {
    const ParamLayout layout(config);
    ModelParams p;
    p.config = config;
    p.values.assign(layout.size(), 0.0f);
    Rng rng = derive_rng(config.parameter_seed, {0x494e4954});
    std::normal_distribution<double> normal;

    const double residual_scale = 1.0 / std::sqrt(std::max(1, config.num_blocks));
    for (const auto& t : layout.tensors()) {
        const auto& n = t.name;
        const bool is_bias = n.size() >= 2 && n.compare(n.size() - 2, 2, ".b") == 0;
        if (is_bias || n == "head.w") continue;  // zeros
        double stddev;
        if (n.rfind("emb.", 0) == 0) {
            stddev = n == "emb.activity" ? 1.0 : 0.5;
        } else if (n.find("conv.w") != std::string::npos) {
            stddev = 1.0 / std::sqrt(static_cast<double>(t.cols));
        } else {
            stddev = 1.0 / std::sqrt(static_cast<double>(t.cols));  // fan_in
            if (n.find("mlp_out.w") != std::string::npos) stddev *= residual_scale;
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            p.values[t.offset + i] = static_cast<float>(stddev * normal(rng));
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Conditions

ResolvedConditions resolve_conditions(const ConditionSet& cond, int frames, double timestep) {
    auto fail = [](const std::string& m) { throw Error(Errc::invalid_argument, m); };
    const auto stem = static_cast<int>(cond.stem_type);
    if (stem < 0 || stem >= kNumStemTypes) fail("stem type out of range");
    if (cond.style_token < 0 || cond.style_token >= kNumStyles) fail("style token out of range");
    const auto bucket = tempo_bucket(cond.tempo_bpm);
    if (!bucket) fail("tempo " + std::to_string(cond.tempo_bpm) + " is not on the grid");
    if (cond.context_types >= (1u << kNumStemTypes)) fail("context types out of range");

    ResolvedConditions r;
    r.timestep = timestep;
    r.stem_row = cond.drop.stem_type ? kNullStemRow : stem;
    r.style_row = cond.drop.style ? kNullStyleRow : cond.style_token;
    r.tempo_row = cond.drop.tempo ? kNullTempoRow : *bucket;
    r.context_null = cond.drop.context;
    r.context_bits = cond.drop.context ? 0 : cond.context_types;
    if (!cond.drop.context && cond.submix) {
        if (cond.submix->rows() != frames || cond.submix->cols() != kLatentDim) fail("sub-mix shape mismatch");
        r.submix = cond.submix.get();
    }
    r.activity_rows.assign(static_cast<std::size_t>(frames), kActivityUnconstrainedRow);
    if (!cond.drop.activity && cond.activity) {
        if (static_cast<int>(cond.activity->size()) != frames) fail("activity mask length mismatch");
        for (int f = 0; f < frames; ++f) {
            r.activity_rows[static_cast<std::size_t>(f)] =
                (*cond.activity)[static_cast<std::size_t>(f)] ? kActivityActiveRow : kActivitySilentRow;
        }
    }
    return r;
}

ResolvedConditions unconditional(int frames, double timestep) {
    ResolvedConditions r;
    r.timestep = timestep;
    r.activity_rows.assign(static_cast<std::size_t>(frames), kActivityUnconstrainedRow);
    return r;
}

namespace {

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using CMap = Eigen::Map<const MatT<S>>;
template <class S>
using MMap = Eigen::Map<MatT<S>>;

template <class S>
CMap<S> view(std::span<const S> p, std::size_t offset, int rows, int cols) {
    return CMap<S>(p.data() + offset, rows, cols);
}
template <class S>
MMap<S> view(std::span<S> p, std::size_t offset, int rows, int cols) {
    return MMap<S>(p.data() + offset, rows, cols);
}

// Summary embedding of one entry, written into `out` (length E).
template <class S, class Out>
void summary_into(std::span<const S> p, const ParamLayout& L, int E, const ResolvedConditions& r, Out&& out) {
    out = view(p, L.stem_emb, kNumStemTypes + 1, E).row(r.stem_row);
    out += view(p, L.style_emb, kNumStyles + 1, E).row(r.style_row);
    out += view(p, L.tempo_emb, static_cast<int>(kTempoGrid.size()) + 1, E).row(r.tempo_row);
    if (r.context_null) {
        out += view(p, L.context_null, 1, E).row(0);
    } else {
        const auto ctx = view(p, L.context_emb, kNumStemTypes, E);
        for (int k = 0; k < kNumStemTypes; ++k) {
            if (r.context_bits & (1u << k)) out += ctx.row(k);
        }
    }
}

}  // namespace

ConditionEmbedding embed_conditions(const ConditionSet& cond, const ModelParams& params, int frames) {
    const auto& c = params.config;
    const ParamLayout L(c);
    const auto r = resolve_conditions(cond, frames, 1.0);
    std::span<const float> p(params.values);
    ConditionEmbedding out;
    Eigen::RowVectorXf summary(c.embed_dim);
    summary_into<float>(p, L, c.embed_dim, r, summary);
    out.summary = summary.transpose().cast<double>();
    out.channel_map = Matrix::Zero(frames, c.channel_map_width());
    if (r.submix) out.channel_map.leftCols(kLatentDim) = *r.submix;
    const auto act = view(p, L.activity_emb, 3, c.activity_dim);
    for (int f = 0; f < frames; ++f) {
        out.channel_map.row(f).rightCols(c.activity_dim) =
            act.row(r.activity_rows[static_cast<std::size_t>(f)]).cast<double>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Network

template <class S>
VelocityNet<S>::VelocityNet(const ModelConfig& config) : config_(config), layout_(config) {}

template <class S>
typename VelocityNet<S>::Mat VelocityNet<S>::forward(std::span<const S> p, const Mat& x_t,
                                                     std::span<const ResolvedConditions> entries, int T,
                                                     Workspace& ws) const {
    const auto& c = config_;
    const auto& L = layout_;
    const int N = static_cast<int>(entries.size());
    const int R = N * T;
    const int D = c.latent_dim;
    const int A = c.activity_dim;
    const int E = c.embed_dim;
    const int H = c.hidden_width;
    const int F = c.time_features;
    const int K = c.kernel_size;
    if (p.size() != L.size()) throw Error(Errc::invalid_argument, "parameter vector size mismatch");
    if (x_t.rows() != R || x_t.cols() != D) throw Error(Errc::invalid_argument, "x_t shape mismatch");
    if (!x_t.allFinite()) throw Error(Errc::numeric, "non-finite model input");

    ws.entries = N;
    ws.frames = T;

    // Per-frame input: x_t | sub-mix | activity embedding.
    ws.input.setZero(R, c.input_channels());
    ws.input.leftCols(D) = x_t;
    const auto act = view(p, L.activity_emb, 3, A);
    for (int n = 0; n < N; ++n) {
        const auto& r = entries[static_cast<std::size_t>(n)];
        if (static_cast<int>(r.activity_rows.size()) != T) {
            throw Error(Errc::invalid_argument, "activity rows length mismatch");
        }
        if (r.submix) ws.input.block(n * T, D, T, D) = r.submix->template cast<S>();
        for (int f = 0; f < T; ++f) {
            ws.input.row(n * T + f).segment(2 * D, A) = act.row(r.activity_rows[static_cast<std::size_t>(f)]);
        }
    }

    // Timestep features and conditioning vector per entry.
    ws.time_feat.resize(N, 2 * F);
    for (int n = 0; n < N; ++n) {
        const double t = entries[static_cast<std::size_t>(n)].timestep;
        for (int i = 0; i < F; ++i) {
            const double freq = std::exp(-std::log(10000.0) * i / F);
            const double phi = 1000.0 * t * freq;
            ws.time_feat(n, i) = static_cast<S>(std::sin(phi));
            ws.time_feat(n, F + i) = static_cast<S>(std::cos(phi));
        }
    }
    ws.cond.noalias() = ws.time_feat * view(p, L.time_w, E, 2 * F).transpose();
    ws.cond.rowwise() += view(p, L.time_b, 1, E).row(0);
    for (int n = 0; n < N; ++n) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> s(E);
        summary_into<S>(p, L, E, entries[static_cast<std::size_t>(n)], s);
        ws.cond.row(n) += s;
    }

    const int B = c.num_blocks;
    ws.h.resize(static_cast<std::size_t>(B + 1));
    ws.c.resize(static_cast<std::size_t>(B));
    ws.a.resize(static_cast<std::size_t>(B));
    ws.u.resize(static_cast<std::size_t>(B));

    ws.h[0].noalias() = ws.input * view(p, L.lift_w, H, c.input_channels()).transpose();
    ws.h[0].rowwise() += view(p, L.lift_b, 1, H).row(0);

    for (int b = 0; b < B; ++b) {
        const auto& blk = L.blocks[static_cast<std::size_t>(b)];
        const auto& h = ws.h[static_cast<std::size_t>(b)];
        auto& cb = ws.c[static_cast<std::size_t>(b)];
        const int dil = c.dilation(b);

        // Depthwise dilated temporal convolution, zero padded per entry.
        const Mat wT = view(p, blk.conv_w, H, K).transpose();
        cb.resize(R, H);
        cb.rowwise() = view(p, blk.conv_b, 1, H).row(0);
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < K; ++k) {
                const int off = (k - K / 2) * dil;
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                if (t1 <= t0) continue;
                cb.block(n * T + t0, 0, t1 - t0, H).array() +=
                    h.block(n * T + t0 + off, 0, t1 - t0, H).array().rowwise() * wT.row(k).array();
            }
        }
        // Additive injection of timestep embedding + summary.
        Mat g = ws.cond * view(p, blk.cond_w, H, E).transpose();
        g.rowwise() += view(p, blk.cond_b, 1, H).row(0);
        for (int n = 0; n < N; ++n) cb.block(n * T, 0, T, H).rowwise() += g.row(n);

        auto& ab = ws.a[static_cast<std::size_t>(b)];
        auto& ub = ws.u[static_cast<std::size_t>(b)];
        ab.noalias() = cb * view(p, blk.mlp_in_w, H, H).transpose();
        ab.rowwise() += view(p, blk.mlp_in_b, 1, H).row(0);
        ub = ab.array() * (S(1) + (-ab.array()).exp()).inverse();

        auto& hn = ws.h[static_cast<std::size_t>(b + 1)];
        hn = h;
        hn.noalias() += ub * view(p, blk.mlp_out_w, H, H).transpose();
        hn.rowwise() += view(p, blk.mlp_out_b, 1, H).row(0);
    }

    Mat out = ws.h[static_cast<std::size_t>(B)] * view(p, L.head_w, D, H).transpose();
    out.rowwise() += view(p, L.head_b, 1, D).row(0);
    return out;
}

template <class S>
void VelocityNet<S>::backward(std::span<const S> p, const Workspace& ws, std::span<const ResolvedConditions> entries,
                              const Mat& d_out, std::span<S> grad) const {
    const auto& c = config_;
    const auto& L = layout_;
    const int N = ws.entries;
    const int T = ws.frames;
    const int R = N * T;
    const int D = c.latent_dim;
    const int A = c.activity_dim;
    const int E = c.embed_dim;
    const int H = c.hidden_width;
    const int F = c.time_features;
    const int K = c.kernel_size;
    const int B = c.num_blocks;
    if (grad.size() != L.size()) throw Error(Errc::invalid_argument, "gradient vector size mismatch");
    if (d_out.rows() != R || d_out.cols() != D) throw Error(Errc::invalid_argument, "d_out shape mismatch");

    view(grad, L.head_w, D, H).noalias() += d_out.transpose() * ws.h[static_cast<std::size_t>(B)];
    view(grad, L.head_b, 1, D).row(0) += d_out.colwise().sum();
    Mat dh = d_out * view(p, L.head_w, D, H);

    Mat d_cond = Mat::Zero(N, E);
    for (int b = B - 1; b >= 0; --b) {
        const auto bi = static_cast<std::size_t>(b);
        const auto& blk = L.blocks[bi];
        const auto& h = ws.h[bi];
        const auto& cb = ws.c[bi];
        const auto& ab = ws.a[bi];
        const auto& ub = ws.u[bi];
        const int dil = c.dilation(b);

        // h_{b+1} = h_b + u W_out^T + b_out
        view(grad, blk.mlp_out_w, H, H).noalias() += dh.transpose() * ub;
        view(grad, blk.mlp_out_b, 1, H).row(0) += dh.colwise().sum();
        Mat du = dh * view(p, blk.mlp_out_w, H, H);

        // u = silu(a)
        const Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sig = (S(1) + (-ab.array()).exp()).inverse();
        Mat da = du.array() * sig * (S(1) + ab.array() * (S(1) - sig));

        // a = c W_in^T + b_in
        view(grad, blk.mlp_in_w, H, H).noalias() += da.transpose() * cb;
        view(grad, blk.mlp_in_b, 1, H).row(0) += da.colwise().sum();
        Mat dc = da * view(p, blk.mlp_in_w, H, H);

        // Injection: c += g_n over the frames of entry n.
        Mat dg(N, H);
        for (int n = 0; n < N; ++n) dg.row(n) = dc.block(n * T, 0, T, H).colwise().sum();
        view(grad, blk.cond_w, H, E).noalias() += dg.transpose() * ws.cond;
        view(grad, blk.cond_b, 1, H).row(0) += dg.colwise().sum();
        d_cond.noalias() += dg * view(p, blk.cond_w, H, E);

        // Depthwise convolution.
        view(grad, blk.conv_b, 1, H).row(0) += dc.colwise().sum();
        const Mat wT = view(p, blk.conv_w, H, K).transpose();
        Mat dwT = Mat::Zero(K, H);
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < K; ++k) {
                const int off = (k - K / 2) * dil;
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                if (t1 <= t0) continue;
                const auto dcb = dc.block(n * T + t0, 0, t1 - t0, H).array();
                dwT.row(k) += (dcb * h.block(n * T + t0 + off, 0, t1 - t0, H).array()).matrix().colwise().sum();
                dh.block(n * T + t0 + off, 0, t1 - t0, H).array() += dcb.rowwise() * wT.row(k).array();
            }
        }
        view(grad, blk.conv_w, H, K) += dwT.transpose();
    }

    // h_0 = input W_lift^T + b_lift
    view(grad, L.lift_w, H, c.input_channels()).noalias() += dh.transpose() * ws.input;
    view(grad, L.lift_b, 1, H).row(0) += dh.colwise().sum();
    const Mat d_act_cols = dh * view(p, L.lift_w, H, c.input_channels()).rightCols(A);
    auto g_act = view(grad, L.activity_emb, 3, A);
    for (int n = 0; n < N; ++n) {
        const auto& r = entries[static_cast<std::size_t>(n)];
        for (int f = 0; f < T; ++f) g_act.row(r.activity_rows[static_cast<std::size_t>(f)]) += d_act_cols.row(n * T + f);
    }

    // cond = time_feat W_t^T + b_t + summary
    view(grad, L.time_w, E, 2 * F).noalias() += d_cond.transpose() * ws.time_feat;
    view(grad, L.time_b, 1, E).row(0) += d_cond.colwise().sum();
    auto g_stem = view(grad, L.stem_emb, kNumStemTypes + 1, E);
    auto g_style = view(grad, L.style_emb, kNumStyles + 1, E);
    auto g_tempo = view(grad, L.tempo_emb, static_cast<int>(kTempoGrid.size()) + 1, E);
    auto g_ctx = view(grad, L.context_emb, kNumStemTypes, E);
    auto g_ctx_null = view(grad, L.context_null, 1, E);
    for (int n = 0; n < N; ++n) {
        const auto& r = entries[static_cast<std::size_t>(n)];
        g_stem.row(r.stem_row) += d_cond.row(n);
        g_style.row(r.style_row) += d_cond.row(n);
        g_tempo.row(r.tempo_row) += d_cond.row(n);
        if (r.context_null) {
            g_ctx_null.row(0) += d_cond.row(n);
        } else {
            for (int k = 0; k < kNumStemTypes; ++k) {
                if (r.context_bits & (1u << k)) g_ctx.row(k) += d_cond.row(n);
            }
        }
    }
}

template class VelocityNet<float>;
template class VelocityNet<double>;

VelocityModel::VelocityModel(ModelParams params)
    : params_(std::move(params)), aligned_(params_.values.begin(), params_.values.end()), net_(params_.config) {
    if (params_.values.size() != net_.layout().size()) {
        throw Error(Errc::invalid_argument, "parameter count does not match model config");
    }
}

Matrix VelocityModel::predict(const Matrix& x_t, std::span<const ResolvedConditions> entries, int frames) const {
    VelocityNet<float>::Workspace ws;
    const VelocityNet<float>::Mat x = x_t.cast<float>();
    const auto v = net_.forward(std::span<const float>(aligned_), x, entries, frames, ws);
    return v.cast<double>();
}

}  // namespace stemflow
