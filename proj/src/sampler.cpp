// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/sampler.hpp"

#include <chrono>
#include <cmath>

#include "stemflow/codec.hpp"

namespace stemflow {

using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseStream = 0x4e4f495345ull;
constexpr std::uint64_t kPassStream = 0x50415353ull;

Matrix standard_normal(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

std::uint64_t pass_seed(std::uint64_t seed, int pass) {
    if (pass == 0) return seed;
    Rng rng = derive_rng(seed, {kPassStream, static_cast<std::uint64_t>(pass)});
    return rng();
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

CfgWindow default_cfg_window(int num_steps) {
    const int lo = static_cast<int>(std::lround(3.0 * num_steps / 32.0));
    const int hi = std::min(num_steps, static_cast<int>(std::lround(28.0 * num_steps / 32.0)));
    if (lo < 1) return CfgWindow{1, 0};
    return CfgWindow{lo, hi};
}

CfgWindow SampleConfig::window() const { return cfg_window ? *cfg_window : default_cfg_window(num_steps); }

void SampleConfig::validate() const {
    if (num_steps < 1) throw Error(Errc::invalid_argument, "num_steps must be >= 1");
    if (!std::isfinite(cfg_scale)) throw Error(Errc::invalid_argument, "cfg_scale must be finite");
    const auto w = window();
    if (!w.empty() && (w.lo < 1 || w.hi > num_steps)) {
        throw Error(Errc::invalid_argument, "cfg window must lie within [1, num_steps]");
    }
}

void to_json(json& j, const SampleConfig& c) {
    const auto w = c.window();
    j = json{{"num_steps", c.num_steps},
             {"cfg_scale", c.cfg_scale},
             {"cfg_window", w.empty() ? json::array() : json::array({w.lo, w.hi})},
             {"share_noise", c.share_noise},
             {"seed", c.seed}};
}

void from_json(const json& j, SampleConfig& c) {
    c = SampleConfig{};
    c.num_steps = j.value("num_steps", c.num_steps);
    c.cfg_scale = j.value("cfg_scale", c.cfg_scale);
    c.share_noise = j.value("share_noise", c.share_noise);
    c.seed = j.value("seed", c.seed);
    if (j.contains("cfg_window")) {
        const auto& w = j.at("cfg_window");
        if (w.empty()) {
            c.cfg_window = CfgWindow{1, 0};
        } else if (w.size() == 2) {
            c.cfg_window = CfgWindow{w[0].get<int>(), w[1].get<int>()};
        } else {
            throw Error(Errc::invalid_argument, "cfg_window must be [lo, hi] or []");
        }
    }
    c.validate();
}

Matrix cfg_velocity(const Matrix& v_cond, const Matrix& v_uncond, double scale, int step, CfgWindow window) {
    if (v_cond.rows() != v_uncond.rows() || v_cond.cols() != v_uncond.cols()) {
        throw Error(Errc::invalid_argument, "cfg_velocity: shape mismatch");
    }
    if (!window.contains(step) || scale == 1.0) return v_cond;
    return v_uncond + scale * (v_cond - v_uncond);
}

Matrix euler_integrate(Matrix x, int num_steps, const VelocityField& v) {
    SampleConfig c;
    c.num_steps = num_steps;
    c.cfg_scale = 1.0;
    c.cfg_window = CfgWindow{1, 0};
    return euler_integrate(std::move(x), c, [&](const Matrix& xt, double t, bool, Matrix& vc, Matrix&) {
        vc = v(xt, t);
    });
}

Matrix euler_integrate(Matrix x, const SampleConfig& config, const GuidedField& field) {
    config.validate();
    const int N = config.num_steps;
    const double dt = 1.0 / N;
    const auto window = config.window();
    Matrix vc, vu;
    for (int n = 1; n <= N; ++n) {
        const double t = 1.0 - (n - 1) * dt;
        const bool guided = window.contains(n) && config.cfg_scale != 1.0;
        field(x, t, guided, vc, vu);
        if (guided) {
            x += dt * cfg_velocity(vc, vu, config.cfg_scale, n, window);
        } else {
            x += dt * vc;
        }
        if (!x.allFinite()) throw Error(Errc::numeric, "non-finite sampler state at step " + std::to_string(n));
    }
    return x;
}

std::vector<Matrix> euler_sample(const VelocityModel& model, std::span<const StemRequest> requests,
                                 const GenerationContext& context, const SampleConfig& config, int frames,
                                 const SampleHooks& hooks) {
    if (requests.empty()) return {};
    if (context.submix && (context.submix->rows() != frames || context.submix->cols() != kLatentDim)) {
        throw Error(Errc::invalid_argument, "context sub-mix must be " + std::to_string(frames) + " x 8");
    }
    const int K = static_cast<int>(requests.size());
    const int T = frames;

    std::vector<ConditionSet> sets;
    for (const auto& r : requests) {
        ConditionSet c;
        c.stem_type = r.stem_type;
        c.style_token = context.style_token;
        c.tempo_bpm = context.tempo_bpm;
        c.context_types = context.context_types;
        c.submix = context.submix;
        c.activity = r.activity;
        sets.push_back(std::move(c));
    }
    // Validates vocab and mask lengths before any work.
    for (const auto& c : sets) resolve_conditions(c, T, 1.0);

    Rng rng = derive_rng(config.seed, {kNoiseStream});
    std::vector<Matrix> initial;
    if (config.share_noise) {
        const Matrix eps = standard_normal(T, kLatentDim, rng);
        initial.assign(static_cast<std::size_t>(K), eps);
    } else {
        for (int k = 0; k < K; ++k) initial.push_back(standard_normal(T, kLatentDim, rng));
    }
    if (hooks.on_initial_noise) hooks.on_initial_noise(initial);

    Matrix x(K * T, kLatentDim);
    for (int k = 0; k < K; ++k) x.middleRows(k * T, T) = initial[static_cast<std::size_t>(k)];

    std::vector<ResolvedConditions> entries;
    Matrix stacked;
    const auto field = [&](const Matrix& xt, double t, bool guided, Matrix& vc, Matrix& vu) {
        entries.clear();
        for (const auto& c : sets) entries.push_back(resolve_conditions(c, T, t));
        if (!guided) {
            vc = model.predict(xt, entries, T);
            return;
        }
        for (int k = 0; k < K; ++k) entries.push_back(unconditional(T, t));
        stacked.resize(2 * K * T, kLatentDim);
        stacked.topRows(K * T) = xt;
        stacked.bottomRows(K * T) = xt;
        const Matrix v = model.predict(stacked, entries, T);
        vc = v.topRows(K * T);
        vu = v.bottomRows(K * T);
    };
    x = euler_integrate(std::move(x), config, field);

    std::vector<Matrix> out;
    for (int k = 0; k < K; ++k) out.push_back(x.middleRows(k * T, T));
    return out;
}

Generation render_generation(std::vector<Matrix> latents, std::span<const StemRequest> requests) {
    Generation g;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        auto w = codec::decode(StemLatent{latents[i]});
        if (i < requests.size()) w.stem_type = requests[i].stem_type;
        g.stems.push_back(std::move(w));
    }
    g.latents = std::move(latents);
    if (!g.stems.empty()) g.mix = codec::normalize_mix(codec::mix(g.stems));
    return g;
}

Generation generate(const VelocityModel& model, std::span<const StemRequest> requests,
                    const GenerationContext& context, const SampleConfig& config, const SampleHooks& hooks) {
    const int T = context.submix ? static_cast<int>(context.submix->rows()) : 96;
    return render_generation(euler_sample(model, requests, context, config, T, hooks), requests);
}

Generation generate_from_scratch(const VelocityModel& model, std::span<const StemRequest> requests, int style_token,
                                 int tempo_bpm, const SampleConfig& config, const SampleHooks& hooks) {
    GenerationContext ctx;
    ctx.style_token = style_token;
    ctx.tempo_bpm = tempo_bpm;
    return generate(model, requests, ctx, config, hooks);
}

namespace {

GenerationContext context_from(std::span<const ContextStem> context, int style_token, int tempo_bpm) {
    if (context.empty()) throw Error(Errc::invalid_argument, "conditional generation needs a context stem");
    GenerationContext ctx;
    ctx.style_token = style_token;
    ctx.tempo_bpm = tempo_bpm;
    std::vector<const Matrix*> parts;
    for (const auto& c : context) {
        parts.push_back(&c.latent);
        ctx.context_types |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(c.type));
    }
    ctx.submix = std::make_shared<const Matrix>(codec::sum_latents(parts));
    return ctx;
}

}  // namespace

Generation generate_conditional(const VelocityModel& model, std::span<const ContextStem> context,
                                std::span<const StemRequest> requests, int style_token, int tempo_bpm,
                                const SampleConfig& config, const SampleHooks& hooks) {
    if (requests.empty()) return {};
    return generate(model, requests, context_from(context, style_token, tempo_bpm), config, hooks);
}

std::string_view workflow_mode_name(WorkflowMode mode) {
    switch (mode) {
        case WorkflowMode::k_pass: return "k_pass";
        case WorkflowMode::two_pass: return "two_pass";
        case WorkflowMode::one_pass: return "one_pass";
    }
    return "?";
}

WorkflowMode parse_workflow_mode(std::string_view name) {
    if (name == "k_pass") return WorkflowMode::k_pass;
    if (name == "two_pass") return WorkflowMode::two_pass;
    if (name == "one_pass") return WorkflowMode::one_pass;
    throw Error(Errc::invalid_argument, "unknown mode '" + std::string(name) + "'");
}

json to_json(const WorkflowReport& r) {
    return json{{"mode", workflow_mode_name(r.mode)},
                {"K", r.stems},
                {"wall_time_ms", r.wall_time_ms},
                {"per_pass_ms", r.per_pass_ms},
                {"pass_sizes", r.pass_sizes},
                {"conditioning", r.mode == WorkflowMode::one_pass ? "none" : "cumulative"},
                {"seed", r.config.seed},
                {"config", r.config}};
}

WorkflowResult run_workflow(const VelocityModel& model, std::span<const StemRequest> requests, int style_token,
                            int tempo_bpm, WorkflowMode mode, const SampleConfig& config) {
    const int K = static_cast<int>(requests.size());
    if (K < 1) throw Error(Errc::invalid_argument, "workflow needs at least one stem");

    std::vector<int> sizes;
    switch (mode) {
        case WorkflowMode::k_pass: sizes.assign(static_cast<std::size_t>(K), 1); break;
        case WorkflowMode::two_pass:
            sizes.push_back((K + 1) / 2);
            if (K / 2 > 0) sizes.push_back(K / 2);
            break;
        case WorkflowMode::one_pass: sizes.push_back(K); break;
    }

    WorkflowResult result;
    result.report.mode = mode;
    result.report.stems = K;
    result.report.config = config;
    result.report.pass_sizes = sizes;

    std::vector<Matrix> latents;
    std::vector<ContextStem> done;
    int next = 0;
    for (std::size_t p = 0; p < sizes.size(); ++p) {
        const auto batch = requests.subspan(static_cast<std::size_t>(next), static_cast<std::size_t>(sizes[p]));
        SampleConfig pc = config;
        pc.seed = pass_seed(config.seed, static_cast<int>(p));
        const auto t0 = std::chrono::steady_clock::now();
        const GenerationContext ctx = done.empty() ? GenerationContext{style_token, tempo_bpm, nullptr, 0}
                                                   : context_from(done, style_token, tempo_bpm);
        auto out = euler_sample(model, batch, ctx, pc);
        result.report.per_pass_ms.push_back(elapsed_ms(t0));
        for (std::size_t i = 0; i < out.size(); ++i) {
            done.push_back(ContextStem{batch[i].stem_type, out[i]});
            latents.push_back(std::move(out[i]));
        }
        next += sizes[p];
    }
    for (double ms : result.report.per_pass_ms) result.report.wall_time_ms += ms;
    result.generation = render_generation(std::move(latents), requests);
    return result;
}

}  // namespace stemflow
