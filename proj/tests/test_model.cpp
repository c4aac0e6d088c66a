// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "stemflow/model.hpp"
#include "stemflow/trainer.hpp"

using namespace stemflow;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.hidden_width = 16;
    c.num_blocks = 2;
    c.embed_dim = 8;
    c.time_features = 4;
    c.parameter_seed = 5;
    return c;
}

std::vector<ResolvedConditions> random_conditions(int n, int frames, const Matrix* submix, Rng& rng) {
    std::vector<ResolvedConditions> out;
    for (int i = 0; i < n; ++i) {
        ResolvedConditions rc;
        rc.stem_row = static_cast<int>(rng() % 7);
        rc.style_row = static_cast<int>(rng() % 17);
        rc.tempo_row = static_cast<int>(rng() % 8);
        rc.context_null = rng() % 2 == 0;
        rc.context_bits = static_cast<std::uint8_t>(rng() % 64);
        rc.submix = submix;
        for (int f = 0; f < frames; ++f) rc.activity_rows.push_back(static_cast<std::uint8_t>(rng() % 3));
        rc.timestep = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        out.push_back(std::move(rc));
    }
    return out;
}

Matrix gaussian(int rows, int cols, Rng& rng) {
    std::normal_distribution<double> n;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace

TEST_CASE("parameter layout size matches the architecture formula") {
    const ModelConfig c;
    const int H = c.hidden_width, E = c.embed_dim, D = c.latent_dim, A = c.activity_dim, K = c.kernel_size;
    const std::size_t emb = static_cast<std::size_t>(7 + 17 + 8 + 6 + 1) * E + 3 * A;
    const std::size_t time = static_cast<std::size_t>(E) * 2 * c.time_features + E;
    const std::size_t lift = static_cast<std::size_t>(H) * c.input_channels() + H;
    const std::size_t block = static_cast<std::size_t>(H) * K + H + H * E + H + 2 * (H * H + H);
    const std::size_t head = static_cast<std::size_t>(D) * H + D;
    const ParamLayout layout(c);
    CHECK(layout.size() == emb + time + lift + c.num_blocks * block + head);
    CHECK(layout.size() >= 100000);
    CHECK(layout.size() <= 600000);
}

TEST_CASE("init is deterministic and the zero head gives zero output") {
    const auto c = tiny_config();
    const auto a = init_params(c);
    const auto b = init_params(c);
    CHECK(a.values == b.values);
    auto c2 = c;
    c2.parameter_seed = 6;
    CHECK(init_params(c2).values != a.values);

    Rng rng(1);
    const int T = 8;
    const Matrix sub = gaussian(T, kLatentDim, rng);
    const auto conds = random_conditions(3, T, &sub, rng);
    const VelocityModel model(a);
    const Matrix v = model.predict(gaussian(3 * T, kLatentDim, rng), conds, T);
    CHECK(v.rows() == 3 * T);
    CHECK(v.cols() == kLatentDim);
    CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finite-difference gradient check on 10 random parameters at T=8") {
    const auto c = tiny_config();
    const int T = 8;
    const int N = 3;
    Rng rng(11);
    const VelocityNet<double> net(c);
    std::vector<double> theta(net.layout().size());
    {
        std::normal_distribution<double> n(0.0, 0.3);
        for (auto& p : theta) p = n(rng);
    }
    const Matrix sub = gaussian(T, kLatentDim, rng);
    const auto conds = random_conditions(N, T, &sub, rng);
    const Matrix x = gaussian(N * T, kLatentDim, rng);
    const Matrix target = gaussian(N * T, kLatentDim, rng);

    auto loss_at = [&](const std::vector<double>& p) {
        VelocityNet<double>::Workspace ws;
        const Matrix v = net.forward(p, x, conds, T, ws);
        return rf_objective(v, target, T).loss;
    };
    VelocityNet<double>::Workspace ws;
    const Matrix v = net.forward(theta, x, conds, T, ws);
    const auto obj = rf_objective(v, target, T);
    std::vector<double> grad(theta.size(), 0.0);
    net.backward(theta, ws, conds, obj.d_velocity, grad);

    // One parameter from each of ten distinct tensors, so every layer kind is hit.
    const auto& tensors = net.layout().tensors();
    std::vector<std::size_t> picks;
    for (std::size_t k = 0; picks.size() < 10; k = (k + 3) % tensors.size()) {
        const auto& t = tensors[k];
        std::size_t idx = t.offset + rng() % t.size();
        if (std::abs(grad[idx]) < 1e-6) continue;
        picks.push_back(idx);
    }
    for (std::size_t idx : picks) {
        const double h = 1e-5;
        auto plus = theta, minus = theta;
        plus[idx] += h;
        minus[idx] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2 * h);
        const double rel = std::abs(fd - grad[idx]) / std::max(std::abs(fd), std::abs(grad[idx]));
        INFO("param " << idx << " analytic " << grad[idx] << " fd " << fd);
        CHECK(rel <= 1e-4);
    }
}

TEST_CASE("entries do not interact and permutation permutes outputs") {
    const auto c = tiny_config();
    const int T = 8;
    Rng rng(3);
    const VelocityNet<double> net(c);
    std::vector<double> theta(net.layout().size());
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& p : theta) p = n(rng);
    const Matrix sub = gaussian(T, kLatentDim, rng);
    auto conds = random_conditions(3, T, &sub, rng);
    const Matrix x = gaussian(3 * T, kLatentDim, rng);
    VelocityNet<double>::Workspace ws;
    const Matrix v = net.forward(theta, x, conds, T, ws);

    std::vector<ResolvedConditions> perm{conds[2], conds[0], conds[1]};
    Matrix xp(3 * T, kLatentDim);
    xp << x.middleRows(2 * T, T), x.middleRows(0, T), x.middleRows(T, T);
    const Matrix vp = net.forward(theta, xp, perm, T, ws);
    CHECK(vp.middleRows(0, T) == v.middleRows(2 * T, T));
    CHECK(vp.middleRows(T, T) == v.middleRows(0, T));
    CHECK(vp.middleRows(2 * T, T) == v.middleRows(T, T));

    const Matrix again = net.forward(theta, x, conds, T, ws);
    CHECK(again == v);
}

TEST_CASE("embed_conditions: null rows, active rows and per-stem differences") {
    ModelConfig c = tiny_config();
    auto params = init_params(c);
    const ParamLayout layout(c);
    const int T = 6;

    ConditionSet all_dropped;
    all_dropped.drop = DropFlags::all();
    all_dropped.activity = ActivityMask(T, 1);
    const auto e0 = embed_conditions(all_dropped, params, T);
    Eigen::VectorXd nulls = Eigen::VectorXd::Zero(c.embed_dim);
    auto row = [&](std::size_t off, int r) {
        Eigen::VectorXd v(c.embed_dim);
        for (int k = 0; k < c.embed_dim; ++k) v[k] = params.values[off + static_cast<std::size_t>(r * c.embed_dim + k)];
        return v;
    };
    nulls += row(layout.stem_emb, kNullStemRow) + row(layout.style_emb, kNullStyleRow) +
             row(layout.tempo_emb, kNullTempoRow) + row(layout.context_null, 0);
    CHECK((e0.summary - nulls).norm() < 1e-6);
    CHECK(e0.channel_map.leftCols(kLatentDim).cwiseAbs().maxCoeff() == 0.0);
    for (int f = 0; f < T; ++f) {
        for (int k = 0; k < c.activity_dim; ++k) {
            CHECK(e0.channel_map(f, kLatentDim + k) ==
                  doctest::Approx(params.values[layout.activity_emb + kActivityUnconstrainedRow * c.activity_dim + k]));
        }
    }

    ConditionSet on;
    on.activity = ActivityMask(T, 1);
    const auto e1 = embed_conditions(on, params, T);
    for (int f = 0; f < T; ++f) {
        for (int k = 0; k < c.activity_dim; ++k) {
            CHECK(e1.channel_map(f, kLatentDim + k) ==
                  doctest::Approx(params.values[layout.activity_emb + kActivityActiveRow * c.activity_dim + k]));
        }
    }

    ConditionSet drums, bass;
    drums.stem_type = StemType::drums;
    bass.stem_type = StemType::bass;
    drums.style_token = bass.style_token = 4;
    drums.tempo_bpm = bass.tempo_bpm = 90;
    drums.context_types = bass.context_types = 0b100;
    const auto ed = embed_conditions(drums, params, T);
    const auto eb = embed_conditions(bass, params, T);
    const Eigen::VectorXd diff = ed.summary - eb.summary;
    const Eigen::VectorXd expect = row(layout.stem_emb, 0) - row(layout.stem_emb, 1);
    CHECK((diff - expect).norm() < 1e-6);

    ConditionSet bad;
    bad.style_token = 16;
    CHECK_THROWS_AS(embed_conditions(bad, params, T), Error);
    bad.style_token = 0;
    bad.activity = ActivityMask(T + 1, 1);
    CHECK_THROWS_AS(embed_conditions(bad, params, T), Error);
}

TEST_CASE("unconditional point is fixed") {
    const auto c = tiny_config();
    auto params = init_params(c);
    Rng rng(2);
    std::normal_distribution<double> n(0.0, 0.2);
    for (auto& p : params.values) p = static_cast<float>(n(rng));
    const VelocityModel model(params);
    const int T = 8;
    const std::vector<ResolvedConditions> u{unconditional(T, 0.4)};
    const Matrix x = gaussian(T, kLatentDim, rng);
    CHECK(model.predict(x, u, T) == model.predict(x, u, T));
}
