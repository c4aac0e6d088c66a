// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "stemflow/codec.hpp"
#include "stemflow/sampler.hpp"

using namespace stemflow;

namespace {

VelocityModel random_model(std::uint64_t seed = 8) {
    ModelConfig c;
    c.hidden_width = 16;
    c.num_blocks = 2;
    c.embed_dim = 8;
    c.time_features = 4;
    c.parameter_seed = seed;
    auto p = init_params(c);
    Rng rng(seed);
    std::normal_distribution<float> n(0.0f, 0.05f);
    for (auto& v : p.values) v += n(rng);
    return VelocityModel(std::move(p));
}

std::vector<StemRequest> requests(int k) {
    std::vector<StemRequest> out;
    for (int i = 0; i < k; ++i) out.push_back({static_cast<StemType>(i % kNumStemTypes), std::nullopt});
    return out;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd da = a.array() - a.mean();
    const Eigen::VectorXd db = b.array() - b.mean();
    return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

}  // namespace

TEST_CASE("cfg window scaling") {
    CHECK(default_cfg_window(32).lo == 3);
    CHECK(default_cfg_window(32).hi == 28);
    CHECK(default_cfg_window(1).empty());
    CHECK(default_cfg_window(4).empty());
    CHECK(default_cfg_window(8).lo == 1);
    CHECK(default_cfg_window(8).hi == 7);
    CHECK(default_cfg_window(64).lo == 6);
    CHECK(default_cfg_window(64).hi == 56);

    SampleConfig bad;
    bad.cfg_window = CfgWindow{0, 5};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad.cfg_window = CfgWindow{3, 40};
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = SampleConfig{};
    bad.num_steps = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("cfg_velocity") {
    const Matrix one = Matrix::Ones(4, kLatentDim);
    const Matrix zero = Matrix::Zero(4, kLatentDim);
    const CfgWindow w{3, 28};
    CHECK(cfg_velocity(one, zero, 3.0, 10, w) == Matrix::Constant(4, kLatentDim, 3.0));
    CHECK(cfg_velocity(one, zero, 3.0, 2, w) == one);
    CHECK(cfg_velocity(one, zero, 3.0, 29, w) == one);
    CHECK(cfg_velocity(one, zero, 1.0, 10, w) == one);
    Rng rng(3);
    std::normal_distribution<double> n;
    Matrix a(4, kLatentDim), b(4, kLatentDim);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a.data()[i] = n(rng);
        b.data()[i] = n(rng);
    }
    for (double s : {0.0, 2.0, 7.5}) CHECK(cfg_velocity(a, b, s, 1, w) == a);
    CHECK_THROWS_AS(cfg_velocity(a, Matrix::Zero(3, kLatentDim), 2.0, 10, w), Error);
}

TEST_CASE("euler recovers a single data point") {
    Rng rng(17);
    std::normal_distribution<double> n;
    Matrix x0(12, kLatentDim), eps(12, kLatentDim);
    for (Eigen::Index i = 0; i < x0.size(); ++i) {
        x0.data()[i] = n(rng);
        eps.data()[i] = n(rng);
    }
    const VelocityField v = [&](const Matrix& x, double t) -> Matrix { return (x0 - x) / t; };
    for (int steps : {1, 4, 32}) {
        CAPTURE(steps);
        const Matrix out = euler_integrate(eps, steps, v);
        CHECK((out - x0).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("single euler step") {
    const Matrix eps = Matrix::Constant(2, kLatentDim, 0.25);
    SampleConfig c;
    c.num_steps = 1;
    c.cfg_scale = 9.0;
    int calls = 0;
    const auto out = euler_integrate(eps, c, [&](const Matrix& x, double t, bool guided, Matrix& vc, Matrix& vu) {
        ++calls;
        CHECK(t == 1.0);
        CHECK(!guided);
        vc = -2.0 * x;
        vu = Matrix::Zero(x.rows(), x.cols());
    });
    CHECK(calls == 1);
    CHECK(out.isApprox(eps - 2.0 * eps));
}

TEST_CASE("guided euler follows the window") {
    SampleConfig c;
    c.cfg_scale = 3.0;
    const double a = 0.5, b = -1.0;
    int guided_steps = 0;
    const Matrix out = euler_integrate(Matrix::Zero(1, 1), c, [&](const Matrix&, double, bool guided, Matrix& vc, Matrix& vu) {
        guided_steps += guided;
        vc = Matrix::Constant(1, 1, a);
        vu = Matrix::Constant(1, 1, b);
    });
    CHECK(guided_steps == 26);
    const double expected = 26.0 / 32.0 * (b + 3.0 * (a - b)) + 6.0 / 32.0 * a;
    CHECK(out(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("euler matches a gaussian target with the closed-form velocity") {
    const double m = 0.7, s = 0.45;
    const VelocityField v = [&](const Matrix& x, double t) -> Matrix {
        const double a = 1.0 - t;
        const double k = (a * s * s - t) / (a * a * s * s + t * t);
        return (m + k * (x.array() - a * m)).matrix();
    };
    Rng rng(2024);
    std::normal_distribution<double> n;
    Matrix eps(10000, 1);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
    const Matrix out = euler_integrate(eps, 32, v);
    const double mean = out.mean();
    const double sd = std::sqrt((out.array() - mean).square().sum() / (out.size() - 1));
    CHECK(std::abs(mean - m) <= 0.03);
    CHECK(std::abs(sd - s) <= 0.03);
}

TEST_CASE("non-finite state names the step") {
    SampleConfig c;
    c.num_steps = 4;
    try {
        euler_integrate(Matrix::Zero(1, 1), c, [](const Matrix& x, double t, bool, Matrix& vc, Matrix&) {
            vc = Matrix::Constant(x.rows(), x.cols(), t < 0.6 ? NAN : 0.0);
        });
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::numeric);
        CHECK(std::string(e.what()).find("step 3") != std::string::npos);
    }
}

TEST_CASE("initial noise sharing") {
    const auto model = random_model();
    const auto req = requests(4);
    GenerationContext ctx;
    ctx.style_token = 2;
    ctx.tempo_bpm = 90;

    SampleConfig c;
    c.num_steps = 2;
    c.seed = 41;
    std::vector<Matrix> seen;
    SampleHooks hooks;
    hooks.on_initial_noise = [&](const std::vector<Matrix>& noise) { seen = noise; };
    euler_sample(model, req, ctx, c, 96, hooks);
    REQUIRE(seen.size() == 4);
    for (int k = 1; k < 4; ++k) CHECK(seen[k] == seen[0]);

    c.share_noise = false;
    Eigen::VectorXd a(0), b(0);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        c.seed = seed;
        euler_sample(model, std::span(req).first(2), ctx, c, 96, hooks);
        REQUIRE(seen.size() == 2);
        CHECK(seen[0] != seen[1]);
        const auto n = a.size();
        a.conservativeResize(n + seen[0].size());
        b.conservativeResize(n + seen[1].size());
        a.tail(seen[0].size()) = seen[0].reshaped();
        b.tail(seen[1].size()) = seen[1].reshaped();
    }
    CHECK(std::abs(correlation(a, b)) < 0.05);
}

TEST_CASE("sampling is deterministic and validates requests") {
    const auto model = random_model();
    const auto req = requests(3);
    SampleConfig c;
    c.num_steps = 8;
    c.seed = 5;
    const auto g1 = generate_from_scratch(model, req, 4, 120, c);
    const auto g2 = generate_from_scratch(model, req, 4, 120, c);
    REQUIRE(g1.latents.size() == 3);
    for (int k = 0; k < 3; ++k) CHECK(g1.latents[k] == g2.latents[k]);
    CHECK(g1.mix.samples == g2.mix.samples);
    c.seed = 6;
    CHECK(generate_from_scratch(model, req, 4, 120, c).latents[0] != g1.latents[0]);

    CHECK(euler_sample(model, {}, GenerationContext{}, c).empty());
    CHECK_THROWS_AS(generate_from_scratch(model, req, 4, 121, c), Error);
    CHECK_THROWS_AS(generate_from_scratch(model, req, 99, 120, c), Error);
    auto bad = req;
    bad[0].activity = ActivityMask(10, 1);
    CHECK_THROWS_AS(generate_from_scratch(model, bad, 4, 120, c), Error);
}

TEST_CASE("outputs are batch-independent under shared noise") {
    const auto model = random_model();
    SampleConfig c;
    c.num_steps = 8;
    c.seed = 12;
    const auto req = requests(4);
    const auto four = generate_from_scratch(model, req, 1, 105, c);
    const auto one = generate_from_scratch(model, std::span(req).first(1), 1, 105, c);
    CHECK((four.latents[0] - one.latents[0]).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("mix is loudness-normalized") {
    const auto model = random_model();
    SampleConfig c;
    c.num_steps = 4;
    const auto g = generate_from_scratch(model, requests(2), 0, 60, c);
    CHECK(std::abs(20.0 * std::log10(codec::rms(g.mix.samples)) + 16.0) <= 0.1);
    const auto single = generate_from_scratch(model, requests(1), 0, 60, c);
    CHECK(single.mix.samples == codec::normalize_mix(single.stems[0]).samples);
}

TEST_CASE("zero context equals from scratch") {
    const auto model = random_model();
    SampleConfig c;
    c.num_steps = 8;
    c.seed = 77;
    const auto req = requests(2);
    const auto scratch = generate_from_scratch(model, req, 3, 135, c);
    GenerationContext ctx;
    ctx.style_token = 3;
    ctx.tempo_bpm = 135;
    ctx.submix = std::make_shared<const Matrix>(Matrix::Zero(96, kLatentDim));
    const auto zero = generate(model, req, ctx, c);
    for (int k = 0; k < 2; ++k) CHECK(scratch.latents[k] == zero.latents[k]);

    const ContextStem drums{StemType::drums, scratch.latents[0]};
    const auto cond = generate_conditional(model, std::span(&drums, 1), std::span(req).subspan(1), 3, 135, c);
    REQUIRE(cond.latents.size() == 1);
    CHECK(cond.latents[0] != scratch.latents[1]);
    CHECK(generate_conditional(model, std::span(&drums, 1), {}, 3, 135, c).latents.empty());
    CHECK_THROWS_AS(generate_conditional(model, {}, req, 3, 135, c), Error);
}

TEST_CASE("workflow modes") {
    const auto model = random_model();
    SampleConfig c;
    c.num_steps = 4;
    c.seed = 19;

    const auto one = requests(1);
    const auto k1 = run_workflow(model, one, 0, 90, WorkflowMode::k_pass, c);
    const auto t1 = run_workflow(model, one, 0, 90, WorkflowMode::two_pass, c);
    const auto o1 = run_workflow(model, one, 0, 90, WorkflowMode::one_pass, c);
    CHECK(k1.generation.latents[0] == o1.generation.latents[0]);
    CHECK(t1.generation.latents[0] == o1.generation.latents[0]);

    const auto five = requests(5);
    const auto two = run_workflow(model, five, 0, 90, WorkflowMode::two_pass, c);
    CHECK(two.report.pass_sizes == std::vector<int>{3, 2});
    CHECK(two.report.per_pass_ms.size() == 2);
    CHECK(two.generation.stems.size() == 5);
    CHECK(two.generation.stems[4].stem_type == five[4].stem_type);
    const auto kp = run_workflow(model, five, 0, 90, WorkflowMode::k_pass, c);
    CHECK(kp.report.pass_sizes == std::vector<int>(5, 1));
    const auto op = run_workflow(model, five, 0, 90, WorkflowMode::one_pass, c);
    CHECK(op.report.pass_sizes == std::vector<int>{5});

    // The first pass is plain from-scratch sampling with the caller's seed.
    const auto scratch = generate_from_scratch(model, std::span(five).first(3), 0, 90, c);
    for (int k = 0; k < 3; ++k) CHECK(two.generation.latents[k] == scratch.latents[k]);

    const auto j = to_json(two.report);
    CHECK(j.at("mode") == "two_pass");
    CHECK(j.at("K") == 5);
    CHECK(j.at("conditioning") == "cumulative");
    CHECK(j.at("seed") == 19);
    CHECK(j.at("config").at("num_steps") == 4);
    CHECK(parse_workflow_mode("k_pass") == WorkflowMode::k_pass);
    CHECK_THROWS_AS(parse_workflow_mode("three_pass"), Error);
    CHECK_THROWS_AS(run_workflow(model, {}, 0, 90, WorkflowMode::one_pass, c), Error);
}

TEST_CASE("sample config json") {
    SampleConfig c;
    c.num_steps = 16;
    c.seed = 3;
    nlohmann::json j = c;
    CHECK(j.at("cfg_window") == nlohmann::json::array({2, 14}));
    const auto back = j.get<SampleConfig>();
    CHECK(back.window().lo == 2);
    CHECK(back.seed == 3);
    j["cfg_window"] = nlohmann::json::array({0, 3});
    CHECK_THROWS_AS(j.get<SampleConfig>(), Error);
    j["cfg_window"] = nlohmann::json::array();
    CHECK(j.get<SampleConfig>().window().empty());
}
