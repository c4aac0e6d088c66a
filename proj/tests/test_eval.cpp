// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "stemflow/codec.hpp"
#include "stemflow/composition.hpp"
#include "stemflow/eval.hpp"

using namespace stemflow;

namespace {

Matrix gaussian_sample(int n, const Eigen::VectorXd& mu, const Eigen::VectorXd& sd, Rng& rng) {
    std::normal_distribution<double> z;
    Matrix m(n, mu.size());
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index d = 0; d < mu.size(); ++d) m(i, d) = mu[d] + sd[d] * z(rng);
    }
    return m;
}

CompositionSpec spec_at(int tempo, int phase, std::vector<StemType> types) {
    CompositionSpec s;
    s.tempo_bpm = tempo;
    s.phase = phase;
    s.style = 5;
    std::uint64_t seed = 11;
    for (auto t : types) s.stems.push_back(StemSpec{t, seed++, -20.0, {}});
    return s;
}

StemWaveform shifted(const StemWaveform& w, int frames) {
    StemWaveform out = w;
    std::rotate(out.samples.begin(), out.samples.end() - frames * kHop, out.samples.end());
    return out;
}

}  // namespace

TEST_CASE("frechet closed forms") {
    Rng rng(4);
    const Eigen::VectorXd mu = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    const Eigen::VectorXd sd = Eigen::VectorXd::Constant(5, 0.8);
    const Matrix a = gaussian_sample(200, mu, sd, rng);

    CHECK(frechet_distance(a, a) <= 1e-6);

    Eigen::RowVectorXd d(5);
    d << 0.5, -1.0, 2.0, 0.0, 0.25;
    const Matrix b = a.rowwise() + d;
    CHECK(frechet_distance(a, b) == doctest::Approx(d.squaredNorm()).epsilon(1e-9));
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-12));

    const Eigen::VectorXd mu_a = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd mu_b(4), sd_a(4), sd_b(4);
    mu_b << 1.0, -0.5, 0.0, 2.0;
    sd_a << 1.0, 2.0, 0.5, 1.0;
    sd_b << 1.5, 1.0, 0.5, 3.0;
    const double analytic = (mu_a - mu_b).squaredNorm() + (sd_a - sd_b).squaredNorm();
    const Matrix ga = gaussian_sample(10000, mu_a, sd_a, rng);
    const Matrix gb = gaussian_sample(10000, mu_b, sd_b, rng);
    CHECK(std::abs(frechet_distance(ga, gb) - analytic) <= 0.05 * analytic);

    CHECK_THROWS_AS(frechet_distance(a, Matrix(a.leftCols(3))), Error);
    CHECK_THROWS_AS(frechet_distance(a.topRows(3), a, 4), Error);
}

TEST_CASE("macro frechet averages over stem types") {
    Rng rng(8);
    std::normal_distribution<double> z;
    std::vector<TypedFeature> ref, gen;
    for (int i = 0; i < 60; ++i) {
        for (auto t : {StemType::drums, StemType::bass}) {
            FeatureVector f;
            for (int d = 0; d < kFeatureDim; ++d) f[d] = z(rng);
            ref.push_back({t, f});
        }
    }
    const auto same = macro_fad_by_stem_type(ref, ref);
    CHECK(same.value <= 1e-6);
    CHECK(same.per_type.size() == 2);

    FeatureVector shift = FeatureVector::Zero();
    shift[0] = 1.0;
    for (const auto& r : ref) gen.push_back({r.type, r.type == StemType::drums ? FeatureVector(r.features + 2.0 * shift) : r.features});
    for (int i = 0; i < 3; ++i) gen.push_back({StemType::lead, FeatureVector::Zero()});
    const auto m = macro_fad_by_stem_type(gen, ref);
    CHECK(m.per_type.at(StemType::drums) == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(m.value == doctest::Approx((m.per_type.at(StemType::drums) + m.per_type.at(StemType::bass)) / 2.0));
    CHECK(m.excluded == std::vector<StemType>{StemType::lead});
}

TEST_CASE("features of synthesized stems") {
    const auto spec = spec_at(120, 2, {StemType::drums, StemType::bass, StemType::pad});
    const auto stems = synthesize_composition(spec);
    for (const auto& s : stems) {
        const auto r = estimate_rhythm(s.samples);
        CHECK(r.period == 6);
        CHECK(r.phase == 2);
        const auto f = extract_features(s);
        CHECK(f.size() == 21);
        CHECK(f.allFinite());
        CHECK(f[kFeatPeriod] == 6);
        CHECK(f[kFeatActivity] == 1.0);
        CHECK(f.segment<kLatentDim>(kFeatHistogram).sum() == doctest::Approx(1.0));
    }

    const std::vector<double> silence(static_cast<std::size_t>(96 * kHop), 0.0);
    const auto f = extract_features(silence);
    CHECK(f[kFeatPeriod] == 0);
    CHECK(f[kFeatActivity] == 0);
    CHECK(f.isZero());
    CHECK(estimate_rhythm(silence).period == 0);
}

TEST_CASE("sync coherence") {
    for (int tempo : kTempoGrid) {
        for (int phase : {0, 1, 3}) {
            const auto spec = spec_at(tempo, phase % frames_per_beat(tempo),
                                      {StemType::drums, StemType::bass, StemType::keys, StemType::lead});
            CAPTURE(tempo);
            CHECK(sync_coherence(synthesize_composition(spec)) >= 0.99);
        }
    }

    auto stems = synthesize_composition(spec_at(120, 0, {StemType::drums, StemType::bass, StemType::keys, StemType::guitar}));
    CHECK(sync_coherence(std::span(stems).first(1)) == 1.0);
    auto reversed = stems;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(sync_coherence(reversed) == sync_coherence(stems));

    const auto slow = synthesize_composition(spec_at(90, 0, {StemType::bass}));
    const std::vector<StemWaveform> two = {stems[0], slow[0]};
    CHECK(sync_coherence(two) == 0.5);

    auto off = stems;
    off[3] = shifted(off[3], 3);
    CHECK(sync_coherence(off) == 0.75);
    off[3] = shifted(stems[3], 1);
    CHECK(sync_coherence(off) == 1.0);

    std::vector<Rhythm> silent(3);
    CHECK(sync_coherence(silent) == 0.0);
    const std::vector<Rhythm> wrap = {{6, 0}, {6, 5}, {6, 1}, {6, 3}};
    CHECK(sync_coherence(wrap) == 0.75);
}

TEST_CASE("activity f1") {
    ActivityMask half(96, 1);
    for (int f = 0; f < 48; ++f) half[f] = 0;
    ActivityMask complement(96);
    for (int f = 0; f < 96; ++f) complement[f] = !half[f];
    CHECK(activity_f1(half, half) == 1.0);
    CHECK(activity_f1(half, complement) == 0.0);
    CHECK(activity_f1(ActivityMask(96, 0), ActivityMask(96, 0)) == 1.0);
    ActivityMask most = half;
    most[10] = 1;
    CHECK(activity_f1(half, most) == doctest::Approx(2.0 * 48 / (2.0 * 48 + 1)));
    CHECK_THROWS_AS(activity_f1(half, ActivityMask(95, 1)), Error);

    auto spec = spec_at(105, 1, {StemType::drums, StemType::bass});
    spec.stems[0].silent = {{0, 48}};
    spec.stems[1].silent = {{20, 30}, {70, 96}};
    const auto stems = synthesize_composition(spec);
    for (std::size_t k = 0; k < stems.size(); ++k) {
        CHECK(activity_f1(planned_activity(spec.stems[k], 96), stems[k]) == 1.0);
    }
    CHECK(activity_f1(complement, stems[0]) == 0.0);
}

TEST_CASE("style classifier and reference") {
    const auto specs = heldout_specs(96, 3, 31);
    for (const auto& s : specs) CHECK(s.stems.size() == 3);
    const auto ref = build_reference(specs);
    CHECK(ref.stems.size() == 96 * 3);
    CHECK(ref.mixes.size() == 96);
    int hits = 0;
    for (std::size_t i = 0; i < ref.mixes.size(); ++i) hits += ref.style.predict(ref.mixes[i]) == ref.mix_styles[i];
    CHECK(hits > 96 / kNumStyles);

    FeatureScaler sc = FeatureScaler::fit(ref.mixes);
    FeatureVector mean = FeatureVector::Zero();
    for (const auto& m : ref.mixes) mean += sc.apply(m);
    CHECK((mean / 96.0).cwiseAbs().maxCoeff() < 1e-9);

    const auto partial = heldout_specs(16, 4, 31, 1.0);
    for (const auto& s : partial) {
        for (const auto& st : s.stems) CHECK(!st.silent.empty());
    }
}

TEST_CASE("ground truth scores well against its own reference") {
    const auto specs = heldout_specs(64, 4, 91);
    const auto ref = build_reference(heldout_specs(256, 4, 92));
    GeneratedSet truth;
    for (const auto& s : specs) {
        Generation g;
        g.stems = synthesize_composition(s);
        g.mix = codec::normalize_mix(codec::mix(g.stems));
        truth.generations.push_back(std::move(g));
    }
    const auto cell = evaluate_cell("truth", true, specs, truth, ref, true);
    CHECK(cell.sync >= 0.99);
    CHECK(cell.f1 == 1.0);
    CHECK(cell.fad_mix >= 0.0);
    CHECK(cell.fad_mix < 5.0);
    CHECK(cell.fad_stem < 10.0);

    std::vector<EvalCell> cells = {cell};
    EvalCell absent;
    absent.setting = "B";
    absent.present = false;
    cells.push_back(absent);
    const auto report = format_report(cells, false);
    CHECK(report.rfind("setting,infer_share,fad_stem,fad_mix,style_acc,sync,f1,wall_time_ms\n", 0) == 0);
    CHECK(report.find("truth,ii,") != std::string::npos);
    CHECK(report.find(",NA\n") != std::string::npos);
    CHECK(report.find("B,i,absent") != std::string::npos);
}
