// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/eval.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "stemflow/codec.hpp"

namespace stemflow {

namespace {

constexpr int kMinLag = 4;
constexpr int kMaxLag = 16;

bool all_silent(std::span<const double> rms, double cutoff_db) {
    const double floor = db_to_amplitude(cutoff_db);
    return std::none_of(rms.begin(), rms.end(), [&](double r) { return r >= floor; });
}

// Autocorrelation and comb filter both skip silent frames.
Rhythm rhythm_from_envelope(std::span<const double> env, double cutoff_db) {
    const int T = static_cast<int>(env.size());
    const double floor = db_to_amplitude(cutoff_db);
    std::vector<char> live(static_cast<std::size_t>(T));
    double mean = 0.0;
    int active = 0;
    for (int f = 0; f < T; ++f) {
        live[f] = env[f] >= floor;
        if (live[f]) {
            mean += env[f];
            ++active;
        }
    }
    Rhythm r;
    if (active == 0) return r;
    mean /= active;
    double best = -std::numeric_limits<double>::infinity();
    for (int lag = kMinLag; lag <= std::min(kMaxLag, T - 1); ++lag) {
        double acc = 0.0;
        for (int f = 0; f + lag < T; ++f) {
            if (live[f] && live[f + lag]) acc += (env[f] - mean) * (env[f + lag] - mean);
        }
        acc /= active;
        if (acc > best) {
            best = acc;
            r.period = lag;
        }
    }
    if (r.period == 0) return r;
    best = -std::numeric_limits<double>::infinity();
    for (int ph = 0; ph < r.period; ++ph) {
        double acc = 0.0;
        int n = 0;
        for (int f = ph; f < T; f += r.period) {
            if (!live[f]) continue;
            acc += env[f] - mean;
            ++n;
        }
        if (n == 0) continue;
        acc /= n;
        if (acc > best) {
            best = acc;
            r.phase = ph;
        }
    }
    return r;
}

int circular_distance(int a, int b, int period) {
    const int d = std::abs(a - b) % period;
    return std::min(d, period - d);
}

Matrix stack(std::span<const FeatureVector> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), kFeatureDim);
    for (std::size_t i = 0; i < v.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
    return m;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Rhythm estimate_rhythm(std::span<const double> samples, double cutoff_db) {
    const auto env = codec::frame_rms(samples);
    if (env.empty() || all_silent(env, cutoff_db)) return {};
    return rhythm_from_envelope(env, cutoff_db);
}

FeatureVector extract_features(std::span<const double> samples, double cutoff_db) {
    FeatureVector f = FeatureVector::Zero();
    const auto env = codec::frame_rms(samples);
    const int T = static_cast<int>(env.size());
    if (T == 0) throw Error(Errc::invalid_argument, "empty clip");
    const auto latent = codec::encode(samples).frames;
    for (int d = 0; d < kLatentDim; ++d) f[kFeatEnergy + d] = latent.col(d).squaredNorm() / T;

    double mean = 0.0;
    for (double e : env) mean += e;
    mean /= T;
    double var = 0.0;
    for (double e : env) var += (e - mean) * (e - mean);
    f[kFeatEnvMean] = mean;
    f[kFeatEnvVar] = var / T;

    if (all_silent(env, cutoff_db)) return f;

    const auto r = rhythm_from_envelope(env, cutoff_db);
    f[kFeatPeriod] = r.period;
    f[kFeatPhase] = r.phase;
    const auto mask = codec::detect_activity(samples, cutoff_db);
    int active = 0;
    for (int t = 0; t < T; ++t) {
        if (!mask[static_cast<std::size_t>(t)]) continue;
        ++active;
        Eigen::Index idx = 0;
        latent.row(t).cwiseAbs().maxCoeff(&idx);
        f[kFeatHistogram + idx] += 1.0;
    }
    f[kFeatActivity] = static_cast<double>(active) / T;
    if (active > 0) f.segment<kLatentDim>(kFeatHistogram) /= active;
    return f;
}

double frechet_distance(const Matrix& a, const Matrix& b, std::size_t min_size) {
    if (a.cols() != b.cols()) throw Error(Errc::invalid_argument, "frechet: dimension mismatch");
    if (static_cast<std::size_t>(a.rows()) < min_size || static_cast<std::size_t>(b.rows()) < min_size) {
        throw Error(Errc::invalid_argument, "frechet: set smaller than " + std::to_string(min_size));
    }
    const Eigen::Index d = a.cols();
    auto moments = [&](const Matrix& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        mu = x.colwise().mean().transpose();
        const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
        cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
        cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    };
    Eigen::VectorXd ma, mb;
    Eigen::MatrixXd sa, sb;
    moments(a, ma, sa);
    moments(b, mb, sb);
    // tr((Sa Sb)^(1/2)) = tr((Sa^(1/2) Sb Sa^(1/2))^(1/2))
    const Eigen::MatrixXd ra = sqrt_psd(sa);
    const double cross = sqrt_psd(ra * sb * ra).trace();
    const double value = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross;
    return std::max(0.0, value);
}

double frechet_distance(std::span<const FeatureVector> a, std::span<const FeatureVector> b) {
    return frechet_distance(stack(a), stack(b), kMinFrechetSet);
}

FeatureScaler FeatureScaler::fit(std::span<const FeatureVector> reference) {
    if (reference.size() < 2) throw Error(Errc::invalid_argument, "scaler needs at least two samples");
    FeatureScaler s;
    const Matrix m = stack(reference);
    s.mean = m.colwise().mean().transpose();
    const Matrix c = m.rowwise() - s.mean.transpose();
    for (int i = 0; i < kFeatureDim; ++i) {
        const double sd = std::sqrt(c.col(i).squaredNorm() / static_cast<double>(m.rows() - 1));
        s.scale[i] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

FeatureVector FeatureScaler::apply(const FeatureVector& f) const { return (f - mean).cwiseQuotient(scale); }

MacroFad macro_fad_by_stem_type(std::span<const TypedFeature> generated, std::span<const TypedFeature> reference) {
    std::map<StemType, std::vector<FeatureVector>> gen, ref;
    for (const auto& g : generated) gen[g.type].push_back(g.features);
    for (const auto& r : reference) ref[r.type].push_back(r.features);
    MacroFad out;
    double sum = 0.0;
    for (const auto& [type, gfeat] : gen) {
        const auto it = ref.find(type);
        if (it == ref.end() || gfeat.size() < kMinFrechetSet || it->second.size() < kMinFrechetSet) {
            out.excluded.push_back(type);
            continue;
        }
        const double d = frechet_distance(gfeat, it->second);
        out.per_type[type] = d;
        sum += d;
    }
    if (out.per_type.empty()) throw Error(Errc::invalid_argument, "no stem type has enough samples for a Frechet distance");
    out.value = sum / static_cast<double>(out.per_type.size());
    return out;
}

double sync_coherence(std::span<const Rhythm> rhythms) {
    std::vector<Rhythm> live;
    for (const auto& r : rhythms) {
        if (r.period > 0) live.push_back(r);
    }
    if (live.empty()) {
        std::cerr << "warning: sync_coherence on all-silent stems\n";
        return 0.0;
    }
    std::map<int, int> period_count;
    for (const auto& r : live) ++period_count[r.period];
    int mode = 0, best = -1;
    for (const auto& [p, n] : period_count) {
        if (n > best) {
            best = n;
            mode = p;
        }
    }
    // Modal phase: the phase whose +-1 neighbourhood holds the most stems.
    int phase = 0;
    best = -1;
    for (int ph = 0; ph < mode; ++ph) {
        int n = 0;
        for (const auto& r : live) {
            if (r.period == mode && circular_distance(r.phase, ph, mode) <= 1) ++n;
        }
        if (n > best) {
            best = n;
            phase = ph;
        }
    }
    int hits = 0;
    for (const auto& r : live) {
        if (r.period == mode && circular_distance(r.phase, phase, mode) <= 1) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(live.size());
}

double sync_coherence(std::span<const StemWaveform> stems) {
    if (stems.empty()) throw Error(Errc::invalid_argument, "sync_coherence needs at least one stem");
    std::vector<Rhythm> r;
    for (const auto& s : stems) r.push_back(estimate_rhythm(s.samples));
    return sync_coherence(r);
}

double activity_f1(const ActivityMask& target, const ActivityMask& detected) {
    if (target.size() != detected.size()) throw Error(Errc::invalid_argument, "activity_f1: length mismatch");
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const bool t = target[i] != 0;
        const bool d = detected[i] != 0;
        tp += t && d;
        fp += !t && d;
        fn += t && !d;
    }
    if (tp + fp + fn == 0) return 1.0;
    return 2.0 * tp / (2.0 * tp + fp + fn);
}

double activity_f1(const ActivityMask& target, const StemWaveform& generated, double cutoff_db) {
    return activity_f1(target, codec::detect_activity(generated, cutoff_db));
}

StyleClassifier StyleClassifier::fit(std::span<const FeatureVector> mixes, std::span<const int> styles) {
    if (mixes.size() != styles.size()) throw Error(Errc::invalid_argument, "style classifier: size mismatch");
    StyleClassifier c;
    c.scaler_ = FeatureScaler::fit(mixes);
    std::map<int, int> counts;
    for (std::size_t i = 0; i < mixes.size(); ++i) {
        auto& cen = c.centroids_.try_emplace(styles[i], FeatureVector::Zero()).first->second;
        cen += c.scaler_.apply(mixes[i]);
        ++counts[styles[i]];
    }
    for (auto& [s, cen] : c.centroids_) cen /= counts[s];
    return c;
}

int StyleClassifier::predict(const FeatureVector& f) const {
    const FeatureVector z = scaler_.apply(f);
    int best = -1;
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& [s, cen] : centroids_) {
        const double d = (z - cen).squaredNorm();
        if (d < dist) {
            dist = d;
            best = s;
        }
    }
    return best;
}

std::vector<CompositionSpec> heldout_specs(int count, int stems, std::uint64_t seed,
                                           std::optional<double> partial_activity_prob) {
    CorpusConfig cfg;
    cfg.count = count;
    cfg.seed = seed;
    cfg.generator.min_stems = stems;
    cfg.generator.max_stems = stems;
    if (partial_activity_prob) cfg.generator.partial_activity_prob = *partial_activity_prob;
    return corpus_specs(cfg);
}

Reference build_reference(std::span<const CompositionSpec> specs) {
    Reference ref;
    for (const auto& spec : specs) {
        const auto stems = synthesize_composition(spec);
        for (const auto& s : stems) ref.stems.push_back({*s.stem_type, extract_features(s)});
        ref.mixes.push_back(extract_features(codec::normalize_mix(codec::mix(stems))));
        ref.mix_styles.push_back(spec.style);
    }
    std::vector<FeatureVector> sf;
    for (const auto& s : ref.stems) sf.push_back(s.features);
    ref.stem_scaler = FeatureScaler::fit(sf);
    ref.mix_scaler = FeatureScaler::fit(ref.mixes);
    ref.style = StyleClassifier::fit(ref.mixes, ref.mix_styles);
    return ref;
}

namespace {

std::vector<StemRequest> requests_for(const CompositionSpec& spec, bool use_masks) {
    std::vector<StemRequest> out;
    for (const auto& s : spec.stems) {
        StemRequest r;
        r.stem_type = s.type;
        if (use_masks) r.activity = planned_activity(s, spec.clip_frames);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

GeneratedSet generate_for_specs(const VelocityModel& model, std::span<const CompositionSpec> specs,
                                const SampleConfig& config, bool use_masks) {
    GeneratedSet out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto req = requests_for(specs[i], use_masks);
        SampleConfig c = config;
        c.seed = derive_rng(config.seed, {static_cast<std::uint64_t>(i)})();
        GenerationContext ctx;
        ctx.style_token = specs[i].style;
        ctx.tempo_bpm = specs[i].tempo_bpm;
        const auto t0 = std::chrono::steady_clock::now();
        auto latents = euler_sample(model, req, ctx, c, specs[i].clip_frames);
        out.wall_time_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.generations.push_back(render_generation(std::move(latents), req));
    }
    return out;
}

EvalCell evaluate_cell(const std::string& setting, bool infer_share, std::span<const CompositionSpec> specs,
                       const GeneratedSet& generated, const Reference& reference, bool use_masks) {
    EvalCell cell;
    cell.setting = setting;
    cell.infer_share = infer_share;
    cell.wall_time_ms = generated.wall_time_ms;

    std::vector<TypedFeature> gen_stems, ref_stems;
    std::vector<FeatureVector> gen_mix, ref_mix;
    double sync = 0.0, f1 = 0.0;
    int f1_count = 0, style_hits = 0;
    for (std::size_t i = 0; i < generated.generations.size(); ++i) {
        const auto& g = generated.generations[i];
        const auto& spec = specs[i];
        for (std::size_t k = 0; k < g.stems.size(); ++k) {
            gen_stems.push_back({spec.stems[k].type, reference.stem_scaler.apply(extract_features(g.stems[k]))});
            if (use_masks) {
                f1 += activity_f1(planned_activity(spec.stems[k], spec.clip_frames), g.stems[k]);
                ++f1_count;
            }
        }
        const FeatureVector mf = extract_features(g.mix);
        gen_mix.push_back(reference.mix_scaler.apply(mf));
        style_hits += reference.style.predict(mf) == spec.style;
        sync += sync_coherence(g.stems);
    }
    for (const auto& s : reference.stems) ref_stems.push_back({s.type, reference.stem_scaler.apply(s.features)});
    for (const auto& m : reference.mixes) ref_mix.push_back(reference.mix_scaler.apply(m));

    const double n = static_cast<double>(generated.generations.size());
    cell.fad_detail = macro_fad_by_stem_type(gen_stems, ref_stems);
    cell.fad_stem = cell.fad_detail.value;
    cell.fad_mix = frechet_distance(gen_mix, ref_mix);
    cell.style_acc = style_hits / n;
    cell.sync = sync / n;
    cell.f1 = f1_count > 0 ? f1 / f1_count : 1.0;
    return cell;
}

std::vector<EvalCell> run_eval_suite(const std::map<std::string, const VelocityModel*>& models,
                                     const EvalConfig& config) {
    const auto specs = heldout_specs(config.requests, config.stems_per_request, config.heldout_seed);
    const auto ref_specs =
        heldout_specs(config.reference_count, config.stems_per_request, config.heldout_seed + 1);
    const auto reference = build_reference(ref_specs);
    std::vector<EvalCell> cells;
    for (const auto& [setting, model] : models) {
        for (bool share : {false, true}) {
            if (model == nullptr) {
                EvalCell c;
                c.setting = setting;
                c.infer_share = share;
                c.present = false;
                cells.push_back(c);
                continue;
            }
            SampleConfig sc = config.sampler;
            sc.share_noise = share;
            const auto gen = generate_for_specs(*model, specs, sc, config.use_masks);
            cells.push_back(evaluate_cell(setting, share, specs, gen, reference, config.use_masks));
        }
    }
    return cells;
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = nlohmann::json{{"requests", c.requests},
                       {"stems_per_request", c.stems_per_request},
                       {"heldout_seed", c.heldout_seed},
                       {"reference_count", c.reference_count},
                       {"use_masks", c.use_masks},
                       {"include_timing", c.include_timing},
                       {"workflow_requests", c.workflow_requests},
                       {"sampler", c.sampler}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
    const EvalConfig d;
    c = d;
    c.requests = j.value("requests", d.requests);
    c.stems_per_request = j.value("stems_per_request", d.stems_per_request);
    c.heldout_seed = j.value("heldout_seed", d.heldout_seed);
    c.reference_count = j.value("reference_count", d.reference_count);
    c.use_masks = j.value("use_masks", d.use_masks);
    c.include_timing = j.value("include_timing", d.include_timing);
    c.workflow_requests = j.value("workflow_requests", d.workflow_requests);
    if (j.contains("sampler")) c.sampler = j.at("sampler").get<SampleConfig>();
    if (c.requests < 1 || c.stems_per_request < 1 || c.stems_per_request > kNumStemTypes) {
        throw Error(Errc::invalid_argument, "eval needs requests >= 1 and 1..6 stems per request");
    }
    if (c.reference_count < static_cast<int>(kMinFrechetSet) || c.workflow_requests < 0) {
        throw Error(Errc::invalid_argument, "reference_count too small or negative workflow_requests");
    }
}

std::vector<WorkflowTiming> time_workflows(const VelocityModel& model, const EvalConfig& config) {
    const auto specs = heldout_specs(config.workflow_requests, config.stems_per_request, config.heldout_seed);
    const std::array modes = {WorkflowMode::k_pass, WorkflowMode::two_pass, WorkflowMode::one_pass};
    std::vector<WorkflowTiming> rows;
    for (auto m : modes) rows.push_back({m, config.stems_per_request, 0, 0.0});
    for (std::size_t i = 0; i < specs.size(); ++i) {
        std::vector<StemRequest> req;
        for (const auto& s : specs[i].stems) req.push_back({s.type, std::nullopt});
        SampleConfig sc = config.sampler;
        sc.seed = derive_rng(config.sampler.seed, {static_cast<std::uint64_t>(i)})();
        for (std::size_t k = 0; k < modes.size(); ++k) {
            const auto r = run_workflow(model, req, specs[i].style, specs[i].tempo_bpm, modes[k], sc);
            rows[k].wall_time_ms += r.report.wall_time_ms;
            rows[k].requests += 1;
        }
    }
    return rows;
}

std::string format_workflow_timing(std::span<const WorkflowTiming> rows) {
    std::ostringstream os;
    os << "mode,K,requests,wall_time_ms,ratio_to_k_pass\n";
    double base = 0.0;
    for (const auto& r : rows) {
        if (r.mode == WorkflowMode::k_pass) base = r.wall_time_ms;
    }
    os << std::fixed;
    for (const auto& r : rows) {
        os << workflow_mode_name(r.mode) << ',' << r.stems << ',' << r.requests << ',' << std::setprecision(1)
           << r.wall_time_ms << ',' << std::setprecision(3) << (base > 0.0 ? r.wall_time_ms / base : 0.0) << '\n';
    }
    return os.str();
}

std::string format_report(std::span<const EvalCell> cells, bool include_timing) {
    std::ostringstream os;
    os << "setting,infer_share,fad_stem,fad_mix,style_acc,sync,f1,wall_time_ms\n";
    os << std::fixed << std::setprecision(6);
    for (const auto& c : cells) {
        os << c.setting << ',' << (c.infer_share ? "ii" : "i") << ',';
        if (!c.present) {
            os << "absent,absent,absent,absent,absent,absent\n";
            continue;
        }
        os << c.fad_stem << ',' << c.fad_mix << ',' << c.style_acc << ',' << c.sync << ',' << c.f1 << ',';
        if (include_timing) {
            os << std::setprecision(1) << c.wall_time_ms << std::setprecision(6);
        } else {
            os << "NA";
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace stemflow
