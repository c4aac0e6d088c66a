// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stemflow/io.hpp"

namespace stemflow {

using nlohmann::json;

TrainConfig config_for_setting(std::string_view setting, TrainConfig base) {
    if (setting == "A") {
        base.batcher.grouping = false;
        base.batcher.noise_sharing = false;
    } else if (setting == "B") {
        base.batcher.grouping = true;
        base.batcher.noise_sharing = false;
    } else if (setting == "C") {
        base.batcher.grouping = true;
        base.batcher.noise_sharing = true;
    } else {
        throw Error(Errc::invalid_argument, "unknown setting '" + std::string(setting) + "' (want A, B or C)");
    }
    base.setting = std::string(setting);
    return base;
}

void to_json(json& j, const TrainConfig& c) {
    const auto& b = c.batcher;
    j = json{{"steps", c.steps},
             {"learning_rate", c.learning_rate},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps},
             {"weight_decay", c.weight_decay},
             {"checkpoint_every", c.checkpoint_every},
             {"seed", c.seed},
             {"setting", c.setting},
             {"batch_size", b.batch_size},
             {"group_sampling", b.grouping ? "grouped" : "independent"},
             {"noise_sharing", b.noise_sharing ? "shared" : "independent"},
             {"conditional_fraction", b.conditional_fraction},
             {"dropout_p", b.dropout_p},
             {"timestep_mu", b.timestep_mu},
             {"timestep_sigma", b.timestep_sigma},
             {"share_timestep_in_group", b.share_timestep_in_group},
             {"activity_conditioning", b.activity_conditioning},
             {"model", c.model}};
}

void from_json(const json& j, TrainConfig& c) {
    TrainConfig d;
    if (j.contains("setting")) d = config_for_setting(j.at("setting").get<std::string>(), d);
    c = d;
    c.steps = j.value("steps", d.steps);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.adam_eps = j.value("adam_eps", d.adam_eps);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.seed = j.value("seed", d.seed);
    auto& b = c.batcher;
    b.batch_size = j.value("batch_size", d.batcher.batch_size);
    if (j.contains("group_sampling")) {
        const auto v = j.at("group_sampling").get<std::string>();
        if (v != "grouped" && v != "independent") throw Error(Errc::invalid_argument, "bad group_sampling");
        b.grouping = v == "grouped";
    }
    if (j.contains("noise_sharing")) {
        const auto v = j.at("noise_sharing").get<std::string>();
        if (v != "shared" && v != "independent") throw Error(Errc::invalid_argument, "bad noise_sharing");
        b.noise_sharing = v == "shared";
    }
    b.conditional_fraction = j.value("conditional_fraction", d.batcher.conditional_fraction);
    b.dropout_p = j.value("dropout_p", d.batcher.dropout_p);
    b.timestep_mu = j.value("timestep_mu", d.batcher.timestep_mu);
    b.timestep_sigma = j.value("timestep_sigma", d.batcher.timestep_sigma);
    b.share_timestep_in_group = j.value("share_timestep_in_group", d.batcher.share_timestep_in_group);
    b.activity_conditioning = j.value("activity_conditioning", d.batcher.activity_conditioning);
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (!(c.learning_rate >= 0.0)) throw Error(Errc::invalid_argument, "learning_rate must be >= 0");
    if (c.steps < 0) throw Error(Errc::invalid_argument, "steps must be >= 0");
}

Objective rf_objective(const Matrix& velocity, const Matrix& target_velocity, int frames) {
    if (velocity.rows() != target_velocity.rows() || velocity.cols() != target_velocity.cols() || frames <= 0 ||
        velocity.rows() % frames != 0) {
        throw Error(Errc::invalid_argument, "rf_objective: shape mismatch");
    }
    const auto N = velocity.rows() / frames;
    const double norm = static_cast<double>(frames) * static_cast<double>(velocity.cols());
    Objective obj;
    obj.d_velocity = velocity - target_velocity;
    obj.per_entry.resize(static_cast<std::size_t>(N));
    for (Eigen::Index n = 0; n < N; ++n) {
        const double e = obj.d_velocity.middleRows(n * frames, frames).squaredNorm() / norm;
        if (!std::isfinite(e)) {
            throw Error(Errc::numeric, "non-finite loss at batch entry " + std::to_string(n));
        }
        obj.per_entry[static_cast<std::size_t>(n)] = e;
        obj.loss += e;
    }
    obj.loss /= static_cast<double>(N);
    obj.d_velocity *= 2.0 / (norm * static_cast<double>(N));
    return obj;
}

BatchTensors prepare_batch(const Dataset& dataset, const TrainingBatch& batch) {
    const int T = batch.clip_frames;
    const auto N = static_cast<Eigen::Index>(batch.entries.size());
    BatchTensors bt;
    bt.noised.resize(N * T, kLatentDim);
    bt.target_velocity.resize(N * T, kLatentDim);
    bt.conditions.reserve(batch.entries.size());
    for (Eigen::Index n = 0; n < N; ++n) {
        const auto& e = batch.entries[static_cast<std::size_t>(n)];
        const Matrix& x = target_latent(dataset, e);
        const Matrix& eps = batch.noise(e);
        bt.noised.middleRows(n * T, T) = (1.0 - e.timestep) * x + e.timestep * eps;
        bt.target_velocity.middleRows(n * T, T) = x - eps;
        bt.conditions.push_back(resolve_conditions(e.conditions, T, e.timestep));
    }
    return bt;
}

template <class S>
LossAndGrad<S> rf_loss(const VelocityNet<S>& net, std::span<const S> params, const Dataset& dataset,
                       const TrainingBatch& batch) {
    using Mat = typename VelocityNet<S>::Mat;
    const auto bt = prepare_batch(dataset, batch);
    typename VelocityNet<S>::Workspace ws;
    const AlignedVector<S> theta(params.begin(), params.end());
    AlignedVector<S> grad(params.size(), S(0));
    const Mat x = bt.noised.template cast<S>();
    const Mat v = net.forward(theta, x, bt.conditions, batch.clip_frames, ws);
    const auto obj = rf_objective(v.template cast<double>(), bt.target_velocity, batch.clip_frames);
    net.backward(theta, ws, bt.conditions, obj.d_velocity.template cast<S>(), std::span<S>(grad));
    LossAndGrad<S> out;
    out.loss = obj.loss;
    out.grad.assign(grad.begin(), grad.end());
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
        if (!std::isfinite(out.grad[i])) {
            throw Error(Errc::numeric, "non-finite gradient for parameter index " + std::to_string(i));
        }
    }
    return out;
}

template LossAndGrad<float> rf_loss(const VelocityNet<float>&, std::span<const float>, const Dataset&,
                                    const TrainingBatch&);
template LossAndGrad<double> rf_loss(const VelocityNet<double>&, std::span<const double>, const Dataset&,
                                     const TrainingBatch&);

TrainState init_train_state(const TrainConfig& config) {
    TrainState s;
    s.params = init_params(config.model);
    s.adam_m.assign(s.params.values.size(), 0.0f);
    s.adam_v.assign(s.params.values.size(), 0.0f);
    return s;
}

TrainingBatch batch_for_step(const Dataset& dataset, const TrainConfig& config, std::int64_t step) {
    Rng rng = derive_rng(config.seed, {0x42415443ull, static_cast<std::uint64_t>(step)});
    return make_training_batch(dataset, config.batcher, rng);
}

namespace {

// Single-writer per-process cache of the net for a given config.
const VelocityNet<float>& net_for(const ModelConfig& config) {
    thread_local std::optional<VelocityNet<float>> cached;
    thread_local json key;
    json k = config;
    if (!cached || k != key) {
        cached.emplace(config);
        key = k;
    }
    return *cached;
}

}  // namespace

void train_step(TrainState& state, const TrainConfig& config, const Dataset& dataset, const TrainingBatch& batch) {
    const auto& net = net_for(state.params.config);
    auto& theta = state.params.values;
    const auto lg = rf_loss<float>(net, std::span<const float>(theta), dataset, batch);

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    const double lr = config.learning_rate;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = lg.grad[i];
        const double m = config.beta1 * state.adam_m[i] + (1.0 - config.beta1) * g;
        const double v = config.beta2 * state.adam_v[i] + (1.0 - config.beta2) * g * g;
        state.adam_m[i] = static_cast<float>(m);
        state.adam_v[i] = static_cast<float>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + config.adam_eps);
        const double p = theta[i];
        theta[i] = static_cast<float>(p - lr * (update + config.weight_decay * p));
    }
    state.losses.push_back(lg.loss);
}

TrainState train(const TrainConfig& config, const Dataset& dataset, const TrainOptions& options,
                 std::optional<TrainState> resume) {
    TrainState state = resume ? std::move(*resume) : init_train_state(config);
    std::ofstream log;
    if (options.out_dir) {
        std::filesystem::create_directories(*options.out_dir);
        const auto log_path = *options.out_dir / "train_log.csv";
        const bool fresh = state.step == 0;
        log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw Error(Errc::io, "cannot write " + log_path.string());
        if (fresh) log << "step,loss,wall_ms,setting\n";
    }
    while (state.step < config.steps) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batch = batch_for_step(dataset, config, state.step);
        train_step(state, config, dataset, batch);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (log.is_open()) {
            log << state.step << ',' << state.losses.back() << ',' << ms << ',' << config.setting << '\n';
        }
        if (options.on_step) options.on_step(state.step, state.losses.back());
        if (options.out_dir && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
            save_checkpoint(*options.out_dir / ("step_" + std::to_string(state.step) + ".sfck"), config, state);
        }
    }
    if (options.out_dir) save_checkpoint(*options.out_dir / "final.sfck", config, state);
    return state;
}

std::string encode_checkpoint(const TrainConfig& config, const TrainState& state) {
    const ParamLayout layout(state.params.config);
    json tensors = json::array();
    for (const auto& t : layout.tensors()) {
        tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
    }
    const bool has_moments = state.adam_m.size() == state.params.values.size();
    json header{{"format_version", kCheckpointVersion},
                {"model", state.params.config},
                {"train", config},
                {"provenance", {{"seed", config.seed}, {"step", state.step}, {"setting", config.setting}}},
                {"losses", state.losses},
                {"param_count", state.params.values.size()},
                {"sections", has_moments ? json::array({"params", "adam_m", "adam_v"}) : json::array({"params"})},
                {"tensors", tensors}};
    const std::string h = header.dump();
    std::string out("SFCK");
    io::append_u32(out, kCheckpointVersion);
    io::append_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    auto put = [&](const std::vector<float>& v) {
        for (float f : v) io::append_f32(out, f);
    };
    put(state.params.values);
    if (has_moments) {
        put(state.adam_m);
        put(state.adam_v);
    }
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 12 || bytes.substr(0, 4) != "SFCK") throw Error(Errc::io, "not a checkpoint");
    const auto version = io::load_u32(bytes.data() + 4);
    if (version != kCheckpointVersion) throw Error(Errc::io, "unsupported checkpoint version");
    const auto hlen = io::load_u32(bytes.data() + 8);
    if (bytes.size() < 12 + hlen) throw Error(Errc::io, "truncated checkpoint header");
    json header;
    try {
        header = json::parse(bytes.substr(12, hlen));
    } catch (const json::exception& e) {
        throw Error(Errc::io, std::string("bad checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    ck.config = header.at("train").get<TrainConfig>();
    ck.state.params.config = header.at("model").get<ModelConfig>();
    ck.state.step = header.at("provenance").at("step").get<std::int64_t>();
    ck.state.losses = header.at("losses").get<std::vector<double>>();
    const auto count = header.at("param_count").get<std::size_t>();
    if (ParamLayout(ck.state.params.config).size() != count) throw Error(Errc::io, "checkpoint layout mismatch");
    const auto sections = header.at("sections").size();
    const char* p = bytes.data() + 12 + hlen;
    if (bytes.size() != 12 + hlen + sections * count * 4) throw Error(Errc::io, "checkpoint size mismatch");
    auto take = [&](std::vector<float>& v) {
        v.resize(count);
        for (std::size_t i = 0; i < count; ++i) v[i] = io::load_f32(p + 4 * i);
        p += 4 * count;
    };
    take(ck.state.params.values);
    if (sections == 3) {
        take(ck.state.adam_m);
        take(ck.state.adam_v);
    } else {
        ck.state.adam_m.assign(count, 0.0f);
        ck.state.adam_v.assign(count, 0.0f);
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state) {
    io::write_file_atomic(path, encode_checkpoint(config, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace stemflow
