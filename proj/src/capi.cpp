// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/stemflow.h"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stemflow/codec.hpp"
#include "stemflow/eval.hpp"
#include "stemflow/io.hpp"
#include "stemflow/service.hpp"
#include "stemflow/trainer.hpp"

using nlohmann::json;
using namespace stemflow;

struct sf_model {
    std::shared_ptr<const VelocityModel> model;
    TrainConfig train;
    std::int64_t step = 0;
};

struct sf_service {
    std::unique_ptr<Service> service;
};

namespace {

thread_local std::string g_last_error;

sf_status status_of(Errc code) {
    switch (code) {
        case Errc::invalid_argument: return SF_ERR_INVALID_ARGUMENT;
        case Errc::io: return SF_ERR_IO;
        case Errc::numeric: return SF_ERR_NUMERIC;
        case Errc::not_found: return SF_ERR_NOT_FOUND;
        case Errc::conflict: return SF_ERR_CONFLICT;
        case Errc::internal: return SF_ERR_INTERNAL;
    }
    return SF_ERR_INTERNAL;
}

template <class F>
sf_status guard(F&& f) {
    g_last_error.clear();
    try {
        f();
        return SF_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.code());
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return SF_ERR_INVALID_ARGUMENT;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return SF_ERR_IO;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return SF_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SF_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return SF_ERR_INTERNAL;
    }
}

json parse_config(const char* text) {
    if (text == nullptr || *text == '\0') return json::object();
    auto j = json::parse(text);
    if (!j.is_object()) throw Error(Errc::invalid_argument, "configuration must be a JSON object");
    return j;
}

void require(const void* p, const char* what) {
    if (p == nullptr) throw Error(Errc::invalid_argument, std::string(what) + " must not be null");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, "cannot write " + path.string());
}

CorpusConfig corpus_config(const json& j) {
    CorpusConfig c;
    c.count = j.value("count", c.count);
    c.seed = j.value("seed", c.seed);
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        auto& d = c.generator;
        d.clip_frames = g.value("clip_frames", d.clip_frames);
        d.min_stems = g.value("min_stems", d.min_stems);
        d.max_stems = g.value("max_stems", d.max_stems);
        d.loudness_min_db = g.value("loudness_min_db", d.loudness_min_db);
        d.loudness_max_db = g.value("loudness_max_db", d.loudness_max_db);
        d.partial_activity_prob = g.value("partial_activity_prob", d.partial_activity_prob);
        if (g.contains("type_weights")) {
            const auto w = g.at("type_weights").get<std::vector<double>>();
            if (w.size() != d.type_weights.size()) throw Error(Errc::invalid_argument, "type_weights needs 6 entries");
            std::copy(w.begin(), w.end(), d.type_weights.begin());
        }
    }
    if (c.count < 1) throw Error(Errc::invalid_argument, "corpus count must be >= 1");
    return c;
}

}  // namespace

extern "C" {

const char* sf_version(void) { return "0.1.0"; }

const char* sf_last_error(void) { return g_last_error.c_str(); }

const char* sf_status_name(sf_status status) {
    switch (status) {
        case SF_OK: return "ok";
        case SF_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case SF_ERR_IO: return "io";
        case SF_ERR_NUMERIC: return "numeric";
        case SF_ERR_NOT_FOUND: return "not_found";
        case SF_ERR_CONFLICT: return "conflict";
        case SF_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void sf_string_free(char* s) { std::free(s); }

sf_status sf_corpus_build(const char* config_json, const char* out_dir) {
    return guard([&] {
        require(out_dir, "out_dir");
        build_corpus(corpus_config(parse_config(config_json)), out_dir);
    });
}

sf_status sf_train(const char* config_json, const char* corpus_dir, const char* out_dir, const char* resume_checkpoint,
                   sf_progress_fn progress, void* user) {
    return guard([&] {
        require(corpus_dir, "corpus_dir");
        require(out_dir, "out_dir");
        const TrainConfig config = parse_config(config_json).get<TrainConfig>();
        const Dataset data = load_corpus(corpus_dir);
        std::optional<TrainState> resume;
        if (resume_checkpoint != nullptr && *resume_checkpoint != '\0') {
            auto ck = load_checkpoint(resume_checkpoint);
            if (json(ck.config.model) != json(config.model)) {
                throw Error(Errc::invalid_argument, "resume checkpoint has a different model config");
            }
            resume = std::move(ck.state);
        }
        TrainOptions opt;
        opt.out_dir = out_dir;
        if (progress != nullptr) {
            opt.on_step = [&](std::int64_t step, double loss) { progress(step, loss, user); };
        }
        train(config, data, opt, std::move(resume));
    });
}

sf_status sf_model_load(const char* checkpoint_path, sf_model** out) {
    return guard([&] {
        require(checkpoint_path, "checkpoint_path");
        require(out, "out");
        *out = nullptr;
        auto ck = load_checkpoint(checkpoint_path);
        auto m = std::make_unique<sf_model>();
        m->train = ck.config;
        m->step = ck.state.step;
        m->model = std::make_shared<const VelocityModel>(std::move(ck.state.params));
        *out = m.release();
    });
}

void sf_model_free(sf_model* model) { delete model; }

sf_status sf_model_info(const sf_model* model, char** info_json) {
    return guard([&] {
        require(model, "model");
        require(info_json, "info_json");
        const json j{{"config", model->model->config()},
                     {"param_count", model->model->params().values.size()},
                     {"train", model->train},
                     {"step", model->step}};
        *info_json = dup_string(j.dump(2));
    });
}

sf_status sf_generate(const sf_model* model, const char* request_json, const char* out_dir, char** report_json) {
    return guard([&] {
        require(model, "model");
        const json j = parse_config(request_json);
        const auto mode = parse_workflow_mode(j.value("mode", std::string("one_pass")));
        const int style = j.value("style_token", 0);
        const int tempo = j.value("tempo_bpm", 120);
        std::vector<StemType> types;
        if (j.contains("stems") && j.at("stems").is_string()) {
            types = parse_stem_list(j.at("stems").get<std::string>());
        } else if (j.contains("stems")) {
            for (const auto& s : j.at("stems")) types.push_back(stem_type_from_string(s.get<std::string>()));
        }
        if (types.empty()) throw Error(Errc::invalid_argument, "generate needs at least one stem");
        std::vector<StemRequest> requests;
        const json masks = j.value("activity_masks", json::object());
        for (auto t : types) {
            StemRequest r{t, std::nullopt};
            const auto key = std::string(stem_type_name(t));
            if (masks.contains(key)) {
                ActivityMask m;
                for (const auto& v : masks.at(key)) m.push_back(static_cast<std::uint8_t>(v.get<int>() != 0));
                r.activity = std::move(m);
            }
            requests.push_back(std::move(r));
        }
        const SampleConfig sc = j.contains("sampler") ? j.at("sampler").get<SampleConfig>() : SampleConfig{};
        const auto result = run_workflow(*model->model, requests, style, tempo, mode, sc);

        json report = to_json(result.report);
        report["style_token"] = style;
        report["tempo_bpm"] = tempo;
        const auto& mix = result.generation.mix;
        report["mix_rms_dbfs"] = 20.0 * std::log10(codec::rms(mix.samples));
        json files = json::array();
        if (out_dir != nullptr && *out_dir != '\0') {
            const std::filesystem::path dir(out_dir);
            std::filesystem::create_directories(dir);
            for (std::size_t i = 0; i < requests.size(); ++i) {
                std::ostringstream name;
                name << "stem" << std::setw(2) << std::setfill('0') << i << '_' << stem_type_name(requests[i].stem_type);
                write_file(dir / (name.str() + ".wav"), io::encode_wav(result.generation.stems[i].samples));
                write_file(dir / (name.str() + ".lat"), io::encode_latent(result.generation.latents[i]));
                std::string mask;
                for (auto v : codec::detect_activity(result.generation.stems[i])) mask.push_back(v ? '1' : '0');
                files.push_back({{"stem_type", stem_type_name(requests[i].stem_type)},
                                 {"wav", name.str() + ".wav"},
                                 {"latent", name.str() + ".lat"},
                                 {"detected_activity", std::move(mask)}});
            }
            write_file(dir / "mix.wav", io::encode_wav(mix.samples));
            report["files"] = files;
            report["mix"] = "mix.wav";
            write_file(dir / "report.json", report.dump(2) + "\n");
        }
        if (report_json != nullptr) *report_json = dup_string(report.dump(2));
    });
}

sf_status sf_eval(const char* config_json, const char* const* names, const char* const* checkpoint_paths,
                  size_t count, char** report_csv) {
    return guard([&] {
        require(report_csv, "report_csv");
        if (count > 0) {
            require(names, "names");
            require(checkpoint_paths, "checkpoint_paths");
        }
        const EvalConfig config = parse_config(config_json).get<EvalConfig>();
        std::vector<std::unique_ptr<VelocityModel>> owned;
        std::map<std::string, const VelocityModel*> models;
        for (size_t i = 0; i < count; ++i) {
            require(names[i], "name");
            if (checkpoint_paths[i] == nullptr || *checkpoint_paths[i] == '\0') {
                models[names[i]] = nullptr;
                continue;
            }
            owned.push_back(std::make_unique<VelocityModel>(load_checkpoint(checkpoint_paths[i]).state.params));
            models[names[i]] = owned.back().get();
        }
        if (models.empty()) throw Error(Errc::invalid_argument, "eval needs at least one checkpoint");
        const auto cells = run_eval_suite(models, config);
        std::string out = format_report(cells, config.include_timing);
        if (config.include_timing && config.workflow_requests > 0) {
            for (const auto& [name, m] : models) {
                if (m == nullptr) continue;
                const auto rows = time_workflows(*m, config);
                out += "\n# workflow timing, setting " + name + "\n" + format_workflow_timing(rows);
            }
        }
        *report_csv = dup_string(out);
    });
}

sf_status sf_service_create(const char* config_json, sf_service** out) {
    return guard([&] {
        require(out, "out");
        *out = nullptr;
        const ServiceConfig config = parse_config(config_json).get<ServiceConfig>();
        if (config.checkpoint.empty()) throw Error(Errc::invalid_argument, "service needs a checkpoint");
        auto model = std::make_shared<const VelocityModel>(load_checkpoint(config.checkpoint).state.params);
        auto s = std::make_unique<sf_service>();
        s->service = std::make_unique<Service>(config, std::move(model));
        *out = s.release();
    });
}

sf_status sf_service_bind(sf_service* service, int* port) {
    return guard([&] {
        require(service, "service");
        const int p = service->service->bind();
        if (port != nullptr) *port = p;
    });
}

sf_status sf_service_run(sf_service* service) {
    return guard([&] {
        require(service, "service");
        service->service->run();
    });
}

void sf_service_stop(sf_service* service) {
    if (service != nullptr) service->service->stop();
}

void sf_service_free(sf_service* service) { delete service; }

}  // extern "C"
