// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/service.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

#include "stemflow/codec.hpp"
#include "stemflow/io.hpp"

namespace stemflow {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSessionSeedStream = 0x53455353ull;

json latent_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix latent_from_json(const json& j) {
    Matrix m(static_cast<Eigen::Index>(j.size()), kLatentDim);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != static_cast<std::size_t>(kLatentDim)) throw Error(Errc::invalid_argument, "latent row width");
        for (int c = 0; c < kLatentDim; ++c) m(static_cast<Eigen::Index>(r), c) = j[r][static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

json mask_to_json(const ActivityMask& m) {
    json out = json::array();
    for (auto v : m) out.push_back(v ? 1 : 0);
    return out;
}

ActivityMask mask_from_json(const json& j, int frames) {
    if (!j.is_array() || static_cast<int>(j.size()) != frames) {
        throw Error(Errc::invalid_argument, "activity_mask must have " + std::to_string(frames) + " entries");
    }
    ActivityMask m;
    for (const auto& v : j) {
        const int b = v.is_boolean() ? static_cast<int>(v.get<bool>()) : v.get<int>();
        if (b != 0 && b != 1) throw Error(Errc::invalid_argument, "activity_mask entries must be 0 or 1");
        m.push_back(static_cast<std::uint8_t>(b));
    }
    return m;
}

std::string random_id() {
    static std::mutex mutex;
    static std::mt19937_64 rng(std::random_device{}());
    std::lock_guard lock(mutex);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

bool valid_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 &&
           std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

json generate_response(const Session& s, const json& event) {
    json stems = json::array();
    for (const auto& st : event.at("stems")) {
        if (const auto* live = s.find(st.at("stem_id").get<std::string>())) stems.push_back(stem_view(s, *live));
    }
    return json{{"session_id", s.id},
                {"request_id", event.at("request_id")},
                {"seed", event.at("seed")},
                {"stems", std::move(stems)},
                {"history_length", s.history.size()}};
}

json error_body(std::string_view code, const std::string& message) {
    return json{{"error", {{"code", code}, {"message", message}}}};
}

Response json_response(int status, const json& body) { return Response{status, body.dump(), "application/json"}; }

template <class F>
Response guarded(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        switch (e.code()) {
            case Errc::invalid_argument: return json_response(422, error_body("invalid_argument", e.what()));
            case Errc::not_found: return json_response(404, error_body("not_found", e.what()));
            case Errc::conflict: return json_response(409, error_body("conflict", e.what()));
            default: return json_response(500, error_body("internal", e.what()));
        }
    } catch (const json::parse_error& e) {
        return json_response(400, error_body("bad_request", e.what()));
    } catch (const json::exception& e) {
        return json_response(422, error_body("invalid_argument", e.what()));
    } catch (const std::exception& e) {
        return json_response(500, error_body("internal", e.what()));
    }
}

json parse_body(const std::string& body) { return body.empty() ? json::object() : json::parse(body); }

}  // namespace

const SessionStem* Session::find(const std::string& stem_id) const {
    for (const auto& s : stems) {
        if (s.stem_id == stem_id) return &s;
    }
    return nullptr;
}

json created_event(const std::string& id, int style_token, int tempo_bpm, const std::string& checkpoint,
                   std::uint64_t seed) {
    return json{{"type", "created"},
                {"session_id", id},
                {"style_token", style_token},
                {"tempo_bpm", tempo_bpm},
                {"checkpoint", checkpoint},
                {"seed", seed}};
}

void apply_event(Session& s, const json& event) {
    const auto type = event.at("type").get<std::string>();
    if (type == "created") {
        if (!s.id.empty()) throw Error(Errc::conflict, "session already created");
        s.id = event.at("session_id").get<std::string>();
        s.style_token = event.at("style_token").get<int>();
        s.tempo_bpm = event.at("tempo_bpm").get<int>();
        s.checkpoint = event.at("checkpoint").get<std::string>();
        s.base_seed = event.at("seed").get<std::uint64_t>();
        if (s.style_token < 0 || s.style_token >= kNumStyles) throw Error(Errc::invalid_argument, "style_token out of range");
        if (!tempo_bucket(s.tempo_bpm)) throw Error(Errc::invalid_argument, "tempo_bpm is not on the grid");
        return;
    }
    if (s.id.empty()) throw Error(Errc::invalid_argument, "event before session creation");
    if (type == "generated") {
        std::vector<SessionStem> added;
        for (const auto& st : event.at("stems")) {
            SessionStem stem;
            stem.stem_id = st.at("stem_id").get<std::string>();
            if (s.find(stem.stem_id)) throw Error(Errc::conflict, "duplicate stem id " + stem.stem_id);
            stem.type = stem_type_from_string(st.at("stem_type").get<std::string>());
            stem.latent = latent_from_json(st.at("latent"));
            if (st.contains("activity_mask") && !st.at("activity_mask").is_null()) {
                stem.requested_activity = mask_from_json(st.at("activity_mask"), static_cast<int>(stem.latent.rows()));
            }
            stem.conditioned_on = event.value("condition_on", std::vector<std::string>{});
            added.push_back(std::move(stem));
        }
        for (auto& a : added) s.stems.push_back(std::move(a));
        s.next_stem += static_cast<int>(added.size());
        s.seed_counter += 1;
        s.history.push_back(event);
        if (event.contains("request_id") && event.at("request_id").is_string()) {
            s.responses[event.at("request_id").get<std::string>()] = generate_response(s, event);
        }
        return;
    }
    if (type == "muted") {
        const auto id = event.at("stem_id").get<std::string>();
        auto it = std::find_if(s.stems.begin(), s.stems.end(), [&](const SessionStem& x) { return x.stem_id == id; });
        if (it == s.stems.end()) throw Error(Errc::not_found, "unknown stem " + id);
        it->muted = event.at("muted").get<bool>();
        s.history.push_back(event);
        return;
    }
    if (type == "deleted") {
        const auto id = event.at("stem_id").get<std::string>();
        auto it = std::find_if(s.stems.begin(), s.stems.end(), [&](const SessionStem& x) { return x.stem_id == id; });
        if (it == s.stems.end()) throw Error(Errc::not_found, "unknown stem " + id);
        s.stems.erase(it);
        s.history.push_back(event);
        return;
    }
    throw Error(Errc::invalid_argument, "unknown event type '" + type + "'");
}

Session replay(std::span<const json> events) {
    Session s;
    for (const auto& e : events) apply_event(s, e);
    return s;
}

json stem_view(const Session& s, const SessionStem& stem) {
    const auto wave = codec::decode(StemLatent{stem.latent});
    return json{{"stem_id", stem.stem_id},
                {"stem_type", stem_type_name(stem.type)},
                {"muted", stem.muted},
                {"activity_mask", stem.requested_activity ? mask_to_json(*stem.requested_activity) : json(nullptr)},
                {"detected_activity", mask_to_json(codec::detect_activity(wave))},
                {"frame_rms", codec::frame_rms(wave.samples)},
                {"conditioned_on", stem.conditioned_on},
                {"latent", latent_to_json(stem.latent)},
                {"wav", "/sessions/" + s.id + "/stems/" + stem.stem_id + ".wav"}};
}

json session_view(const Session& s) {
    json stems = json::array();
    for (const auto& st : s.stems) stems.push_back(stem_view(s, st));
    json history = json::array();
    for (const auto& e : s.history) {
        json h = e;
        if (h.contains("stems")) {
            json ids = json::array();
            for (const auto& st : h.at("stems")) ids.push_back(st.at("stem_id"));
            h.erase("stems");
            h["stem_ids"] = std::move(ids);
        }
        history.push_back(std::move(h));
    }
    return json{{"session_id", s.id},
                {"style_token", s.style_token},
                {"tempo_bpm", s.tempo_bpm},
                {"checkpoint", s.checkpoint},
                {"seed", s.base_seed},
                {"seed_counter", s.seed_counter},
                {"stems", std::move(stems)},
                {"history", std::move(history)}};
}

SessionStore::SessionStore(std::filesystem::path data_dir) : data_dir_(std::move(data_dir)) {
    const auto dir = data_dir_ / "sessions";
    std::filesystem::create_directories(dir);
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".jsonl") continue;
        std::ifstream in(entry.path());
        std::vector<json> events;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                events.push_back(json::parse(line));
            } catch (const json::parse_error&) {
                std::cerr << "warning: dropping unreadable event in " << entry.path() << '\n';
                break;
            }
        }
        if (events.empty()) continue;
        auto slot = std::make_shared<SessionSlot>();
        slot->log = entry.path();
        slot->state = replay(events);
        sessions_[slot->state.id] = slot;
    }
}

std::shared_ptr<SessionSlot> SessionStore::create(int style_token, int tempo_bpm, const std::string& checkpoint,
                                                  std::uint64_t seed) {
    auto slot = std::make_shared<SessionSlot>();
    std::lock_guard lock(mutex_);
    std::string id;
    do {
        id = random_id();
    } while (sessions_.count(id));
    slot->log = data_dir_ / "sessions" / (id + ".jsonl");
    append(*slot, created_event(id, style_token, tempo_bpm, checkpoint, seed));
    sessions_[id] = slot;
    return slot;
}

std::shared_ptr<SessionSlot> SessionStore::find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> SessionStore::ids() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
}

void SessionStore::append(SessionSlot& slot, const json& event) {
    Session next = slot.state;
    apply_event(next, event);
    std::ofstream out(slot.log, std::ios::app | std::ios::binary);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error(Errc::io, "cannot append to " + slot.log.string());
    slot.state = std::move(next);
}

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("STEMFLOW_DATA_DIR"); env && *env) return env;
    return "stemflow-data";
}

void to_json(json& j, const ServiceConfig& c) {
    j = json{{"checkpoint", c.checkpoint},
             {"data_dir", c.data_dir.string()},
             {"host", c.host},
             {"port", c.port},
             {"sampler", c.sampler}};
}

void from_json(const json& j, ServiceConfig& c) {
    c = ServiceConfig{};
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("sampler")) c.sampler = j.at("sampler").get<SampleConfig>();
    if (c.port < 0 || c.port > 65535) throw Error(Errc::invalid_argument, "port out of range");
}

Service::Service(ServiceConfig config, std::shared_ptr<const VelocityModel> model, ServiceHooks hooks)
    : config_(std::move(config)),
      model_(std::move(model)),
      hooks_(std::move(hooks)),
      store_(config_.data_dir),
      server_(std::make_unique<httplib::Server>()) {
    if (!model_) throw Error(Errc::invalid_argument, "service needs a model");
    routes();
}

Service::~Service() { stop(); }

int Service::bind() {
    if (config_.port == 0) {
        const int port = server_->bind_to_any_port(config_.host);
        if (port <= 0) throw Error(Errc::io, "cannot bind " + config_.host);
        config_.port = port;
        return port;
    }
    if (!server_->bind_to_port(config_.host, config_.port)) {
        throw Error(Errc::io, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    }
    return config_.port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_) server_->stop();
}

Response Service::create_session(const std::string& body) {
    return guarded([&] {
        const json j = parse_body(body);
        const int style = j.value("style_token", 0);
        const int tempo = j.value("tempo_bpm", 120);
        const auto seed = j.value("seed", std::uint64_t{0});
        if (style < 0 || style >= kNumStyles) throw Error(Errc::invalid_argument, "style_token out of range");
        if (!tempo_bucket(tempo)) throw Error(Errc::invalid_argument, "tempo_bpm " + std::to_string(tempo) + " is not on the grid");
        const auto slot = store_.create(style, tempo, config_.checkpoint, seed);
        std::lock_guard lock(slot->mutex);
        return json_response(201, session_view(slot->state));
    });
}

Response Service::get_session(const std::string& id) {
    return guarded([&] {
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        std::lock_guard lock(slot->mutex);
        return json_response(200, session_view(slot->state));
    });
}

Response Service::generate(const std::string& id, const std::string& body) {
    return guarded([&]() -> Response {
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        const json j = parse_body(body);
        std::optional<std::string> request_id;
        if (j.contains("request_id") && !j.at("request_id").is_null()) {
            request_id = j.at("request_id").get<std::string>();
            if (!valid_id(*request_id)) throw Error(Errc::invalid_argument, "request_id must be 1-64 of [A-Za-z0-9_-]");
            std::lock_guard lock(slot->mutex);
            const auto it = slot->state.responses.find(*request_id);
            if (it != slot->state.responses.end()) return json_response(200, it->second);
        }
        if (slot->generating.exchange(true)) {
            return json_response(409, error_body("conflict", "a generation is already running for session " + id));
        }
        struct Release {
            std::atomic<bool>& flag;
            ~Release() { flag = false; }
        } release{slot->generating};

        Session snapshot;
        {
            std::lock_guard lock(slot->mutex);
            snapshot = slot->state;
        }
        if (j.contains("tempo_bpm") && j.at("tempo_bpm").get<int>() != snapshot.tempo_bpm) {
            throw Error(Errc::invalid_argument, "tempo_bpm differs from the session tempo");
        }
        if (j.contains("style_token") && j.at("style_token").get<int>() != snapshot.style_token) {
            throw Error(Errc::invalid_argument, "style_token differs from the session style");
        }
        const auto& items = j.at("stems");
        if (!items.is_array() || items.empty()) throw Error(Errc::invalid_argument, "stems must list at least one stem");
        const int T = 96;
        std::vector<StemRequest> requests;
        for (const auto& it : items) {
            StemRequest r;
            r.stem_type = stem_type_from_string(it.at("stem_type").get<std::string>());
            if (it.contains("activity_mask") && !it.at("activity_mask").is_null()) {
                r.activity = mask_from_json(it.at("activity_mask"), T);
            }
            requests.push_back(std::move(r));
        }
        const auto condition_on = j.value("condition_on", std::vector<std::string>{});
        std::vector<ContextStem> context;
        for (const auto& sid : condition_on) {
            const auto* st = snapshot.find(sid);
            if (!st) throw Error(Errc::invalid_argument, "condition_on names unknown stem " + sid);
            context.push_back({st->type, st->latent});
        }

        SampleConfig sc = config_.sampler;
        sc.num_steps = j.value("steps", sc.num_steps);
        sc.cfg_scale = j.value("cfg_scale", sc.cfg_scale);
        sc.share_noise = j.value("share_noise", sc.share_noise);
        if (j.contains("steps")) sc.cfg_window.reset();
        if (j.contains("seed") && !j.at("seed").is_null()) {
            sc.seed = j.at("seed").get<std::uint64_t>();
        } else {
            sc.seed = derive_rng(snapshot.base_seed, {kSessionSeedStream, snapshot.seed_counter})();
        }
        sc.validate();

        if (hooks_.on_generate_start) hooks_.on_generate_start(id);
        const auto g = context.empty()
                           ? generate_from_scratch(*model_, requests, snapshot.style_token, snapshot.tempo_bpm, sc)
                           : generate_conditional(*model_, context, requests, snapshot.style_token, snapshot.tempo_bpm, sc);

        std::lock_guard lock(slot->mutex);
        json stems = json::array();
        int next = slot->state.next_stem;
        for (std::size_t i = 0; i < requests.size(); ++i) {
            stems.push_back({{"stem_id", "st" + std::to_string(next++)},
                             {"stem_type", stem_type_name(requests[i].stem_type)},
                             {"activity_mask", requests[i].activity ? mask_to_json(*requests[i].activity) : json(nullptr)},
                             {"latent", latent_to_json(g.latents[i])}});
        }
        const json event{{"type", "generated"},
                         {"request_id", request_id ? json(*request_id) : json(nullptr)},
                         {"condition_on", condition_on},
                         {"seed", sc.seed},
                         {"sampler", sc},
                         {"stems", std::move(stems)}};
        SessionStore::append(*slot, event);
        return json_response(201, generate_response(slot->state, event));
    });
}

Response Service::set_muted(const std::string& id, const std::string& stem_id, const std::string& body) {
    return guarded([&] {
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        const json j = parse_body(body);
        const bool muted = j.value("muted", true);
        std::lock_guard lock(slot->mutex);
        const auto* st = slot->state.find(stem_id);
        if (!st) throw Error(Errc::not_found, "unknown stem " + stem_id);
        if (st->muted != muted) SessionStore::append(*slot, json{{"type", "muted"}, {"stem_id", stem_id}, {"muted", muted}});
        return json_response(200, stem_view(slot->state, *slot->state.find(stem_id)));
    });
}

Response Service::delete_stem(const std::string& id, const std::string& stem_id) {
    return guarded([&] {
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        std::lock_guard lock(slot->mutex);
        if (!slot->state.find(stem_id)) throw Error(Errc::not_found, "unknown stem " + stem_id);
        SessionStore::append(*slot, json{{"type", "deleted"}, {"stem_id", stem_id}});
        {
            std::lock_guard wl(wav_mutex_);
            wav_cache_.erase(id + "/" + stem_id);
        }
        return json_response(200, json{{"deleted", stem_id}, {"history_length", slot->state.history.size()}});
    });
}

Response Service::mix_wav(const std::string& id) {
    return guarded([&] {
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        std::vector<StemWaveform> live;
        {
            std::lock_guard lock(slot->mutex);
            for (const auto& st : slot->state.stems) {
                if (!st.muted) live.push_back(codec::decode(StemLatent{st.latent}));
            }
        }
        if (live.empty()) throw Error(Errc::invalid_argument, "no unmuted stems to mix");
        const auto m = codec::normalize_mix(codec::mix(live));
        return Response{200, io::encode_wav(m.samples), "audio/wav"};
    });
}

Response Service::stem_wav(const std::string& id, const std::string& stem_id) {
    return guarded([&] {
        const auto key = id + "/" + stem_id;
        {
            std::lock_guard wl(wav_mutex_);
            if (const auto it = wav_cache_.find(key); it != wav_cache_.end()) return Response{200, it->second, "audio/wav"};
        }
        const auto slot = store_.find(id);
        if (!slot) throw Error(Errc::not_found, "unknown session " + id);
        std::string bytes;
        {
            std::lock_guard lock(slot->mutex);
            const auto* st = slot->state.find(stem_id);
            if (!st) throw Error(Errc::not_found, "unknown stem " + stem_id);
            bytes = io::encode_wav(codec::decode(StemLatent{st->latent}).samples);
        }
        std::lock_guard wl(wav_mutex_);
        wav_cache_[key] = bytes;
        return Response{200, bytes, "audio/wav"};
    });
}

void Service::routes() {
    auto send = [](httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    auto& s = *server_;
    s.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    s.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_session(req.body));
    });
    s.Get(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_session(req.matches[1]));
    });
    s.Post(R"(/sessions/([^/]+)/generate)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, generate(req.matches[1], req.body));
    });
    s.Post(R"(/sessions/([^/]+)/stems/([^/]+)/mute)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, set_muted(req.matches[1], req.matches[2], req.body));
    });
    s.Delete(R"(/sessions/([^/]+)/stems/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, delete_stem(req.matches[1], req.matches[2]));
    });
    s.Get(R"(/sessions/([^/]+)/mix\.wav)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, mix_wav(req.matches[1]));
    });
    s.Get(R"(/sessions/([^/]+)/stems/([^/]+)\.wav)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, stem_wav(req.matches[1], req.matches[2]));
    });
}

}  // namespace stemflow
