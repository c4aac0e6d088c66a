// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "stemflow/sampler.hpp"

namespace httplib {
class Server;
}

namespace stemflow {

struct SessionStem {
    std::string stem_id;
    StemType type = StemType::drums;
    Matrix latent;  // T x D
    std::optional<ActivityMask> requested_activity;
    std::vector<std::string> conditioned_on;
    bool muted = false;
};

/// Event-sourced session. `history` holds every event after creation.
struct Session {
    std::string id;
    int style_token = 0;
    int tempo_bpm = 120;
    std::string checkpoint;
    std::uint64_t base_seed = 0;
    std::uint64_t seed_counter = 0;
    int next_stem = 1;
    std::vector<SessionStem> stems;
    std::vector<nlohmann::json> history;
    std::map<std::string, nlohmann::json> responses;  // request_id -> generate response

    const SessionStem* find(const std::string& stem_id) const;
};

// Events: created, generated, muted, deleted. One JSON object per line on disk.
nlohmann::json created_event(const std::string& id, int style_token, int tempo_bpm, const std::string& checkpoint,
                             std::uint64_t seed);
void apply_event(Session& s, const nlohmann::json& event);
Session replay(std::span<const nlohmann::json> events);

nlohmann::json stem_view(const Session& s, const SessionStem& stem);
nlohmann::json session_view(const Session& s);

struct SessionSlot {
    std::mutex mutex;  // guards `state` and the log file
    std::atomic<bool> generating{false};
    Session state;
    std::filesystem::path log;
};

/// Append-only session logs under data_dir/sessions, replayed on open.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path data_dir);

    std::shared_ptr<SessionSlot> create(int style_token, int tempo_bpm, const std::string& checkpoint,
                                        std::uint64_t seed);
    /// Null when unknown.
    std::shared_ptr<SessionSlot> find(const std::string& id) const;
    std::vector<std::string> ids() const;

    /// Applies and persists `event`. The caller holds slot.mutex.
    static void append(SessionSlot& slot, const nlohmann::json& event);

    const std::filesystem::path& data_dir() const { return data_dir_; }

private:
    std::filesystem::path data_dir_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
};

/// $STEMFLOW_DATA_DIR, else ./stemflow-data.
std::filesystem::path default_data_dir();

struct ServiceConfig {
    std::string checkpoint;
    std::filesystem::path data_dir = default_data_dir();
    std::string host = "127.0.0.1";
    int port = 8080;
    SampleConfig sampler;
};

void to_json(nlohmann::json& j, const ServiceConfig& c);
void from_json(const nlohmann::json& j, ServiceConfig& c);

struct ServiceHooks {
    /// Runs inside a generate call after the session is marked busy.
    std::function<void(const std::string& session_id)> on_generate_start;
};

struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

class Service {
public:
    Service(ServiceConfig config, std::shared_ptr<const VelocityModel> model, ServiceHooks hooks = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds config.host:config.port (0 picks a free port) and returns the port.
    int bind();
    /// Serves until stop(). Call bind() first.
    void run();
    void stop();

    Response create_session(const std::string& body);
    Response get_session(const std::string& id);
    Response generate(const std::string& id, const std::string& body);
    Response set_muted(const std::string& id, const std::string& stem_id, const std::string& body);
    Response delete_stem(const std::string& id, const std::string& stem_id);
    Response mix_wav(const std::string& id);
    Response stem_wav(const std::string& id, const std::string& stem_id);

    SessionStore& store() { return store_; }

private:
    void routes();

    ServiceConfig config_;
    std::shared_ptr<const VelocityModel> model_;
    ServiceHooks hooks_;
    SessionStore store_;
    std::unique_ptr<httplib::Server> server_;
    std::mutex wav_mutex_;
    std::map<std::string, std::string> wav_cache_;
};

}  // namespace stemflow
