// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <future>
#include <thread>

#include "fixtures.hpp"
#include "stemflow/codec.hpp"
#include "stemflow/io.hpp"
#include "stemflow/service.hpp"

#include <httplib.h>

using namespace stemflow;
using nlohmann::json;

namespace {

std::shared_ptr<const VelocityModel> tiny_model() {
    ModelConfig c;
    c.hidden_width = 16;
    c.num_blocks = 1;
    c.embed_dim = 8;
    c.time_features = 4;
    c.parameter_seed = 2;
    auto p = init_params(c);
    Rng rng(2);
    std::normal_distribution<float> n(0.0f, 0.05f);
    for (auto& v : p.values) v += n(rng);
    return std::make_shared<const VelocityModel>(std::move(p));
}

struct Harness {
    std::filesystem::path dir = testing::temp_dir("service");
    std::unique_ptr<Service> service;
    std::thread thread;
    std::unique_ptr<httplib::Client> client;

    explicit Harness(ServiceHooks hooks = {}) {
        ServiceConfig cfg;
        cfg.checkpoint = "test.sfck";
        cfg.data_dir = dir;
        cfg.port = 0;
        cfg.sampler.num_steps = 4;
        service = std::make_unique<Service>(cfg, tiny_model(), std::move(hooks));
        const int port = service->bind();
        thread = std::thread([this] { service->run(); });
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(60, 0);
    }
    ~Harness() {
        service->stop();
        thread.join();
        std::filesystem::remove_all(dir);
    }

    httplib::Result post(const std::string& path, const json& body) {
        return client->Post(path, body.dump(), "application/json");
    }
};

json body(const httplib::Result& r) {
    REQUIRE(r);
    return json::parse(r->body);
}

double wav_dbfs(const std::string& bytes) {
    const auto samples = io::decode_wav(bytes);
    return 20.0 * std::log10(codec::rms(samples));
}

}  // namespace

TEST_CASE("session lifecycle over http") {
    Harness h;
    auto& c = *h.client;

    auto health = c.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto created = h.post("/sessions", {{"style_token", 4}, {"tempo_bpm", 120}, {"seed", 9}});
    REQUIRE(created);
    CHECK(created->status == 201);
    const auto id = body(created).at("session_id").get<std::string>();
    const std::string base = "/sessions/" + id;

    auto drums = h.post(base + "/generate", {{"request_id", "r1"}, {"stems", {{{"stem_type", "drums"}}}}});
    REQUIRE(drums);
    CHECK(drums->status == 201);
    const auto dj = body(drums);
    REQUIRE(dj.at("stems").size() == 1);
    const auto drums_id = dj.at("stems")[0].at("stem_id").get<std::string>();
    CHECK(dj.at("stems")[0].at("detected_activity").size() == 96);
    CHECK(dj.at("stems")[0].at("frame_rms").size() == 96);
    CHECK(dj.at("stems")[0].at("latent").size() == 96);

    auto more = h.post(base + "/generate", {{"request_id", "r2"},
                                            {"stems", {{{"stem_type", "bass"}}, {{"stem_type", "keys"}}}},
                                            {"condition_on", {drums_id}}});
    REQUIRE(more);
    CHECK(more->status == 201);
    const auto mj = body(more);
    CHECK(mj.at("stems").size() == 2);
    CHECK(mj.at("stems")[0].at("conditioned_on") == json::array({drums_id}));

    auto state = body(c.Get(base));
    CHECK(state.at("stems").size() == 3);
    CHECK(state.at("history").size() == 2);
    CHECK(state.at("tempo_bpm") == 120);

    SUBCASE("generate retries with the same request id are idempotent") {
        auto retry = h.post(base + "/generate", {{"request_id", "r1"}, {"stems", {{{"stem_type", "drums"}}}}});
        REQUIRE(retry);
        CHECK(retry->status == 200);
        CHECK(body(retry).at("stems")[0].at("stem_id") == drums_id);
        CHECK(body(c.Get(base)).at("history").size() == 2);
    }

    SUBCASE("mix and stem audio") {
        auto mix = c.Get(base + "/mix.wav");
        REQUIRE(mix);
        CHECK(mix->status == 200);
        CHECK(mix->get_header_value("Content-Type") == "audio/wav");
        CHECK(std::abs(wav_dbfs(mix->body) + 16.0) <= 0.1);

        auto stem = c.Get(base + "/stems/" + drums_id + ".wav");
        REQUIRE(stem);
        CHECK(stem->status == 200);
        CHECK(stem->body.size() == 44 + 96 * kHop * 2);
        CHECK(c.Get(base + "/stems/" + drums_id + ".wav")->body == stem->body);

        auto muted = h.post(base + "/stems/" + drums_id + "/mute", {{"muted", true}});
        REQUIRE(muted);
        CHECK(muted->status == 200);
        CHECK(body(muted).at("muted") == true);
        auto mix2 = c.Get(base + "/mix.wav");
        CHECK(mix2->status == 200);
        CHECK(mix2->body != mix->body);
        CHECK(std::abs(wav_dbfs(mix2->body) + 16.0) <= 0.1);

        const auto all = body(c.Get(base));
        for (const auto& st : all.at("stems")) {
            h.post(base + "/stems/" + st.at("stem_id").get<std::string>() + "/mute", json::object());
        }
        CHECK(c.Get(base + "/mix.wav")->status == 422);
        const auto again = h.post(base + "/stems/" + drums_id + "/mute", {{"muted", true}});
        CHECK(again->status == 200);
        CHECK(body(c.Get(base)).at("history").size() == 5);
    }

    SUBCASE("delete") {
        auto del = c.Delete(base + "/stems/" + drums_id);
        REQUIRE(del);
        CHECK(del->status == 200);
        CHECK(body(c.Get(base)).at("stems").size() == 2);
        CHECK(c.Delete(base + "/stems/" + drums_id)->status == 404);
        CHECK(c.Get(base + "/stems/" + drums_id + ".wav")->status == 404);
    }

    SUBCASE("validation errors") {
        CHECK(c.Get("/sessions/nope")->status == 404);
        CHECK(h.post("/sessions/nope/generate", {{"stems", {{{"stem_type", "drums"}}}}})->status == 404);
        CHECK(h.post("/sessions", {{"tempo_bpm", 121}})->status == 422);
        CHECK(h.post("/sessions", {{"style_token", 16}})->status == 422);
        CHECK(h.post(base + "/generate", {{"stems", {{{"stem_type", "flute"}}}}})->status == 422);
        CHECK(h.post(base + "/generate", {{"stems", json::array()}})->status == 422);
        CHECK(h.post(base + "/generate", {{"stems", {{{"stem_type", "bass"}}}}, {"tempo_bpm", 90}})->status == 422);
        CHECK(h.post(base + "/generate", {{"stems", {{{"stem_type", "bass"}}}}, {"condition_on", {"st99"}}})->status == 422);
        CHECK(h.post(base + "/generate", {{"stems", {{{"stem_type", "bass"}, {"activity_mask", {1, 0, 1}}}}}})->status == 422);
        CHECK(h.post(base + "/stems/st99/mute", json::object())->status == 404);
        auto bad = c.Post(base + "/generate", "{not json", "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 400);
        CHECK(body(c.Get(base)).at("history").size() == 2);
    }

    SUBCASE("replaying the log reproduces the session") {
        h.post(base + "/stems/" + drums_id + "/mute", {{"muted", true}});
        c.Delete(base + "/stems/" + mj.at("stems")[1].at("stem_id").get<std::string>());
        const auto live = body(c.Get(base));

        std::vector<json> events;
        std::ifstream in(h.dir / "sessions" / (id + ".jsonl"));
        for (std::string line; std::getline(in, line);) events.push_back(json::parse(line));
        CHECK(events.size() == 5);
        CHECK(session_view(replay(events)) == live);

        SessionStore reopened(h.dir);
        const auto slot = reopened.find(id);
        REQUIRE(slot);
        CHECK(session_view(slot->state) == live);
    }
}

TEST_CASE("a second generation on a busy session gets 409") {
    std::promise<void> started, release;
    auto released = release.get_future().share();
    ServiceHooks hooks;
    hooks.on_generate_start = [&](const std::string&) {
        started.set_value();
        released.wait();
    };
    Harness h(std::move(hooks));
    const auto id = body(h.post("/sessions", json::object())).at("session_id").get<std::string>();
    const std::string path = "/sessions/" + id + "/generate";

    auto first = std::async(std::launch::async, [&] {
        httplib::Client c2("127.0.0.1", h.client->port());
        c2.set_read_timeout(60, 0);
        return c2.Post(path, json{{"stems", {{{"stem_type", "drums"}}}}}.dump(), "application/json");
    });
    started.get_future().wait();
    auto second = h.post(path, {{"stems", {{{"stem_type", "bass"}}}}});
    REQUIRE(second);
    CHECK(second->status == 409);
    CHECK(body(h.client->Get("/sessions/" + id)).at("stems").empty());
    release.set_value();
    auto r = first.get();
    REQUIRE(r);
    CHECK(r->status == 201);
    CHECK(body(h.client->Get("/sessions/" + id)).at("stems").size() == 1);
}

TEST_CASE("activity masks are carried through the service") {
    Harness h;
    const auto id = body(h.post("/sessions", {{"tempo_bpm", 90}})).at("session_id").get<std::string>();
    json mask = json::array();
    for (int f = 0; f < 96; ++f) mask.push_back(f < 48 ? 0 : 1);
    auto r = h.post("/sessions/" + id + "/generate",
                    {{"stems", {{{"stem_type", "pad"}, {"activity_mask", mask}}}}, {"steps", 2}, {"seed", 3}});
    REQUIRE(r);
    CHECK(r->status == 201);
    const auto j = body(r);
    CHECK(j.at("seed") == 3);
    CHECK(j.at("stems")[0].at("activity_mask") == mask);
}
