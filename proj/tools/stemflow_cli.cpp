// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "stemflow/stemflow.h"

using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

int fail(sf_status s) {
    std::cerr << "error: " << sf_status_name(s) << ": " << sf_last_error() << '\n';
    return 1;
}

std::string take(char* s) {
    std::string out = s ? s : "";
    sf_string_free(s);
    return out;
}

// "0-48,60-96" -> 96-frame mask with those half-open spans silent.
json silence_mask(const std::string& spans, int frames) {
    json mask = json::array();
    for (int f = 0; f < frames; ++f) mask.push_back(1);
    std::stringstream ss(spans);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) throw CLI::ValidationError("--silence", "span '" + item + "' is not BEGIN-END");
        const int b = std::stoi(item.substr(0, dash));
        const int e = std::stoi(item.substr(dash + 1));
        if (b < 0 || e > frames || b >= e) throw CLI::ValidationError("--silence", "span '" + item + "' out of range");
        for (int f = b; f < e; ++f) mask[static_cast<std::size_t>(f)] = 0;
    }
    return mask;
}

json sampler_json(int steps, double cfg_scale, std::uint64_t seed, bool independent) {
    return json{{"num_steps", steps}, {"cfg_scale", cfg_scale}, {"seed", seed}, {"share_noise", !independent}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stemflow: one-pass multi-stem generation on a toy corpus"};
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.set_version_flag("--version", sf_version());

    // corpus build
    auto* corpus = app.add_subcommand("corpus", "Corpus tools");
    corpus->require_subcommand(1);
    auto* build = corpus->add_subcommand("build", "Synthesize and encode a toy corpus");
    std::string corpus_out = "corpus";
    int corpus_count = 512;
    std::uint64_t corpus_seed = 1234;
    double partial_prob = 0.5;
    build->add_option("--out", corpus_out, "Output directory")->capture_default_str();
    build->add_option("--count", corpus_count, "Number of compositions")->capture_default_str()->check(CLI::PositiveNumber);
    build->add_option("--seed", corpus_seed, "Corpus seed")->capture_default_str();
    build->add_option("--partial-activity", partial_prob, "Probability of a silent span per stem")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));

    // train
    auto* train = app.add_subcommand("train", "Train a velocity model");
    std::string setting = "C", train_corpus = "corpus", train_out = "runs/C", resume;
    int steps = 8000, checkpoint_every = 1000, batch = 32;
    std::uint64_t train_seed = 0;
    double lr = 1e-4;
    train->add_option("--setting", setting, "Ablation setting")->check(CLI::IsMember({"A", "B", "C"}))->capture_default_str();
    train->add_option("--corpus", train_corpus, "Corpus directory")->capture_default_str();
    train->add_option("--out", train_out, "Output directory")->capture_default_str();
    train->add_option("--steps", steps, "Optimizer steps")->capture_default_str()->check(CLI::NonNegativeNumber);
    train->add_option("--seed", train_seed, "Training seed (batches and parameter init)")->capture_default_str();
    train->add_option("--lr", lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--batch-size", batch, "Stems per batch")->capture_default_str()->check(CLI::PositiveNumber);
    train->add_option("--checkpoint-every", checkpoint_every, "Steps between checkpoints, 0 disables")->capture_default_str();
    train->add_option("--resume", resume, "Checkpoint to resume from");
    bool quiet = false;
    train->add_flag("--quiet", quiet, "No progress output");

    // generate
    auto* gen = app.add_subcommand("generate", "Generate stems with a trained model");
    std::string gen_ckpt, mode = "one_pass", stems = "drums,bass,keys", gen_out = "out";
    std::vector<std::string> silences;
    int style = 0, tempo = 120, sample_steps = 32;
    double cfg_scale = 3.0;
    std::uint64_t gen_seed = 0;
    bool independent = false;
    gen->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required();
    gen->add_option("--mode", mode, "Workflow")->check(CLI::IsMember({"k_pass", "two_pass", "one_pass"}))->capture_default_str();
    gen->add_option("--stems", stems, "Comma-separated stem types")->capture_default_str();
    gen->add_option("--style", style, "Style token 0..15")->capture_default_str()->check(CLI::Range(0, 15));
    gen->add_option("--tempo", tempo, "Tempo in bpm (60..150, step 15)")->capture_default_str();
    gen->add_option("--steps", sample_steps, "Euler steps")->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--cfg-scale", cfg_scale, "Guidance scale")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Sampling seed")->capture_default_str();
    gen->add_flag("--independent-noise", independent, "Draw separate initial noise per stem");
    gen->add_option("--silence", silences, "STEM=BEGIN-END[,BEGIN-END] silent frame spans (repeatable)");
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate checkpoints on held-out requests");
    std::vector<std::string> checkpoints;
    int requests = 64, per_request = 4, workflow_requests = 8, eval_steps = 32;
    std::uint64_t heldout_seed = 777, eval_seed = 0;
    bool no_timing = false, no_masks = false;
    std::string eval_out;
    ev->add_option("--checkpoints", checkpoints, "NAME=PATH entries; an empty PATH marks the cell absent")->required();
    ev->add_option("--requests", requests, "Held-out requests")->capture_default_str()->check(CLI::PositiveNumber);
    ev->add_option("--stems-per-request", per_request, "Stems per request")->capture_default_str()->check(CLI::Range(1, 6));
    ev->add_option("--heldout-seed", heldout_seed, "Seed for the held-out compositions")->capture_default_str();
    ev->add_option("--seed", eval_seed, "Sampling seed")->capture_default_str();
    ev->add_option("--steps", eval_steps, "Euler steps")->capture_default_str()->check(CLI::PositiveNumber);
    ev->add_option("--workflow-requests", workflow_requests, "Requests for workflow timing, 0 skips")->capture_default_str();
    ev->add_flag("--no-timing", no_timing, "Omit wall-clock columns so reports are byte-stable");
    ev->add_flag("--no-masks", no_masks, "Generate without activity masks");
    ev->add_option("--out", eval_out, "Write the report here as well as to stdout");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP session service");
    std::string serve_ckpt, host = "127.0.0.1", data_dir;
    int port = 8080;
    serve->add_option("--checkpoint", serve_ckpt, "Checkpoint file")->required();
    serve->add_option("--host", host, "Bind address")->capture_default_str();
    serve->add_option("--port", port, "Port, 0 picks a free one")->capture_default_str()->check(CLI::Range(0, 65535));
    serve->add_option("--data-dir", data_dir, "Session directory (default $STEMFLOW_DATA_DIR or ./stemflow-data)");

    // info
    auto* info = app.add_subcommand("info", "Print checkpoint metadata");
    std::string info_ckpt;
    info->add_option("checkpoint", info_ckpt, "Checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    if (build->parsed()) {
        const json cfg{{"count", corpus_count}, {"seed", corpus_seed}, {"generator", {{"partial_activity_prob", partial_prob}}}};
        if (auto s = sf_corpus_build(cfg.dump().c_str(), corpus_out.c_str()); s != SF_OK) return fail(s);
        std::cout << "wrote " << corpus_count << " compositions to " << corpus_out << '\n';
        return 0;
    }

    if (train->parsed()) {
        const json cfg{{"setting", setting},     {"steps", steps},
                       {"seed", train_seed},     {"learning_rate", lr},
                       {"batch_size", batch},    {"checkpoint_every", checkpoint_every},
                       {"model", {{"parameter_seed", train_seed}}}};
        sf_progress_fn progress = nullptr;
        if (!quiet) {
            progress = [](int64_t step, double loss, void*) {
                if (step % 100 == 0) std::cout << "step " << step << " loss " << loss << std::endl;
            };
        }
        const auto s = sf_train(cfg.dump().c_str(), train_corpus.c_str(), train_out.c_str(),
                                resume.empty() ? nullptr : resume.c_str(), progress, nullptr);
        if (s != SF_OK) return fail(s);
        std::cout << "checkpoints in " << train_out << '\n';
        return 0;
    }

    if (gen->parsed()) {
        json masks = json::object();
        for (const auto& item : silences) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
                std::cerr << "error: --silence expects STEM=BEGIN-END\n";
                return 2;
            }
            try {
                masks[item.substr(0, eq)] = silence_mask(item.substr(eq + 1), 96);
            } catch (const std::exception& e) {
                std::cerr << "error: " << e.what() << '\n';
                return 2;
            }
        }
        const json req{{"mode", mode},
                       {"stems", stems},
                       {"style_token", style},
                       {"tempo_bpm", tempo},
                       {"activity_masks", masks},
                       {"sampler", sampler_json(sample_steps, cfg_scale, gen_seed, independent)}};
        sf_model* model = nullptr;
        if (auto s = sf_model_load(gen_ckpt.c_str(), &model); s != SF_OK) return fail(s);
        char* report = nullptr;
        const auto s = sf_generate(model, req.dump().c_str(), gen_out.c_str(), &report);
        sf_model_free(model);
        if (s != SF_OK) return fail(s);
        std::cout << take(report) << '\n';
        return 0;
    }

    if (ev->parsed()) {
        std::vector<std::string> names, paths;
        for (const auto& c : checkpoints) {
            const auto eq = c.find('=');
            if (eq == std::string::npos || eq == 0) {
                std::cerr << "error: --checkpoints expects NAME=PATH\n";
                return 2;
            }
            names.push_back(c.substr(0, eq));
            paths.push_back(c.substr(eq + 1));
        }
        std::vector<const char*> np, pp;
        for (std::size_t i = 0; i < names.size(); ++i) {
            np.push_back(names[i].c_str());
            pp.push_back(paths[i].empty() ? nullptr : paths[i].c_str());
        }
        const json cfg{{"requests", requests},
                       {"stems_per_request", per_request},
                       {"heldout_seed", heldout_seed},
                       {"use_masks", !no_masks},
                       {"include_timing", !no_timing},
                       {"workflow_requests", workflow_requests},
                       {"sampler", sampler_json(eval_steps, 3.0, eval_seed, false)}};
        char* report = nullptr;
        if (auto s = sf_eval(cfg.dump().c_str(), np.data(), pp.data(), np.size(), &report); s != SF_OK) return fail(s);
        const auto text = take(report);
        std::cout << text;
        if (!eval_out.empty()) {
            std::ofstream out(eval_out, std::ios::binary);
            out << text;
            if (!out) {
                std::cerr << "error: cannot write " << eval_out << '\n';
                return 1;
            }
        }
        return 0;
    }

    if (serve->parsed()) {
        json cfg{{"checkpoint", serve_ckpt}, {"host", host}, {"port", port}};
        if (!data_dir.empty()) cfg["data_dir"] = data_dir;
        sf_service* svc = nullptr;
        if (auto s = sf_service_create(cfg.dump().c_str(), &svc); s != SF_OK) return fail(s);
        int bound = 0;
        if (auto s = sf_service_bind(svc, &bound); s != SF_OK) {
            sf_service_free(svc);
            return fail(s);
        }
        std::signal(SIGINT, [](int) { g_interrupted = true; });
        std::signal(SIGTERM, [](int) { g_interrupted = true; });
        std::thread watcher([svc] {
            while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            sf_service_stop(svc);
        });
        std::cout << "listening on http://" << host << ':' << bound << std::endl;
        const auto s = sf_service_run(svc);
        g_interrupted = true;
        watcher.join();
        sf_service_free(svc);
        return s == SF_OK ? 0 : fail(s);
    }

    if (info->parsed()) {
        sf_model* model = nullptr;
        if (auto s = sf_model_load(info_ckpt.c_str(), &model); s != SF_OK) return fail(s);
        char* text = nullptr;
        const auto s = sf_model_info(model, &text);
        sf_model_free(model);
        if (s != SF_OK) return fail(s);
        std::cout << take(text) << '\n';
        return 0;
    }
    return 0;
}
