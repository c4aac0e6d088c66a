// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "stemflow/corpus.hpp"

namespace stemflow::testing {

inline Dataset small_dataset(int count = 16, std::uint64_t seed = 99) {
    CorpusConfig cfg;
    cfg.count = count;
    cfg.seed = seed;
    const auto specs = corpus_specs(cfg);
    return make_dataset(specs);
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto dir = std::filesystem::temp_directory_path() / ("stemflow_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace stemflow::testing
