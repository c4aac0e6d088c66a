// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stemflow/composition.hpp"

namespace stemflow {

struct StemRecord {
    StemType type = StemType::drums;
    std::uint64_t pattern_seed = 0;
    double loudness_db = 0.0;
    std::string latent_path;  // relative to the corpus root; empty in memory
    ActivityMask mask;        // detected, -60 dB cutoff
    Matrix latent;            // T x D
};

struct Composition {
    int id = 0;
    int tempo_bpm = 120;
    int phase = 0;
    int style = 0;
    std::vector<StemRecord> stems;

    std::uint8_t type_bits() const;
};

/// Read-only view used for training and evaluation.
struct Dataset {
    int clip_frames = 0;
    std::vector<Composition> compositions;

    std::size_t stem_count() const;
};

struct CorpusConfig {
    int count = 512;
    std::uint64_t seed = 1234;
    GeneratorConfig generator;
};

/// Deterministic list of composition specs for a corpus.
std::vector<CompositionSpec> corpus_specs(const CorpusConfig& config);

/// Synthesizes and encodes specs without touching the disk.
Dataset make_dataset(std::span<const CompositionSpec> specs);

/// Writes `manifest.jsonl` and `latents/*.lat` under `out_dir` and returns
/// the in-memory dataset (latents rounded to float32 as stored).
Dataset build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

/// Loads a corpus written by build_corpus.
Dataset load_corpus(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.jsonl";

}  // namespace stemflow
