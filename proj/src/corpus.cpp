// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/corpus.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stemflow/codec.hpp"
#include "stemflow/io.hpp"

namespace stemflow {

using nlohmann::json;
namespace fs = std::filesystem;

std::uint8_t Composition::type_bits() const {
    std::uint8_t bits = 0;
    for (const auto& s : stems) bits |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(s.type));
    return bits;
}

std::size_t Dataset::stem_count() const {
    std::size_t n = 0;
    for (const auto& c : compositions) n += c.stems.size();
    return n;
}

std::vector<CompositionSpec> corpus_specs(const CorpusConfig& config) {
    std::vector<CompositionSpec> specs;
    specs.reserve(static_cast<std::size_t>(config.count));
    for (int i = 0; i < config.count; ++i) {
        Rng rng = derive_rng(config.seed, {static_cast<std::uint64_t>(i)});
        specs.push_back(random_composition(config.generator, rng));
    }
    return specs;
}

namespace {

Composition to_composition(int id, const CompositionSpec& spec) {
    Composition comp;
    comp.id = id;
    comp.tempo_bpm = spec.tempo_bpm;
    comp.phase = spec.phase;
    comp.style = spec.style;
    const auto waves = synthesize_composition(spec);
    for (std::size_t k = 0; k < spec.stems.size(); ++k) {
        StemRecord rec;
        rec.type = spec.stems[k].type;
        rec.pattern_seed = spec.stems[k].pattern_seed;
        rec.loudness_db = spec.stems[k].loudness_db;
        rec.mask = codec::detect_activity(waves[k]);
        rec.latent = codec::encode(waves[k]).frames;
        comp.stems.push_back(std::move(rec));
    }
    return comp;
}

}  // namespace

Dataset make_dataset(std::span<const CompositionSpec> specs) {
    Dataset ds;
    ds.clip_frames = specs.empty() ? 0 : specs.front().clip_frames;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].clip_frames != ds.clip_frames) {
            throw Error(Errc::invalid_argument, "compositions disagree on clip length");
        }
        ds.compositions.push_back(to_composition(static_cast<int>(i), specs[i]));
    }
    return ds;
}

Dataset build_corpus(const CorpusConfig& config, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir / "latents", ec);
    if (ec) throw Error(Errc::io, "cannot create " + out_dir.string() + ": " + ec.message());

    const auto specs = corpus_specs(config);
    Dataset ds = make_dataset(specs);
    std::ostringstream manifest;
    for (auto& comp : ds.compositions) {
        json rec;
        rec["composition_id"] = comp.id;
        rec["tempo"] = comp.tempo_bpm;
        rec["phase"] = comp.phase;
        rec["style_seed"] = comp.style;
        rec["style_token"] = comp.style;
        rec["clip_frames"] = ds.clip_frames;
        json types = json::array();
        json stems = json::array();
        for (std::size_t k = 0; k < comp.stems.size(); ++k) {
            auto& s = comp.stems[k];
            std::ostringstream name;
            name << "latents/c" << comp.id << "_" << stem_type_name(s.type) << ".lat";
            s.latent_path = name.str();
            const auto bytes = io::encode_latent(s.latent);
            io::write_file_atomic(out_dir / s.latent_path, bytes);
            s.latent = io::decode_latent(bytes);
            stems.push_back({{"stem_type", stem_type_name(s.type)},
                             {"pattern_seed", s.pattern_seed},
                             {"latent_path", s.latent_path},
                             {"mask", mask_to_string(s.mask)},
                             {"loudness_db", s.loudness_db}});
            types.push_back(stem_type_name(s.type));
        }
        rec["stem_types"] = types;
        rec["stems"] = stems;
        manifest << rec.dump() << '\n';
    }
    io::write_file_atomic(out_dir / kManifestName, manifest.str());
    return ds;
}

Dataset load_corpus(const fs::path& dir) {
    std::istringstream in(io::read_file(dir / kManifestName));
    Dataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(Errc::io, std::string("bad manifest line: ") + e.what());
        }
        Composition comp;
        comp.id = rec.at("composition_id").get<int>();
        comp.tempo_bpm = rec.at("tempo").get<int>();
        comp.phase = rec.at("phase").get<int>();
        comp.style = rec.at("style_seed").get<int>();
        const int frames = rec.at("clip_frames").get<int>();
        if (ds.compositions.empty()) ds.clip_frames = frames;
        if (frames != ds.clip_frames) throw Error(Errc::io, "manifest mixes clip lengths");
        for (const auto& s : rec.at("stems")) {
            StemRecord r;
            r.type = stem_type_from_string(s.at("stem_type").get<std::string>());
            r.pattern_seed = s.value("pattern_seed", std::uint64_t{0});
            r.loudness_db = s.at("loudness_db").get<double>();
            r.latent_path = s.at("latent_path").get<std::string>();
            r.mask = mask_from_string(s.at("mask").get<std::string>());
            r.latent = io::read_latent(dir / r.latent_path);
            if (r.latent.rows() != frames || r.latent.cols() != kLatentDim) {
                throw Error(Errc::io, "latent shape mismatch in " + r.latent_path);
            }
            comp.stems.push_back(std::move(r));
        }
        ds.compositions.push_back(std::move(comp));
    }
    if (ds.compositions.empty()) throw Error(Errc::io, "empty manifest in " + dir.string());
    return ds;
}

}  // namespace stemflow
