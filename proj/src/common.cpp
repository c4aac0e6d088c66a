// Copyright 2026 The stemflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "stemflow/common.hpp"

#include <algorithm>
#include <cmath>

namespace stemflow {

namespace {

constexpr std::array<std::string_view, kNumStemTypes> kStemNames = {
    "drums", "bass", "keys", "guitar", "pad", "lead"};

}  // namespace

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * stream.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (auto s : stream) push(s);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

std::string_view stem_type_name(StemType type) {
    return kStemNames.at(static_cast<std::size_t>(type));
}

std::optional<StemType> parse_stem_type(std::string_view name) {
    for (std::size_t i = 0; i < kStemNames.size(); ++i) {
        if (kStemNames[i] == name) return static_cast<StemType>(i);
    }
    return std::nullopt;
}

StemType stem_type_from_string(std::string_view name) {
    auto t = parse_stem_type(name);
    if (!t) throw Error(Errc::invalid_argument, "unknown stem type '" + std::string(name) + "'");
    return *t;
}

std::vector<StemType> parse_stem_list(std::string_view comma_separated) {
    std::vector<StemType> out;
    std::size_t pos = 0;
    while (pos <= comma_separated.size()) {
        auto next = comma_separated.find(',', pos);
        if (next == std::string_view::npos) next = comma_separated.size();
        auto token = comma_separated.substr(pos, next - pos);
        if (!token.empty()) out.push_back(stem_type_from_string(token));
        pos = next + 1;
    }
    return out;
}

std::optional<int> tempo_bucket(int tempo_bpm) {
    auto it = std::find(kTempoGrid.begin(), kTempoGrid.end(), tempo_bpm);
    if (it == kTempoGrid.end()) return std::nullopt;
    return static_cast<int>(it - kTempoGrid.begin());
}

int frames_per_beat(int tempo_bpm) {
    if (tempo_bpm <= 0) throw Error(Errc::invalid_argument, "tempo must be positive");
    return static_cast<int>(std::lround(60.0 * kFrameRate / tempo_bpm));
}

std::string mask_to_string(const ActivityMask& mask) {
    std::string s(mask.size(), '0');
    for (std::size_t i = 0; i < mask.size(); ++i) s[i] = mask[i] ? '1' : '0';
    return s;
}

ActivityMask mask_from_string(std::string_view bits) {
    ActivityMask mask(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1')
            throw Error(Errc::invalid_argument, "activity mask must contain only 0/1");
        mask[i] = bits[i] == '1';
    }
    return mask;
}

}  // namespace stemflow
