// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decision-tree search space. A stage's device group (N / P devices) is
// factorised into nested levels, each owned by one paradigm. The first level
// is the root (outermost, largest device stride); the last level is the leaf
// and groups adjacent devices, so it lands on the fastest links.

#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "parapilot/model.hpp"

namespace parapilot {

enum class Paradigm : std::uint8_t { kDP = 0, kSDP = 1, kTP = 2 };

std::string_view paradigm_name(Paradigm p);

struct Level {
    Paradigm paradigm = Paradigm::kDP;
    int degree = 2;

    bool operator==(const Level&) const = default;
};

struct ParallelStrategy {
    int pp_degree = 1;
    std::vector<Level> levels;  // root -> leaf
    bool ckpt = false;

    int group_size() const;
    // Product of degrees of levels of the given paradigm (1 when absent).
    int degree_of(Paradigm p) const;
    // DP x SDP: how many ways the micro-batch is split.
    int batch_split() const { return degree_of(Paradigm::kDP) * degree_of(Paradigm::kSDP); }
    bool has(Paradigm p) const { return degree_of(p) > 1; }

    bool operator==(const ParallelStrategy&) const = default;
};

// Canonical order: level count, paradigm sequence, degree sequence, ckpt.
std::strong_ordering canonical_compare(const ParallelStrategy& a, const ParallelStrategy& b);

struct CanonicalLess {
    bool operator()(const ParallelStrategy& a, const ParallelStrategy& b) const {
        return canonical_compare(a, b) < 0;
    }
};

/// One decision tree: an ordered list of (paradigm, degree) levels.
using TreeShape = std::vector<Level>;

struct StrategySet {
    int pp_degree = 1;
    int group_size = 1;
    std::vector<ParallelStrategy> strategies;

    std::size_t size() const { return strategies.size(); }
};

std::vector<TreeShape> build_decision_trees(int group_size);
StrategySet enumerate_strategies(int n_devices, int pp_degree);
StrategySet prune_dp_sdp(const StrategySet& set);

/// 1, 2, 4, ..., n_devices.
std::vector<int> pp_degrees(int n_devices);

/// Checks the tree construction rules (power-of-two degrees >= 2, no repeated
/// paradigm, device count preserved).
bool satisfies_construction_rules(const ParallelStrategy& s, int n_devices);

enum class LinkTier : std::uint8_t { kIntraIsland, kInterIsland };

/// Tier of the links a level's collective runs over. The level spans
/// (inner degree product x its degree) consecutive devices; anything wider
/// than an island crosses the slow tier.
LinkTier level_tier(const ParallelStrategy& s, std::size_t level, const ClusterSpec& cluster);

/// Text form, e.g. "pp2/tp2/sdp2/ckpt". With a cluster, each level carries its
/// link tier: "pp2/tp2@island/sdp2@cross/ckpt".
std::string to_string(const ParallelStrategy& s);
std::string to_string(const ParallelStrategy& s, const ClusterSpec& cluster);

/// Inverse of to_string; tier annotations are accepted and ignored.
ParallelStrategy parse_strategy(std::string_view text);

}  // namespace parapilot
