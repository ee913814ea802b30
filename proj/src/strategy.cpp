// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/strategy.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <sstream>
#include <stdexcept>

namespace parapilot {

namespace {

constexpr std::array<Paradigm, 3> kParadigms = {Paradigm::kDP, Paradigm::kSDP, Paradigm::kTP};

// Ordered factorisations of n into powers of two >= 2.
void factorisations(int n, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
    if (n == 1) {
        out.push_back(prefix);
        return;
    }
    for (int d = 2; d <= n; d *= 2) {
        if (n % d != 0) continue;
        prefix.push_back(d);
        factorisations(n / d, prefix, out);
        prefix.pop_back();
    }
}

// Injective paradigm assignments for k levels, in lexicographic paradigm order.
void assignments(std::size_t k, std::vector<Paradigm>& prefix, std::vector<std::vector<Paradigm>>& out) {
    if (prefix.size() == k) {
        out.push_back(prefix);
        return;
    }
    for (Paradigm p : kParadigms) {
        if (std::find(prefix.begin(), prefix.end(), p) != prefix.end()) continue;
        prefix.push_back(p);
        assignments(k, prefix, out);
        prefix.pop_back();
    }
}

std::strong_ordering compare_levels(const TreeShape& a, const TreeShape& b) {
    if (auto c = a.size() <=> b.size(); c != 0) return c;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (auto c = a[i].paradigm <=> b[i].paradigm; c != 0) return c;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (auto c = a[i].degree <=> b[i].degree; c != 0) return c;
    }
    return std::strong_ordering::equal;
}

[[noreturn]] void bad_strategy(std::string_view text, const std::string& why) {
    throw std::invalid_argument("bad strategy '" + std::string(text) + "': " + why);
}

int parse_positive(std::string_view digits, std::string_view text) {
    int value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || value <= 0) {
        bad_strategy(text, "expected a positive degree in '" + std::string(digits) + "'");
    }
    return value;
}

}  // namespace

std::string_view paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::kDP: return "dp";
        case Paradigm::kSDP: return "sdp";
        case Paradigm::kTP: return "tp";
    }
    return "?";
}

int ParallelStrategy::group_size() const {
    int g = 1;
    for (const auto& l : levels) g *= l.degree;
    return g;
}

int ParallelStrategy::degree_of(Paradigm p) const {
    int d = 1;
    for (const auto& l : levels) {
        if (l.paradigm == p) d *= l.degree;
    }
    return d;
}

std::strong_ordering canonical_compare(const ParallelStrategy& a, const ParallelStrategy& b) {
    if (auto c = a.pp_degree <=> b.pp_degree; c != 0) return c;
    if (auto c = compare_levels(a.levels, b.levels); c != 0) return c;
    return a.ckpt <=> b.ckpt;
}

std::vector<TreeShape> build_decision_trees(int group_size) {
    if (!is_power_of_two(group_size)) {
        throw std::invalid_argument("group size " + std::to_string(group_size) + " is not a power of two");
    }
    std::vector<std::vector<int>> factors;
    std::vector<int> prefix;
    factorisations(group_size, prefix, factors);

    std::vector<TreeShape> trees;
    for (const auto& degrees : factors) {
        std::vector<std::vector<Paradigm>> paradigms;
        std::vector<Paradigm> p;
        assignments(degrees.size(), p, paradigms);
        for (const auto& assign : paradigms) {
            TreeShape t;
            for (std::size_t i = 0; i < degrees.size(); ++i) t.push_back({assign[i], degrees[i]});
            trees.push_back(std::move(t));
        }
    }
    std::sort(trees.begin(), trees.end(),
              [](const TreeShape& a, const TreeShape& b) { return compare_levels(a, b) < 0; });
    return trees;
}

StrategySet enumerate_strategies(int n_devices, int pp_degree) {
    if (!is_power_of_two(pp_degree)) {
        throw std::invalid_argument("pp degree " + std::to_string(pp_degree) + " is not a power of two");
    }
    if (n_devices <= 0 || n_devices % pp_degree != 0) {
        throw std::invalid_argument("pp degree " + std::to_string(pp_degree) + " does not divide " +
                                    std::to_string(n_devices) + " devices");
    }
    StrategySet set;
    set.pp_degree = pp_degree;
    set.group_size = n_devices / pp_degree;
    for (const auto& tree : build_decision_trees(set.group_size)) {
        for (bool ckpt : {false, true}) {
            set.strategies.push_back({pp_degree, tree, ckpt});
        }
    }
    std::sort(set.strategies.begin(), set.strategies.end(), CanonicalLess{});
    return set;
}

StrategySet prune_dp_sdp(const StrategySet& set) {
    StrategySet out{set.pp_degree, set.group_size, {}};
    for (const auto& s : set.strategies) {
        if (s.has(Paradigm::kDP) && s.has(Paradigm::kSDP)) continue;
        out.strategies.push_back(s);
    }
    return out;
}

std::vector<int> pp_degrees(int n_devices) {
    std::vector<int> out;
    for (int p = 1; p <= n_devices; p *= 2) {
        if (n_devices % p == 0) out.push_back(p);
    }
    return out;
}

bool satisfies_construction_rules(const ParallelStrategy& s, int n_devices) {
    if (!is_power_of_two(s.pp_degree)) return false;
    std::array<int, 3> seen{};
    for (const auto& l : s.levels) {
        if (l.degree < 2 || !is_power_of_two(l.degree)) return false;
        if (++seen[static_cast<int>(l.paradigm)] > 1) return false;
    }
    return static_cast<long long>(s.pp_degree) * s.group_size() == n_devices;
}

LinkTier level_tier(const ParallelStrategy& s, std::size_t level, const ClusterSpec& cluster) {
    long long span = 1;
    for (std::size_t i = level; i < s.levels.size(); ++i) span *= s.levels[i].degree;
    return span <= cluster.island_size ? LinkTier::kIntraIsland : LinkTier::kInterIsland;
}

std::string to_string(const ParallelStrategy& s) {
    std::ostringstream os;
    os << "pp" << s.pp_degree;
    for (const auto& l : s.levels) os << '/' << paradigm_name(l.paradigm) << l.degree;
    if (s.ckpt) os << "/ckpt";
    return os.str();
}

std::string to_string(const ParallelStrategy& s, const ClusterSpec& cluster) {
    std::ostringstream os;
    os << "pp" << s.pp_degree;
    for (std::size_t i = 0; i < s.levels.size(); ++i) {
        const auto& l = s.levels[i];
        os << '/' << paradigm_name(l.paradigm) << l.degree
           << (level_tier(s, i, cluster) == LinkTier::kIntraIsland ? "@island" : "@cross");
    }
    if (s.ckpt) os << "/ckpt";
    return os.str();
}

ParallelStrategy parse_strategy(std::string_view text) {
    ParallelStrategy s;
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        auto slash = text.find('/', start);
        parts.push_back(text.substr(start, slash == std::string_view::npos ? std::string_view::npos : slash - start));
        if (slash == std::string_view::npos) break;
        start = slash + 1;
    }
    if (parts.empty() || parts[0].substr(0, 2) != "pp") bad_strategy(text, "must start with 'pp<degree>'");
    s.pp_degree = parse_positive(parts[0].substr(2), text);
    for (std::size_t i = 1; i < parts.size(); ++i) {
        std::string_view tok = parts[i];
        if (tok == "ckpt") {
            if (i + 1 != parts.size()) bad_strategy(text, "'ckpt' must come last");
            s.ckpt = true;
            continue;
        }
        if (auto at = tok.find('@'); at != std::string_view::npos) {
            auto tier = tok.substr(at + 1);
            if (tier != "island" && tier != "cross") bad_strategy(text, "unknown tier '" + std::string(tier) + "'");
            tok = tok.substr(0, at);
        }
        Level l;
        if (tok.starts_with("sdp")) {
            l.paradigm = Paradigm::kSDP;
            tok.remove_prefix(3);
        } else if (tok.starts_with("dp")) {
            l.paradigm = Paradigm::kDP;
            tok.remove_prefix(2);
        } else if (tok.starts_with("tp")) {
            l.paradigm = Paradigm::kTP;
            tok.remove_prefix(2);
        } else {
            bad_strategy(text, "unknown level '" + std::string(parts[i]) + "'");
        }
        l.degree = parse_positive(tok, text);
        s.levels.push_back(l);
    }
    if (!satisfies_construction_rules(s, s.pp_degree * s.group_size())) {
        bad_strategy(text, "violates tree construction rules");
    }
    return s;
}

}  // namespace parapilot
