// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive reference for the per-stage search.

#pragma once

#include <algorithm>
#include <limits>
#include <set>

#include "test_support.hpp"

namespace parapilot::testing {

struct OracleResult {
    bool feasible = false;
    double cost = std::numeric_limits<double>::infinity();
    std::vector<int> choice;
};

// Peak memory written out directly from its definition.
inline Bytes direct_e_all(const DpTable& t, const std::vector<int>& choice) {
    Bytes states = 0;
    for (std::size_t l = 0; l < choice.size(); ++l) states += t.memory(static_cast<int>(l), choice[l]).states;
    Bytes peak = 0;
    for (std::size_t i = 0; i < choice.size(); ++i) {
        Bytes fwd = 0;
        for (std::size_t k = 0; k <= i; ++k) fwd += t.memory(static_cast<int>(k), choice[k]).fwd;
        peak = std::max(peak, fwd + t.memory(static_cast<int>(i), choice[i]).bwd + states);
    }
    return peak;
}

inline OracleResult brute_force(const DpTable& t, Bytes budget) {
    OracleResult best;
    for_each_assignment(t.n_layers(), t.n_strategies(), [&](const std::vector<int>& choice) {
        if (direct_e_all(t, choice) > budget) return;
        double cost = 0;
        for (int l = 0; l < t.n_layers(); ++l) {
            cost += t.cost(l, choice[l]);
            if (l > 0) cost += t.transform_between(l, choice[l - 1], choice[l]);
        }
        if (cost < best.cost) {
            best.feasible = true;
            best.cost = cost;
            best.choice = choice;
        }
    });
    return best;
}

struct RandomTable {
    DpTable table;
    Bytes budget = 0;
    std::vector<int> classes;
};

// L <= 4, |S| <= 6, at most 32 budget buckets of size `unit`; memory sizes are
// multiples of `unit`.
inline RandomTable random_table(Rng& rng, Bytes unit) {
    const int L = uniform_int(rng, 1, 4);
    const int S = uniform_int(rng, 1, 6);
    const int C = uniform_int(rng, 1, S);
    std::vector<int> cls(S);
    for (int j = 0; j < S; ++j) cls[j] = j < C ? j : uniform_int(rng, 0, C - 1);
    RandomTable r{DpTable(L, S, cls), unit * uniform_int(rng, 4, 32), cls};
    for (int l = 0; l < L; ++l) {
        for (int j = 0; j < S; ++j) {
            r.table.cost(l, j) = uniform_real(rng, 0.1, 5.0);
            r.table.memory(l, j) = {unit * uniform_int(rng, 0, 8), uniform_int(rng, 0, 2) == 0 ? unit * uniform_int(rng, 1, 10) : 0,
                                    unit * uniform_int(rng, 0, 4)};
        }
        for (int a = 0; a < C; ++a) {
            for (int b = 0; b < C; ++b) r.table.transform(l, a, b) = a == b ? 0.0 : uniform_real(rng, 0.0, 1.0);
        }
    }
    return r;
}

}  // namespace parapilot::testing
