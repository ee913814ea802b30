// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "parapilot/planner.hpp"

namespace parapilot::testing {

inline LayerSpec make_layer(int id, Bytes param, Bytes bnd, Bytes inter, Seconds fwd, double frac = 0.25,
                            std::string kind = "layer") {
    LayerSpec l;
    l.id = id;
    l.kind = std::move(kind);
    l.param_bytes = param;
    l.bnd_bytes_per_sample = bnd;
    l.int_bytes_per_sample = inter;
    l.fwd_time_per_sample = fwd;
    l.tp_act_replication_fraction = frac;
    return l;
}

inline ModelSpec uniform_model(int n, Bytes param, Bytes bnd, Bytes inter, Seconds fwd, double ms = 4.0) {
    ModelSpec m;
    m.name = "uniform";
    m.ms_bytes_per_param_byte = ms;
    for (int i = 0; i < n; ++i) m.layers.push_back(make_layer(i, param, bnd, inter, fwd));
    return m;
}

inline ClusterSpec make_cluster(int n, Bytes budget, int island = 0, double intra = 100e9, double inter = 10e9,
                                double slowdown = 1.3) {
    ClusterSpec c;
    c.n_devices = n;
    c.mem_budget_bytes = budget;
    c.island_size = island > 0 ? island : n;
    c.intra_island_bw = intra;
    c.inter_island_bw = inter;
    c.overlap_slowdown = slowdown;
    return c;
}

inline ParallelStrategy strat(const std::string& text) { return parse_strategy(text); }

using Rng = std::mt19937_64;

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Random small model for fuzzing the planner against the oracle.
inline ModelSpec random_model(Rng& rng, int n_layers) {
    ModelSpec m;
    m.name = "fuzz";
    m.ms_bytes_per_param_byte = 4.0;
    for (int i = 0; i < n_layers; ++i) {
        m.layers.push_back(make_layer(i, Bytes{1} << uniform_int(rng, 18, 24), Bytes{1} << uniform_int(rng, 12, 18),
                                      Bytes{1} << uniform_int(rng, 14, 22), uniform_real(rng, 1e-4, 5e-3),
                                      uniform_real(rng, 0.0, 1.0)));
    }
    return m;
}

/// Every assignment of `options` values to `n` slots, odometer order.
template <class F>
void for_each_assignment(int n, int options, F&& f) {
    std::vector<int> digit(n, 0);
    while (true) {
        f(digit);
        int k = n - 1;
        while (k >= 0 && ++digit[k] == options) digit[k--] = 0;
        if (k < 0) return;
    }
}

}  // namespace parapilot::testing
