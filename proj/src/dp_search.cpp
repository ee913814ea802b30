// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/dp_search.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace parapilot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint32_t kQBits = 24;
constexpr std::uint32_t kQMask = (1u << kQBits) - 1;
// Upper bound on back-pointer storage (cells x layers).
constexpr std::size_t kMaxCells = std::size_t{1} << 28;

Bytes ceil_div(Bytes a, Bytes b) { return (a + b - 1) / b; }

struct Discretised {
    int K = 0;     // budget buckets
    int qmax = 0;  // b_up in buckets
    std::vector<int> w;   // ceil((O_f + O_ms) / g)
    std::vector<int> of;  // floor(O_f / g)
    std::vector<int> ob;  // ceil(O_b / g)
};

Discretised discretise(const DpTable& t, Bytes budget, Bytes g) {
    Discretised d;
    const Bytes k = budget / g;
    d.K = static_cast<int>(std::min<Bytes>(k, std::numeric_limits<int>::max() / 2));
    const std::size_t n = static_cast<std::size_t>(t.n_layers()) * t.n_strategies();
    d.w.resize(n);
    d.of.resize(n);
    d.ob.resize(n);
    auto clamp = [&](Bytes b) { return static_cast<int>(std::min<Bytes>(b, Bytes{d.K} + 1)); };
    for (int l = 0; l < t.n_layers(); ++l) {
        for (int j = 0; j < t.n_strategies(); ++j) {
            const auto& m = t.memory(l, j);
            const std::size_t i = static_cast<std::size_t>(l) * t.n_strategies() + j;
            d.w[i] = clamp(ceil_div(m.fwd + m.states, g));
            d.of[i] = clamp(m.fwd / g);
            d.ob[i] = clamp(ceil_div(m.bwd, g));
            d.qmax = std::max(d.qmax, d.ob[i]);
        }
    }
    return d;
}

// Cheapest predecessor per target layout class, given predecessor costs for
// one memory state.
struct ClassBest {
    std::vector<double> cost;  // indexed by target class
    std::vector<int> from;     // predecessor strategy index
};

void best_into_class(const DpTable& t, int l, const double* prev, std::vector<double>& by_class,
                     std::vector<int>& arg_class, ClassBest& out) {
    const int S = t.n_strategies();
    const int C = t.n_classes();
    std::fill(by_class.begin(), by_class.end(), kInf);
    std::fill(arg_class.begin(), arg_class.end(), -1);
    for (int i = 0; i < S; ++i) {
        const int c = t.layout_class(i);
        if (prev[i] < by_class[c]) {
            by_class[c] = prev[i];
            arg_class[c] = i;
        }
    }
    for (int to = 0; to < C; ++to) {
        double best = kInf;
        int from = -1;
        for (int c = 0; c < C; ++c) {
            if (arg_class[c] < 0) continue;
            const double v = by_class[c] + t.transform(l, c, to);
            if (v < best || (v == best && from >= 0 && arg_class[c] < from)) {
                best = v;
                from = arg_class[c];
            }
        }
        out.cost[to] = best;
        out.from[to] = from;
    }
}

void check_size(std::size_t cells_per_layer, int layers) {
    if (cells_per_layer == 0 || cells_per_layer > kMaxCells / std::max(1, layers)) {
        throw std::length_error("dp_search: state space too large; use a coarser memory granularity");
    }
}

DpResult finish(const DpTable& t, Bytes budget, std::vector<int> choice, double objective, Bytes e_fwd_budget) {
    DpResult r;
    r.feasible = true;
    r.choice = std::move(choice);
    r.time_s = objective;
    r.e_fwd_budget = e_fwd_budget;
    const MemoryFootprint fp = t.assignment_memory(r.choice);
    r.e_fwd_used = fp.e_f;
    r.e_all = fp.e_all;
    if (r.e_all > budget) {
        throw std::logic_error("dp_search: selected plan exceeds the memory budget");
    }
    return r;
}

DpResult search_exact(const DpTable& t, Bytes budget, const DpOptions& opt) {
    const Discretised d = discretise(t, budget, opt.granularity);
    const int L = t.n_layers();
    const int S = t.n_strategies();
    const int C = t.n_classes();
    const int Kq = d.qmax + 1;
    if (d.qmax > static_cast<int>(kQMask) || S > 255) {
        throw std::length_error("dp_search: too many strategies or backward buckets");
    }
    const std::size_t cells = static_cast<std::size_t>(d.K + 1) * Kq * S;
    check_size(cells, L);
    auto cell = [&](int e, int q, int j) { return (static_cast<std::size_t>(e) * Kq + q) * S + j; };
    auto at = [&](const std::vector<int>& v, int l, int j) { return v[static_cast<std::size_t>(l) * S + j]; };

    std::vector<double> prev(cells, kInf), cur(cells, kInf);
    std::vector<std::vector<std::uint32_t>> back(L);

    for (int j = 0; j < S; ++j) {
        const int e = at(d.w, 0, j);
        const int q = at(d.ob, 0, j);
        if (e + q > d.K) continue;
        cur[cell(e, q, j)] = t.cost(0, j);
    }

    std::vector<double> by_class(C);
    std::vector<int> arg_class(C);
    ClassBest best{std::vector<double>(C), std::vector<int>(C)};

    auto collapse = [&](std::vector<double>& layer) {
        for (int e = 0; e <= d.K; ++e) {
            for (int q = 0; q < Kq; ++q) {
                double* row = &layer[cell(e, q, 0)];
                int keep = -1;
                for (int j = 0; j < S; ++j) {
                    if (row[j] < kInf && (keep < 0 || row[j] < row[keep])) keep = j;
                }
                for (int j = 0; j < S; ++j) {
                    if (j != keep) row[j] = kInf;
                }
            }
        }
    };
    if (opt.best_predecessor_only) collapse(cur);

    for (int l = 1; l < L; ++l) {
        std::swap(prev, cur);
        std::fill(cur.begin(), cur.end(), kInf);
        back[l].assign(cells, 0);
        for (int ep = 0; ep <= d.K; ++ep) {
            for (int qp = 0; qp < Kq; ++qp) {
                const double* row = &prev[cell(ep, qp, 0)];
                bool any = false;
                for (int i = 0; i < S && !any; ++i) any = row[i] < kInf;
                if (!any) continue;
                best_into_class(t, l, row, by_class, arg_class, best);
                for (int j = 0; j < S; ++j) {
                    const int e = ep + at(d.w, l, j);
                    if (e > d.K) continue;
                    const int q = std::max(at(d.ob, l, j), qp - at(d.of, l, j));
                    if (e + q > d.K) continue;
                    const int cj = t.layout_class(j);
                    if (best.from[cj] < 0) continue;
                    const double cand = best.cost[cj] + t.cost(l, j);
                    const std::size_t c = cell(e, q, j);
                    if (cand < cur[c]) {
                        cur[c] = cand;
                        back[l][c] = (static_cast<std::uint32_t>(best.from[cj]) << kQBits) |
                                     static_cast<std::uint32_t>(qp);
                    }
                }
            }
        }
        if (opt.best_predecessor_only) collapse(cur);
    }

    // Cheapest final state; ties prefer lower E_all, then lower E_fwd, then
    // lower strategy index.
    double best_cost = kInf;
    int be = -1, bq = -1, bj = -1;
    std::vector<double> per_e(d.K + 1, kInf);
    for (int e = 0; e <= d.K; ++e) {
        for (int q = 0; q < Kq && e + q <= d.K; ++q) {
            for (int j = 0; j < S; ++j) {
                const double v = cur[cell(e, q, j)];
                per_e[e] = std::min(per_e[e], v);
                const bool better = v < best_cost ||
                                    (v == best_cost && v < kInf &&
                                     (e + q < be + bq || (e + q == be + bq && e < be)));
                if (better) {
                    best_cost = v;
                    be = e;
                    bq = q;
                    bj = j;
                }
            }
        }
    }

    DpResult r;
    if (be < 0) {
        r.choice.clear();
    } else {
        std::vector<int> choice(L);
        int e = be, q = bq, j = bj;
        for (int l = L - 1; l >= 1; --l) {
            const std::uint32_t bp = back[l][cell(e, q, j)];
            choice[l] = j;
            e -= at(d.w, l, j);
            q = static_cast<int>(bp & kQMask);
            j = static_cast<int>(bp >> kQBits);
        }
        choice[0] = j;
        r = finish(t, budget, std::move(choice), best_cost, Bytes{be} * opt.granularity);
    }
    if (opt.record_frontier) {
        double running = kInf;
        for (int e = 0; e <= d.K; ++e) {
            running = std::min(running, per_e[e]);
            r.frontier.emplace_back(Bytes{e} * opt.granularity, running);
        }
    }
    return r;
}

DpResult search_forward_sweep(const DpTable& t, Bytes budget, const DpOptions& opt) {
    const Discretised d = discretise(t, budget, opt.granularity);
    const int L = t.n_layers();
    const int S = t.n_strategies();
    const int C = t.n_classes();
    const std::size_t cells = static_cast<std::size_t>(d.K + 1) * S;
    check_size(cells, L);
    auto cell = [&](int e, int j) { return static_cast<std::size_t>(e) * S + j; };
    auto at = [&](const std::vector<int>& v, int l, int j) { return v[static_cast<std::size_t>(l) * S + j]; };

    std::vector<double> prev(cells, kInf), cur(cells, kInf);
    std::vector<std::vector<std::int32_t>> back(L);
    for (int j = 0; j < S; ++j) {
        const int e = at(d.w, 0, j);
        if (e <= d.K) cur[cell(e, j)] = t.cost(0, j);
    }
    std::vector<double> by_class(C);
    std::vector<int> arg_class(C);
    ClassBest best{std::vector<double>(C), std::vector<int>(C)};
    for (int l = 1; l < L; ++l) {
        std::swap(prev, cur);
        std::fill(cur.begin(), cur.end(), kInf);
        back[l].assign(cells, -1);
        for (int ep = 0; ep <= d.K; ++ep) {
            const double* row = &prev[cell(ep, 0)];
            bool any = false;
            for (int i = 0; i < S && !any; ++i) any = row[i] < kInf;
            if (!any) continue;
            best_into_class(t, l, row, by_class, arg_class, best);
            for (int j = 0; j < S; ++j) {
                const int e = ep + at(d.w, l, j);
                if (e > d.K) continue;
                const int cj = t.layout_class(j);
                if (best.from[cj] < 0) continue;
                const double cand = best.cost[cj] + t.cost(l, j);
                if (cand < cur[cell(e, j)]) {
                    cur[cell(e, j)] = cand;
                    back[l][cell(e, j)] = best.from[cj];
                }
            }
        }
    }

    auto backtrack = [&](int e, int j) {
        std::vector<int> choice(L);
        for (int l = L - 1; l >= 1; --l) {
            choice[l] = j;
            const int i = back[l][cell(e, j)];
            e -= at(d.w, l, j);
            j = i;
        }
        choice[0] = j;
        return choice;
    };

    // Raise E_fwd one bucket at a time; below K - b_up every plan fits.
    const int unchecked_up_to = d.K - d.qmax;
    double best_cost = kInf;
    int be = -1, bj = -1;
    int opt_f = -1;
    std::vector<int> opt_choice;
    double opt_cost = kInf;
    DpResult r;
    for (int f = 0; f <= d.K; ++f) {
        for (int j = 0; j < S; ++j) {
            if (cur[cell(f, j)] < best_cost) {
                best_cost = cur[cell(f, j)];
                be = f;
                bj = j;
            }
        }
        if (opt.record_frontier) r.frontier.emplace_back(Bytes{f} * opt.granularity, best_cost);
        if (be < 0) continue;
        std::vector<int> choice = backtrack(be, bj);
        if (f > unchecked_up_to && t.assignment_memory(choice).e_all > budget) break;
        opt_f = f;
        opt_cost = best_cost;
        opt_choice = std::move(choice);
    }
    if (opt_f >= 0) {
        auto frontier = std::move(r.frontier);
        r = finish(t, budget, std::move(opt_choice), opt_cost, Bytes{opt_f} * opt.granularity);
        r.frontier = std::move(frontier);
    }
    return r;
}

bool same_layer(const CostEstimator& est, int a, int b) {
    const LayerSpec& x = est.model().layers[a];
    const LayerSpec& y = est.model().layers[b];
    return x.kind == y.kind && x.param_bytes == y.param_bytes && x.bnd_bytes_per_sample == y.bnd_bytes_per_sample &&
           x.int_bytes_per_sample == y.int_bytes_per_sample &&
           est.profile().fwd_time(x) == est.profile().fwd_time(y) &&
           est.profile().tp_act_replication(x) == est.profile().tp_act_replication(y);
}

}  // namespace

DpTable::DpTable(int n_layers, int n_strategies, std::vector<int> layout_class)
    : n_layers_(n_layers), n_strategies_(n_strategies), layout_class_(std::move(layout_class)) {
    if (n_layers < 0 || n_strategies < 0 || static_cast<int>(layout_class_.size()) != n_strategies) {
        throw std::invalid_argument("DpTable: inconsistent dimensions");
    }
    for (int c : layout_class_) {
        if (c < 0) throw std::invalid_argument("DpTable: negative layout class");
        n_classes_ = std::max(n_classes_, c + 1);
    }
    cost_.assign(static_cast<std::size_t>(n_layers) * n_strategies, 0.0);
    mem_.assign(static_cast<std::size_t>(n_layers) * n_strategies, LayerMemory{});
    transform_.assign(static_cast<std::size_t>(n_layers) * n_classes_ * n_classes_, 0.0);
}

double DpTable::assignment_cost(std::span<const int> choice) const {
    double total = 0;
    for (int l = 0; l < static_cast<int>(choice.size()); ++l) {
        total += cost(l, choice[l]);
        if (l > 0) total += transform_between(l, choice[l - 1], choice[l]);
    }
    return total;
}

MemoryFootprint DpTable::assignment_memory(std::span<const int> choice) const {
    std::vector<LayerMemory> mem;
    mem.reserve(choice.size());
    for (int l = 0; l < static_cast<int>(choice.size()); ++l) mem.push_back(memory(l, choice[l]));
    return memory_footprint(mem);
}

Bytes backward_peak_bound(const DpTable& table) {
    Bytes b = 0;
    for (int l = 0; l < table.n_layers(); ++l) {
        for (int j = 0; j < table.n_strategies(); ++j) b = std::max(b, table.memory(l, j).bwd);
    }
    return b;
}

DpResult dp_search(const DpTable& table, Bytes budget, const DpOptions& options) {
    if (options.granularity <= 0) throw std::invalid_argument("dp_search: granularity must be positive");
    if (budget < 0) throw std::invalid_argument("dp_search: budget must be non-negative");
    if (table.n_layers() == 0) {
        DpResult r;
        r.feasible = true;
        r.time_s = 0;
        return r;
    }
    if (table.n_strategies() == 0) return {};
    return options.mode == DpMode::kExact ? search_exact(table, budget, options)
                                          : search_forward_sweep(table, budget, options);
}

std::vector<ParallelStrategy> applicable_strategies(std::span<const ParallelStrategy> candidates, int micro_batch) {
    std::vector<ParallelStrategy> out;
    for (const auto& s : candidates) {
        if (micro_batch % s.batch_split() == 0) out.push_back(s);
    }
    return out;
}

DpTable build_stage_table(const CostEstimator& est, int first_layer, int n_layers,
                          std::span<const ParallelStrategy> candidates, int micro_batch, const StageSlot& slot,
                          const ObjectiveWeights& weights, int fuse_max, std::vector<int>* row_sizes) {
    const int S = static_cast<int>(candidates.size());

    // Strategies with identical batch layouts share a class.
    std::vector<int> cls(S, -1);
    std::vector<int> reps;
    for (int j = 0; j < S; ++j) {
        for (int c = 0; c < static_cast<int>(reps.size()); ++c) {
            const auto& r = candidates[reps[c]];
            if (CostEstimator::moved_fraction(r, candidates[j]) == 0.0 &&
                CostEstimator::moved_fraction(candidates[j], r) == 0.0) {
                cls[j] = c;
                break;
            }
        }
        if (cls[j] < 0) {
            cls[j] = static_cast<int>(reps.size());
            reps.push_back(j);
        }
    }

    std::vector<int> sizes;
    for (int l = 0; l < n_layers;) {
        int k = 1;
        while (k < std::max(1, fuse_max) && l + k < n_layers &&
               same_layer(est, first_layer + l, first_layer + l + k)) {
            ++k;
        }
        sizes.push_back(k);
        l += k;
    }

    const int rows = static_cast<int>(sizes.size());
    DpTable t(rows, S, cls);
    const double r_weight = weights.sync + weights.steady;
    int layer = first_layer;
    for (int r = 0; r < rows; ++r) {
        const int k = sizes[r];
        for (int j = 0; j < S; ++j) {
            const LayerCost c = est.layer_cost(layer, candidates[j], micro_batch, slot);
            t.cost(r, j) = k * (weights.sync * c.time_s + weights.steady * c.time_no_sync_s);
            // Identical layers peak at the last one, so O_b stays per-layer.
            t.memory(r, j) = {k * c.mem_fwd_bytes, c.mem_bwd_bytes, k * c.mem_states_bytes};
        }
        if (r > 0) {
            for (int a = 0; a < t.n_classes(); ++a) {
                for (int b = 0; b < t.n_classes(); ++b) {
                    t.transform(r, a, b) =
                        r_weight * est.transform_cost(layer, candidates[reps[a]], candidates[reps[b]], micro_batch);
                }
            }
        }
        layer += k;
    }
    if (row_sizes) *row_sizes = std::move(sizes);
    return t;
}

StageSearchResult dp_search(const CostEstimator& est, int first_layer, int n_layers,
                            std::span<const ParallelStrategy> candidates, int micro_batch, const StageSlot& slot,
                            Bytes budget, const StageSearchOptions& options) {
    const std::vector<ParallelStrategy> usable = applicable_strategies(candidates, micro_batch);
    StageSearchResult out;
    if (usable.empty()) return out;
    std::vector<int> sizes;
    const DpTable t = build_stage_table(est, first_layer, n_layers, usable, micro_batch, slot, options.weights,
                                        options.fuse_max, &sizes);
    out.dp = dp_search(t, budget, options.dp);
    if (!out.dp.feasible) return out;
    for (std::size_t r = 0; r < sizes.size(); ++r) {
        for (int k = 0; k < sizes[r]; ++k) out.strategies.push_back(usable[out.dp.choice[r]]);
    }
    return out;
}

}  // namespace parapilot
