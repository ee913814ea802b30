// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/balance.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace parapilot {

double balance_degree(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("balance degree of an empty stage list");
    double sum = 0, max = 0;
    for (double v : values) {
        sum += v;
        max = std::max(max, v);
    }
    if (!(sum > 0)) throw std::invalid_argument("balance degree needs a positive total");
    return 1.0 - max / sum;
}

BalanceReport balance_degrees(std::span<const Seconds> times, std::span<const Bytes> mems) {
    if (times.size() != mems.size()) throw std::invalid_argument("stage time and memory lists differ in length");
    BalanceReport r;
    r.stage_time.assign(times.begin(), times.end());
    r.stage_mem.assign(mems.begin(), mems.end());
    std::vector<double> m(mems.begin(), mems.end());
    r.alpha_t = balance_degree(times);
    r.alpha_m = balance_degree(m);
    return r;
}

BalanceReport balance_degrees(std::span<const StageCost> stages) {
    std::vector<Seconds> t;
    std::vector<Bytes> m;
    for (const auto& s : stages) {
        t.push_back(s.time_s);
        m.push_back(s.peak_mem_bytes);
    }
    return balance_degrees(t, m);
}

namespace {

// vals[i][a][n]: metric of stage i holding layers [a, a + n) under the seed.
using StageTable = std::vector<std::vector<std::vector<double>>>;

StageTable seed_table(const CostEstimator& est, int pp, int micro_batch, int n_micro, const ParallelStrategy& seed,
                      BalanceTarget target) {
    const int L = est.model().num_layers();
    StageTable t(pp, std::vector<std::vector<double>>(L, std::vector<double>(L + 1, 0.0)));
    std::vector<ParallelStrategy> run;
    for (int i = 0; i < pp; ++i) {
        const StageSlot slot{i + 1, pp, n_micro};
        for (int a = 0; a < L; ++a) {
            for (int n = 1; a + n <= L; ++n) {
                run.assign(n, seed);
                const StageCost c = est.stage_cost(a, run, micro_batch, slot);
                t[i][a][n] = target == BalanceTarget::kTime ? c.time_s : static_cast<double>(c.peak_mem_bytes);
            }
        }
    }
    return t;
}

double partition_alpha(const StageTable& t, const Partition& p) {
    std::vector<double> v;
    int a = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        v.push_back(t[i][a][p[i]]);
        a += p[i];
    }
    double sum = 0, max = 0;
    for (double x : v) {
        sum += x;
        max = std::max(max, x);
    }
    return sum > 0 ? 1.0 - max / sum : 0.0;
}

}  // namespace

Partition init_partition(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                         const ParallelStrategy& seed, BalanceTarget target) {
    const int L = est.model().num_layers();
    if (pp < 1 || pp > L) throw std::invalid_argument("pipeline degree exceeds the number of layers");
    const StageTable t = seed_table(est, pp, micro_batch, n_micro, seed, target);

    // best[i][k]: smallest achievable max over stages 0..i covering k layers.
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best(pp, std::vector<double>(L + 1, kInf));
    std::vector<std::vector<int>> cut(pp, std::vector<int>(L + 1, -1));
    for (int k = 1; k <= L; ++k) best[0][k] = t[0][0][k];
    for (int i = 1; i < pp; ++i) {
        for (int k = i + 1; k <= L; ++k) {
            for (int j = i; j < k; ++j) {
                const double v = std::max(best[i - 1][j], t[i][j][k - j]);
                if (v < best[i][k]) {
                    best[i][k] = v;
                    cut[i][k] = j;
                }
            }
        }
    }
    Partition p(pp);
    int k = L;
    for (int i = pp - 1; i > 0; --i) {
        p[i] = k - cut[i][k];
        k = cut[i][k];
    }
    p[0] = k;

    double alpha = partition_alpha(t, p);
    while (true) {
        Partition bestp;
        double besta = alpha;
        for (int b = 0; b + 1 < pp; ++b) {
            for (int dir : {-1, +1}) {
                Partition q = p;
                q[b] += dir;
                q[b + 1] -= dir;
                if (q[b] < 1 || q[b + 1] < 1) continue;
                const double a = partition_alpha(t, q);
                if (a > besta) {
                    besta = a;
                    bestp = std::move(q);
                }
            }
        }
        if (bestp.empty()) break;
        p = std::move(bestp);
        alpha = besta;
    }
    return p;
}

Partition init_partition_memory_balanced(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                                         const ParallelStrategy& seed) {
    return init_partition(est, pp, micro_batch, n_micro, seed, BalanceTarget::kMemory);
}

Partition init_partition_time_balanced(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                                       const ParallelStrategy& seed) {
    return init_partition(est, pp, micro_batch, n_micro, seed, BalanceTarget::kTime);
}

ParallelStrategy seed_strategy(const CostEstimator& est, int pp, int micro_batch, int n_micro) {
    const int G = est.cluster().n_devices / pp;
    if (G == 1) return {pp, {}, false};
    if (micro_batch % G != 0) return {pp, {{Paradigm::kTP, G}}, false};
    const ParallelStrategy dp{pp, {{Paradigm::kDP, G}}, false};
    const int L = est.model().num_layers();
    if (pp > L) return dp;
    const Partition p = init_partition_memory_balanced(est, pp, micro_batch, n_micro, dp);
    int first = 0;
    for (int i = 0; i < pp; ++i) {
        const std::vector<ParallelStrategy> run(p[i], dp);
        const StageCost c = est.stage_cost(first, run, micro_batch, {i + 1, pp, n_micro});
        if (c.peak_mem_bytes > est.cluster().mem_budget_bytes) return {pp, {{Paradigm::kSDP, G}}, false};
        first += p[i];
    }
    return dp;
}

Adjustment adjust_partition(const Partition& p, std::span<const Seconds> stage_times) {
    if (stage_times.size() != p.size()) throw std::invalid_argument("one stage time per stage required");
    Adjustment a;
    a.partition = p;
    const int P = static_cast<int>(p.size());
    if (P == 0) return a;
    int s = 0;
    for (int i = 1; i < P; ++i) {
        if (stage_times[i] > stage_times[s]) s = i;
    }
    a.slowest_stage = s;
    if (p[s] <= 1) return a;

    const bool has_left = s > 0;
    const bool has_right = s + 1 < P;
    if (!has_left && !has_right) return a;
    int to;
    if (has_left && has_right) to = stage_times[s - 1] < stage_times[s + 1] ? s - 1 : s + 1;
    else to = has_left ? s - 1 : s + 1;

    auto moved_to = [&](int n) {
        Partition q = p;
        --q[s];
        ++q[n];
        return q;
    };
    if (has_left && has_right) a.untried = moved_to(to == s - 1 ? s + 1 : s - 1);
    if (!(stage_times[to] < stage_times[s])) return a;
    a.partition = moved_to(to);
    a.moved = true;
    return a;
}

const char* to_string(Rejection r) {
    switch (r) {
        case Rejection::kNone: return "accepted";
        case Rejection::kTime: return "stage time above previous maximum";
        case Rejection::kMemoryBudget: return "stage memory above budget";
        case Rejection::kMemoryCap: return "stage memory above time-balanced peak";
        case Rejection::kAlphaT: return "time balance decreased";
        case Rejection::kAlphaM: return "memory balance below time-balanced partition";
        case Rejection::kInfeasible: return "no feasible strategies";
    }
    return "?";
}

Rejection validate_partition(std::span<const StageCost> stages, const ValidationBounds& bounds) {
    for (const auto& s : stages) {
        if (s.time_s > bounds.max_time_prev) return Rejection::kTime;
    }
    for (const auto& s : stages) {
        if (s.peak_mem_bytes > bounds.mem_budget) return Rejection::kMemoryBudget;
    }
    for (const auto& s : stages) {
        if (static_cast<double>(s.peak_mem_bytes) > bounds.mem_cap_time_balanced) return Rejection::kMemoryCap;
    }
    if (bounds.min_alpha_t || bounds.min_alpha_m) {
        const BalanceReport r = balance_degrees(stages);
        if (bounds.min_alpha_t && r.alpha_t < *bounds.min_alpha_t) return Rejection::kAlphaT;
        if (bounds.min_alpha_m && r.alpha_m < *bounds.min_alpha_m) return Rejection::kAlphaM;
    }
    return Rejection::kNone;
}

nlohmann::json to_json(const TrajectoryEntry& e) {
    nlohmann::json j;
    j["iteration"] = e.iteration;
    j["from"] = e.from;
    j["partition"] = e.partition;
    j["untried"] = e.untried ? nlohmann::json(*e.untried) : nlohmann::json(nullptr);
    j["feasible"] = e.feasible;
    j["alpha_t"] = e.alpha_t;
    j["alpha_m"] = e.alpha_m;
    j["max_stage_time_s"] = e.max_time;
    j["max_stage_mem_bytes"] = e.max_mem;
    j["bound_time_s"] = e.bound_time;
    j["bound_mem_bytes"] = e.bound_mem;
    j["accepted"] = e.accepted;
    j["reason"] = to_string(e.rejection);
    return j;
}

void write_trajectory(std::ostream& os, std::span<const TrajectoryEntry> entries) {
    for (const auto& e : entries) os << to_json(e).dump() << '\n';
}

BiObjectiveResult bi_objective_optimize(const CostEstimator& est, int batch, int pp,
                                        const BiObjectiveOptions& options) {
    BiObjectiveResult out;
    const int L = est.model().num_layers();
    out.best.batch_size = batch;
    out.best.pp_degree = pp;
    if (pp > L) {
        out.best.reason = "more stages than layers";
        return out;
    }
    const int m = init_microbatch_num(batch, pp, options.search.micro);
    const int mb = batch / m;
    const ParallelStrategy seed = seed_strategy(est, pp, mb, m);
    out.memory_balanced = init_partition_memory_balanced(est, pp, mb, m, seed);
    out.time_balanced = init_partition_time_balanced(est, pp, mb, m, seed);

    std::map<Partition, PipelineResult> cache;
    auto search = [&](const Partition& p) -> const PipelineResult& {
        auto it = cache.find(p);
        if (it == cache.end()) it = cache.emplace(p, pipeline_search(est, p, batch, m, options.search)).first;
        return it->second;
    };

    out.time_balanced_result = search(out.time_balanced);
    const PipelineResult& rt = out.time_balanced_result;
    const double mem_cap = rt.feasible ? static_cast<double>(rt.max_stage_memory()) : kInfeasible;
    const double alpha_m_t = rt.feasible ? balance_degrees(rt.stages).alpha_m : 0.0;

    std::deque<Partition> queue{out.memory_balanced};
    std::set<Partition> visited{out.memory_balanced};
    out.best = search(out.memory_balanced);
    const int cap = options.iteration_factor * L;
    while (!queue.empty() && out.iterations < cap) {
        const Partition p = queue.front();
        queue.pop_front();
        ++out.iterations;
        const PipelineResult r = search(p);
        if (r.feasible && (!out.best.feasible || r.time_s < out.best.time_s)) out.best = r;
        if (!r.feasible || pp == 1) continue;

        std::vector<Seconds> times;
        for (const auto& s : r.stages) times.push_back(s.time_s);
        const Adjustment adj = adjust_partition(p, times);
        if (!adj.moved) continue;

        const PipelineResult& r2 = search(adj.partition);
        ValidationBounds bounds;
        bounds.max_time_prev = r.max_stage_time();
        bounds.mem_budget = est.cluster().mem_budget_bytes;
        bounds.mem_cap_time_balanced = mem_cap;
        if (options.enforce_alpha_bounds) {
            bounds.min_alpha_t = balance_degrees(r.stages).alpha_t;
            bounds.min_alpha_m = alpha_m_t;
        }

        TrajectoryEntry e;
        e.iteration = out.iterations;
        e.from = p;
        e.partition = adj.partition;
        e.untried = adj.untried;
        e.feasible = r2.feasible;
        e.bound_time = bounds.max_time_prev;
        e.bound_mem = std::min(static_cast<double>(bounds.mem_budget), mem_cap);
        if (r2.feasible) {
            const BalanceReport b = balance_degrees(r2.stages);
            e.alpha_t = b.alpha_t;
            e.alpha_m = b.alpha_m;
            e.max_time = r2.max_stage_time();
            e.max_mem = r2.max_stage_memory();
            e.rejection = validate_partition(r2.stages, bounds);
        } else {
            e.rejection = Rejection::kInfeasible;
        }
        e.accepted = e.rejection == Rejection::kNone;
        if (e.accepted && visited.insert(adj.partition).second) queue.push_back(adj.partition);
        out.trajectory.push_back(std::move(e));
    }
    if (out.best.feasible && out.best.max_stage_memory() > est.cluster().mem_budget_bytes) {
        throw std::logic_error("bi_objective_optimize: plan exceeds the memory budget");
    }
    return out;
}

}  // namespace parapilot
