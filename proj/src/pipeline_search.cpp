// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/pipeline_search.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace parapilot {

namespace {

struct Candidate {
    std::vector<ParallelStrategy> strategies;
    StageCost cost;
};

// (time, time_no_sync) Pareto set of memory-feasible assignments of one stage.
std::vector<Candidate> stage_frontier(const CostEstimator& est, int first, int n,
                                      const std::vector<ParallelStrategy>& usable, int micro_batch,
                                      const StageSlot& slot) {
    const Bytes budget = est.cluster().mem_budget_bytes;
    const int S = static_cast<int>(usable.size());
    std::vector<int> digit(n, 0);
    std::vector<ParallelStrategy> assign(n, usable[0]);
    std::vector<Candidate> all;
    while (true) {
        for (int k = 0; k < n; ++k) assign[k] = usable[digit[k]];
        const StageCost c = est.stage_cost(first, assign, micro_batch, slot);
        if (c.peak_mem_bytes <= budget) all.push_back({assign, c});
        int k = n - 1;
        while (k >= 0 && ++digit[k] == S) digit[k--] = 0;
        if (k < 0) break;
    }
    // Sort by time then steady time; keep points strictly improving steady time.
    std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
        if (a.cost.time_s != b.cost.time_s) return a.cost.time_s < b.cost.time_s;
        return a.cost.time_no_sync_s < b.cost.time_no_sync_s;
    });
    std::vector<Candidate> front;
    for (auto& c : all) {
        if (front.empty() || c.cost.time_no_sync_s < front.back().cost.time_no_sync_s) front.push_back(std::move(c));
    }
    return front;
}

long long assignment_count(int strategies, int layers, long long limit) {
    long long n = 1;
    for (int i = 0; i < layers; ++i) {
        n *= strategies;
        if (n > limit) return limit + 1;
    }
    return n;
}

}  // namespace

void check_partition(const Partition& p, int n_layers, int pp) {
    if (static_cast<int>(p.size()) != pp) throw std::invalid_argument("partition must have one entry per stage");
    int sum = 0;
    for (int v : p) {
        if (v < 1) throw std::invalid_argument("every stage needs at least one layer");
        sum += v;
    }
    if (sum != n_layers) throw std::invalid_argument("partition does not cover the model");
}

std::vector<Partition> all_partitions(int n_layers, int pp) {
    std::vector<Partition> out;
    if (pp < 1 || pp > n_layers) return out;
    Partition cur;
    auto rec = [&](auto&& self, int left, int stages) -> void {
        if (stages == 1) {
            cur.push_back(left);
            out.push_back(cur);
            cur.pop_back();
            return;
        }
        for (int v = 1; v <= left - (stages - 1); ++v) {
            cur.push_back(v);
            self(self, left - v, stages - 1);
            cur.pop_back();
        }
    };
    rec(rec, n_layers, pp);
    return out;
}

int init_microbatch_num(int batch, int pp, const MicroBatchPolicy& policy) {
    if (batch < 1 || pp < 1) throw std::invalid_argument("batch size and pp degree must be positive");
    if (pp == 1) return 1;
    const int cap = std::max(1, policy.cap_factor * pp);
    for (int m = std::min(cap, batch); m > 1; --m) {
        if (batch % m == 0 && batch / m >= policy.min_micro_batch) return m;
    }
    return 1;
}

std::vector<ParallelStrategy> candidate_strategies(int n_devices, int pp, bool prune) {
    StrategySet set = enumerate_strategies(n_devices, pp);
    if (prune) set = prune_dp_sdp(set);
    return set.strategies;
}

Seconds PipelineResult::max_stage_time() const {
    Seconds m = 0;
    for (const auto& s : stages) m = std::max(m, s.time_s);
    return m;
}

Bytes PipelineResult::max_stage_memory() const { return pipeline_peak_memory(stages); }

PipelineResult evaluate_pipeline(const CostEstimator& est, const Partition& partition, int batch, int n_micro,
                                 const std::vector<std::vector<ParallelStrategy>>& strategies) {
    const int P = static_cast<int>(partition.size());
    check_partition(partition, est.model().num_layers(), P);
    if (static_cast<int>(strategies.size()) != P) throw std::invalid_argument("one strategy list per stage required");
    if (n_micro < 1 || batch % n_micro != 0) throw std::invalid_argument("micro-batch count must divide the batch");

    PipelineResult r;
    r.batch_size = batch;
    r.pp_degree = P;
    r.n_micro = n_micro;
    r.micro_batch = batch / n_micro;
    r.partition = partition;
    r.strategies = strategies;
    int first = 0;
    for (int i = 0; i < P; ++i) {
        if (static_cast<int>(strategies[i].size()) != partition[i]) {
            throw std::invalid_argument("stage strategy count does not match its layer count");
        }
        for (const auto& s : strategies[i]) {
            if (r.micro_batch % s.batch_split() != 0) {
                r.reason = "strategy " + to_string(s) + " does not divide micro-batch " + std::to_string(r.micro_batch);
                return r;
            }
        }
        const StageSlot slot{i + 1, P, n_micro};
        r.stages.push_back(est.stage_cost(first, strategies[i], r.micro_batch, slot));
        if (r.stages.back().peak_mem_bytes > est.cluster().mem_budget_bytes) {
            r.reason = "stage " + std::to_string(i + 1) + " exceeds the memory budget";
            return r;
        }
        first += partition[i];
    }
    r.feasible = true;
    r.time_s = pipeline_cost(r.stages, n_micro);
    return r;
}

PipelineResult pipeline_search(const CostEstimator& est, const Partition& partition, int batch,
                               const PipelineSearchOptions& options) {
    const int P = static_cast<int>(partition.size());
    return pipeline_search(est, partition, batch, init_microbatch_num(batch, P, options.micro), options);
}

PipelineResult pipeline_search(const CostEstimator& est, const Partition& partition, int batch, int n_micro,
                               const PipelineSearchOptions& options) {
    const int P = static_cast<int>(partition.size());
    check_partition(partition, est.model().num_layers(), P);
    if (n_micro < 1 || batch % n_micro != 0) throw std::invalid_argument("micro-batch count must divide the batch");

    PipelineResult fail;
    fail.batch_size = batch;
    fail.pp_degree = P;
    fail.n_micro = n_micro;
    fail.micro_batch = batch / n_micro;
    fail.partition = partition;

    const int mb = batch / n_micro;
    const auto usable =
        applicable_strategies(candidate_strategies(est.cluster().n_devices, P, options.prune), mb);
    if (usable.empty()) {
        fail.reason = "no strategy divides micro-batch " + std::to_string(mb);
        return fail;
    }

    StageSearchOptions stage_opts = options.stage;
    stage_opts.weights = {1.0, static_cast<double>(n_micro - 1)};

    // Per stage: either the exact (time, steady) frontier or the single DP pick.
    std::vector<std::vector<Candidate>> per_stage(P);
    int first = 0;
    for (int i = 0; i < P; ++i) {
        const StageSlot slot{i + 1, P, n_micro};
        if (assignment_count(static_cast<int>(usable.size()), partition[i], options.exact_stage_limit) <=
            options.exact_stage_limit) {
            per_stage[i] = stage_frontier(est, first, partition[i], usable, mb, slot);
        } else {
            StageSearchResult sr = dp_search(est, first, partition[i], usable, mb, slot,
                                             est.cluster().mem_budget_bytes, stage_opts);
            if (sr.dp.feasible) {
                const StageCost c = est.stage_cost(first, sr.strategies, mb, slot);
                per_stage[i].push_back({std::move(sr.strategies), c});
            }
        }
        if (per_stage[i].empty()) {
            fail.reason = "stage " + std::to_string(i + 1) + " has no assignment within the memory budget";
            return fail;
        }
        first += partition[i];
    }

    // Each threshold T on the steady-state time picks the fastest candidate
    // per stage with time_no_sync <= T; the best threshold is optimal over
    // the candidate sets.
    std::vector<Seconds> thresholds;
    for (const auto& cands : per_stage) {
        for (const auto& c : cands) thresholds.push_back(c.cost.time_no_sync_s);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    PipelineResult best = fail;
    for (Seconds T : thresholds) {
        std::vector<std::vector<ParallelStrategy>> pick(P);
        bool ok = true;
        for (int i = 0; i < P && ok; ++i) {
            const Candidate* chosen = nullptr;
            for (const auto& c : per_stage[i]) {
                if (c.cost.time_no_sync_s <= T && (!chosen || c.cost.time_s < chosen->cost.time_s)) chosen = &c;
            }
            if (!chosen) ok = false;
            else pick[i] = chosen->strategies;
        }
        if (!ok) continue;
        PipelineResult r = evaluate_pipeline(est, partition, batch, n_micro, pick);
        if (r.feasible && (!best.feasible || r.time_s < best.time_s)) best = std::move(r);
    }
    if (!best.feasible && best.reason.empty()) best.reason = "no feasible stage combination";
    return best;
}

}  // namespace parapilot
