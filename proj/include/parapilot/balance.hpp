// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline partition balancing. A partition starts memory-balanced and is
// nudged one boundary layer at a time toward time balance, keeping every
// step within the memory envelope of the time-balanced partition.

#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "parapilot/pipeline_search.hpp"

namespace parapilot {

struct BalanceReport {
    double alpha_t = 0;
    double alpha_m = 0;
    std::vector<Seconds> stage_time;
    std::vector<Bytes> stage_mem;
};

/// alpha = 1 - max / sum for stage times and stage peak memories.
BalanceReport balance_degrees(std::span<const Seconds> times, std::span<const Bytes> mems);
BalanceReport balance_degrees(std::span<const StageCost> stages);
double balance_degree(std::span<const double> values);

/// Strategy applied to every layer while choosing initial partitions: plain
/// data parallelism over the stage group, sharded if that does not fit
/// memory, tensor parallelism if the micro-batch does not split.
ParallelStrategy seed_strategy(const CostEstimator& est, int pp, int micro_batch, int n_micro);

enum class BalanceTarget { kMemory, kTime };

/// Partition balancing the target metric of `seed` on every layer: exact
/// min-max split, then single-boundary moves while the balance degree
/// strictly improves.
Partition init_partition(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                         const ParallelStrategy& seed, BalanceTarget target);
Partition init_partition_memory_balanced(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                                         const ParallelStrategy& seed);
Partition init_partition_time_balanced(const CostEstimator& est, int pp, int micro_batch, int n_micro,
                                       const ParallelStrategy& seed);

struct Adjustment {
    Partition partition;                // adjusted (== input at a fixed point)
    std::optional<Partition> untried;   // move toward the other neighbour, if any
    int slowest_stage = -1;             // 0-based
    bool moved = false;
};

/// Moves one boundary layer out of the slowest stage into its faster
/// neighbour (later stage on ties) when that neighbour is strictly faster.
Adjustment adjust_partition(const Partition& p, std::span<const Seconds> stage_times);

struct ValidationBounds {
    Seconds max_time_prev = kInfeasible;  // rule 1
    Bytes mem_budget = 0;                 // rule 2
    double mem_cap_time_balanced = kInfeasible;  // rule 3
    // Optional monotonicity: alpha_t may not drop, alpha_m stays above the
    // time-balanced partition's.
    std::optional<double> min_alpha_t;
    std::optional<double> min_alpha_m;
};

enum class Rejection { kNone, kTime, kMemoryBudget, kMemoryCap, kAlphaT, kAlphaM, kInfeasible };

const char* to_string(Rejection r);

Rejection validate_partition(std::span<const StageCost> stages, const ValidationBounds& bounds);
inline bool is_valid_partition(std::span<const StageCost> stages, const ValidationBounds& bounds) {
    return validate_partition(stages, bounds) == Rejection::kNone;
}

struct TrajectoryEntry {
    int iteration = 0;
    Partition from;
    Partition partition;
    std::optional<Partition> untried;
    bool feasible = false;
    double alpha_t = 0;
    double alpha_m = 0;
    Seconds max_time = 0;
    Bytes max_mem = 0;
    Seconds bound_time = 0;
    double bound_mem = 0;
    bool accepted = false;
    Rejection rejection = Rejection::kNone;
};

nlohmann::json to_json(const TrajectoryEntry& e);

struct BiObjectiveOptions {
    PipelineSearchOptions search;
    bool enforce_alpha_bounds = true;
    // Iteration cap as a multiple of the layer count.
    int iteration_factor = 4;
};

struct BiObjectiveResult {
    PipelineResult best;  // feasible == false when every partition failed
    Partition memory_balanced;
    Partition time_balanced;
    PipelineResult time_balanced_result;
    int iterations = 0;
    std::vector<TrajectoryEntry> trajectory;
};

/// Queue-driven refinement from the memory-balanced partition at a fixed
/// (batch, pp).
BiObjectiveResult bi_objective_optimize(const CostEstimator& est, int batch, int pp,
                                        const BiObjectiveOptions& options = {});

void write_trajectory(std::ostream& os, std::span<const TrajectoryEntry> entries);

}  // namespace parapilot
