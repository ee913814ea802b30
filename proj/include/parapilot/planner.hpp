// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end planning: sweep the global batch size upward, try every
// pipeline degree at each step, and keep the highest-throughput plan.
// Optionally refine around the best batch size with the balance optimizer.

#pragma once

#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "parapilot/balance.hpp"

namespace parapilot {

/// No plan fits at the smallest explored batch size.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PlannerOptions {
    int batch_step = 8;
    int max_batch = 4096;
    bool bi_objective = false;
    int batch_radius = 16;
    // Every partition is tried when a pp degree has at most this many.
    long long exhaustive_partition_limit = 8;
    BiObjectiveOptions balance;
};

struct Plan {
    bool feasible = false;
    int pp_degree = 1;
    Partition partition;
    int n_micro = 1;
    int batch_size = 0;
    std::vector<std::vector<ParallelStrategy>> strategies;  // per stage, per layer
    Seconds predicted_time_s = kInfeasible;
    double predicted_throughput = 0;
    BalanceReport balance;
    std::vector<Bytes> peak_mem_per_stage;
};

Plan make_plan(const PipelineResult& r);

/// Re-prices a plan's assignment with the cost model.
Plan evaluate_plan(const CostEstimator& est, const Plan& plan);

nlohmann::json plan_to_json(const Plan& plan, const ClusterSpec& cluster);
/// Reads a plan's assignment; predicted figures are taken as written.
Plan plan_from_json(const nlohmann::json& doc);

struct SweepEntry {
    int batch_size = 0;
    int pp_degree = 1;
    PipelineResult result;
};

struct SweepLog {
    std::vector<SweepEntry> entries;
    std::vector<Plan> best_per_batch;  // best plan at each explored batch size
};

/// Best plan over pp degrees at one batch size using memory-balanced partitions.
Plan plan_at_batch_base(const CostEstimator& est, int batch, const PlannerOptions& options,
                        SweepLog* log = nullptr);

/// Best plan at one batch size with partition refinement (queue-driven
/// balancing, or every partition when there are few).
Plan plan_at_batch(const CostEstimator& est, int batch, const PlannerOptions& options,
                   std::vector<TrajectoryEntry>* trajectory = nullptr);

/// Batch-size sweep; throws InfeasibleError if the first batch size fails.
Plan plan_base(const CostEstimator& est, const PlannerOptions& options = {}, SweepLog* log = nullptr);

/// Base sweep, then (with bi_objective) refinement over batch sizes around the
/// base optimum.
Plan plan_full(const CostEstimator& est, const PlannerOptions& options = {}, SweepLog* log = nullptr,
               std::vector<TrajectoryEntry>* trajectory = nullptr);

struct OracleOptions {
    MicroBatchPolicy micro;
    bool prune = true;
    // Try every divisor of the batch as the micro-batch count instead of the policy value.
    bool all_micro_counts = false;
    long long max_evaluations = 20'000'000;
};

/// Exhaustive search over pp degree, partition, micro-batch count and
/// per-layer strategy at a fixed batch size. For tiny instances only.
Plan brute_force_oracle(const CostEstimator& est, int batch, const OracleOptions& options = {});

/// Human-readable reason nothing fits at `batch`.
std::string infeasibility_diagnostic(const CostEstimator& est, int batch, const PlannerOptions& options);

}  // namespace parapilot
