// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Strategy search for a fixed (batch size, pipeline partition): picks the
// micro-batch count, runs the per-stage search and prices the pipeline.

#pragma once

#include <string>
#include <vector>

#include "parapilot/cost.hpp"
#include "parapilot/dp_search.hpp"
#include "parapilot/strategy.hpp"

namespace parapilot {

using Partition = std::vector<int>;

/// Throws std::invalid_argument unless `p` has `pp` positive parts summing to `n_layers`.
void check_partition(const Partition& p, int n_layers, int pp);

/// All compositions of n_layers into pp positive parts, lexicographic.
std::vector<Partition> all_partitions(int n_layers, int pp);

struct MicroBatchPolicy {
    int cap_factor = 4;       // m <= cap_factor * P
    int min_micro_batch = 1;  // B / m >= this
};

/// Largest m <= cap_factor * P dividing `batch` with batch / m >= min_micro_batch;
/// 1 when P == 1.
int init_microbatch_num(int batch, int pp, const MicroBatchPolicy& policy = {});

/// Candidate strategies for one stage group: the decision-tree set for
/// (n_devices, pp), pruned of DP+SDP mixes unless `prune` is false.
std::vector<ParallelStrategy> candidate_strategies(int n_devices, int pp, bool prune = true);

struct PipelineSearchOptions {
    StageSearchOptions stage;
    MicroBatchPolicy micro;
    bool prune = true;
    // Stages with at most this many strategy assignments are enumerated
    // exactly and combined across stages against the true pipeline cost.
    long long exact_stage_limit = 1 << 16;
};

struct PipelineResult {
    bool feasible = false;
    std::string reason;  // why infeasible
    int batch_size = 0;
    int pp_degree = 1;
    int n_micro = 1;
    int micro_batch = 0;
    Partition partition;
    std::vector<std::vector<ParallelStrategy>> strategies;  // per stage, per layer
    std::vector<StageCost> stages;
    Seconds time_s = kInfeasible;  // C(M, B)

    double throughput() const { return feasible ? batch_size / time_s : 0.0; }
    Seconds max_stage_time() const;
    Bytes max_stage_memory() const;
};

/// Prices a complete assignment; infeasible when a stage exceeds the memory
/// budget or a strategy does not divide the micro-batch.
PipelineResult evaluate_pipeline(const CostEstimator& est, const Partition& partition, int batch, int n_micro,
                                 const std::vector<std::vector<ParallelStrategy>>& strategies);

/// Searches per-stage strategies for `partition` at batch size `batch` with
/// m from the micro-batch policy.
PipelineResult pipeline_search(const CostEstimator& est, const Partition& partition, int batch,
                               const PipelineSearchOptions& options = {});

/// Same with an explicit micro-batch count.
PipelineResult pipeline_search(const CostEstimator& est, const Partition& partition, int batch, int n_micro,
                               const PipelineSearchOptions& options);

}  // namespace parapilot
