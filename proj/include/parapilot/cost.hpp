// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic cost model. Per-layer time is simulated as a forward pass
// (compute + serialized tensor-parallel all-reduce) followed by a backward
// pass in which gradient collectives overlap with backward compute at a
// contention penalty. Memory follows the boundary/intermediate activation
// split: checkpointed layers stash only their boundary input and
// rematerialize intermediates during backward.

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "parapilot/model.hpp"
#include "parapilot/strategy.hpp"

namespace parapilot {

/// Micro-batch size not divisible by the strategy's batch split.
class DivisibilityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Where a stage sits in the pipeline; drives 1F1B activation stashing.
struct StageSlot {
    int stage_index = 1;  // 1-based
    int pp_degree = 1;
    int n_micro = 1;
};

/// Number of micro-batches whose forward activations stage `stage_index`
/// holds at the 1F1B steady state.
int stash_multiplier(const StageSlot& slot);

/// Bytes moved per device by the collectives of one layer for one micro-batch.
struct CommVolume {
    double grad_bytes = 0;       // DP all-reduce + SDP all-gathers and reduce-scatter
    double grad_sync_bytes = 0;  // part of grad_bytes needed only on the last micro-batch
    double act_fwd_bytes = 0;    // TP forward all-reduce
    double act_bwd_bytes = 0;    // TP backward all-reduce
    double act_recompute_bytes = 0;  // TP all-reduce replayed by checkpoint recomputation
};

struct CommTime {
    Seconds grad_s = 0;
    Seconds grad_sync_s = 0;
    Seconds act_fwd_s = 0;
    Seconds act_bwd_s = 0;
    Seconds act_recompute_s = 0;

    Seconds act_s() const { return act_fwd_s + act_bwd_s + act_recompute_s; }
};

struct ComputeTime {
    Seconds fwd_s = 0;
    Seconds bwd_s = 0;
    Seconds recompute_s = 0;

    Seconds total() const { return fwd_s + bwd_s + recompute_s; }
};

struct LayerMemory {
    Bytes fwd = 0;     // O_f
    Bytes bwd = 0;     // O_b
    Bytes states = 0;  // O_ms

    bool operator==(const LayerMemory&) const = default;
};

struct LayerCost {
    Seconds time_s = 0;          // c(l, s) with gradient synchronization
    Seconds time_no_sync_s = 0;  // same micro-batch without gradient synchronization
    Bytes mem_fwd_bytes = 0;
    Bytes mem_bwd_bytes = 0;
    Bytes mem_states_bytes = 0;
    ComputeTime compute;
    CommTime comm;

    LayerMemory memory() const { return {mem_fwd_bytes, mem_bwd_bytes, mem_states_bytes}; }
};

struct StageCost {
    Seconds time_s = 0;
    Seconds time_no_sync_s = 0;
    Bytes peak_mem_bytes = 0;  // E_all
    Bytes fwd_mem_bytes = 0;   // E_f
    Seconds transform_s = 0;
    Seconds p2p_s = 0;
};

struct MemoryFootprint {
    Bytes e_all = 0;
    Bytes e_f = 0;

    bool operator==(const MemoryFootprint&) const = default;
};

/// Compute/communication overlap: max(a, b) * slowdown when both are busy.
Seconds overlap(Seconds a, Seconds b, double slowdown);

/// E_f = sum(O_f + O_ms); E_all = max_i(sum_{k<=i} O_f + O_b(i)) + sum O_ms.
MemoryFootprint memory_footprint(std::span<const LayerMemory> layers);

/// C(M, B) = (m - 1) * max time_no_sync + sum time.
Seconds pipeline_cost(std::span<const StageCost> stages, int n_micro);

/// Peak device memory of a pipeline: max over stages.
Bytes pipeline_peak_memory(std::span<const StageCost> stages);

class CostEstimator {
public:
    CostEstimator(const ModelSpec& model, const ClusterSpec& cluster, const CostProfile& profile);

    const ModelSpec& model() const { return *model_; }
    const ClusterSpec& cluster() const { return *cluster_; }
    const CostProfile& profile() const { return *profile_; }

    CommVolume comm_volume(int layer, const ParallelStrategy& s, int micro_batch) const;
    CommTime comm_time(int layer, const ParallelStrategy& s, int micro_batch) const;
    ComputeTime compute_time(int layer, const ParallelStrategy& s, int micro_batch) const;
    LayerCost layer_cost(int layer, const ParallelStrategy& s, int micro_batch, const StageSlot& slot) const;
    LayerMemory layer_memory(int layer, const ParallelStrategy& s, int micro_batch, const StageSlot& slot) const;
    Seconds layer_time(int layer, const ParallelStrategy& s, int micro_batch) const;

    /// Fraction of a layer input each device has to fetch when the batch
    /// layout changes from `prev` to `cur` (max over devices).
    static double moved_fraction(const ParallelStrategy& prev, const ParallelStrategy& cur);
    /// R(l, prev, cur): activation relayout before layer `layer`.
    Seconds transform_cost(int layer, const ParallelStrategy& prev, const ParallelStrategy& cur,
                           int micro_batch) const;

    /// Boundary activation send to the next stage, whose first layer is `next_layer`.
    Seconds p2p_time(int next_layer, int micro_batch) const;

    /// Cost of a stage made of layers [first_layer, first_layer + strategies.size()).
    StageCost stage_cost(int first_layer, std::span<const ParallelStrategy> strategies, int micro_batch,
                         const StageSlot& slot) const;

private:
    double bandwidth(const ParallelStrategy& s, std::size_t level) const;
    int samples_per_device(const ParallelStrategy& s, int micro_batch) const;

    const ModelSpec* model_;
    const ClusterSpec* cluster_;
    const CostProfile* profile_;
};

}  // namespace parapilot
