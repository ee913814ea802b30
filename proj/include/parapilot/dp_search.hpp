// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-stage strategy search under a device memory budget.
//
// The recurrence walks the layers in order and charges each layer's forward
// footprint (O_f + O_ms) against a bucketed forward-memory budget E_fwd, so
// the work is linear in the number of layers and in the bucket count. The
// previous layer's strategy is part of the state so the relayout cost R is
// charged exactly.
//
// Two sweeps are available over the same table:
//
//  * kExact (default) also tracks, per state, how far the backward peak of
//    the prefix rises above its running forward footprint (bounded by b_up,
//    the largest O_b of any layer/strategy). That makes E_all of every
//    completed assignment known inside the recurrence, so the returned plan
//    is the cheapest with E_all <= E up to bucket rounding.
//  * kForwardSweep optimises under E_fwd alone, raising E_fwd bucket by
//    bucket. Plans with E_fwd <= E - b_up fit without checking; past that
//    point each plan's E_all is checked and the sweep stops at the first
//    violation. It can miss plans whose forward footprint ties with a
//    faster but backward-heavy plan.
//
// Bucket rounding is conservative: forward footprints and O_b round up and
// the decay of the backward excess rounds down, so a reported-feasible plan
// always satisfies E_all <= E in exact bytes.

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "parapilot/cost.hpp"
#include "parapilot/strategy.hpp"

namespace parapilot {

inline constexpr Seconds kInfeasible = std::numeric_limits<Seconds>::infinity();
inline constexpr Bytes kMiB = Bytes{1} << 20;
inline constexpr Bytes kGiB = Bytes{1} << 30;

/// Per-(layer, strategy) cost and memory with relayout costs between layout
/// classes. Strategies that share a batch layout share a class, which keeps
/// the predecessor scan at O(|S| x classes) instead of O(|S|^2).
class DpTable {
public:
    DpTable() = default;
    DpTable(int n_layers, int n_strategies, std::vector<int> layout_class);

    int n_layers() const { return n_layers_; }
    int n_strategies() const { return n_strategies_; }
    int n_classes() const { return n_classes_; }
    int layout_class(int j) const { return layout_class_[j]; }

    double& cost(int l, int j) { return cost_[idx(l, j)]; }
    double cost(int l, int j) const { return cost_[idx(l, j)]; }
    LayerMemory& memory(int l, int j) { return mem_[idx(l, j)]; }
    const LayerMemory& memory(int l, int j) const { return mem_[idx(l, j)]; }

    /// Relayout cost entering layer `l` (l >= 1) from class `from` to class `to`.
    double& transform(int l, int from, int to) { return transform_[tidx(l, from, to)]; }
    double transform(int l, int from, int to) const { return transform_[tidx(l, from, to)]; }
    /// Relayout cost by strategy index.
    double transform_between(int l, int prev_j, int cur_j) const {
        return transform(l, layout_class_[prev_j], layout_class_[cur_j]);
    }

    /// Objective value and exact memory of a full assignment.
    double assignment_cost(std::span<const int> choice) const;
    MemoryFootprint assignment_memory(std::span<const int> choice) const;

private:
    std::size_t idx(int l, int j) const { return static_cast<std::size_t>(l) * n_strategies_ + j; }
    std::size_t tidx(int l, int a, int b) const {
        return (static_cast<std::size_t>(l) * n_classes_ + a) * n_classes_ + b;
    }

    int n_layers_ = 0;
    int n_strategies_ = 0;
    int n_classes_ = 0;
    std::vector<int> layout_class_;
    std::vector<double> cost_;
    std::vector<LayerMemory> mem_;
    std::vector<double> transform_;
};

enum class DpMode { kExact, kForwardSweep };

struct DpOptions {
    Bytes granularity = 64 * kMiB;
    DpMode mode = DpMode::kExact;
    // Keep only the cheapest strategy per memory state (drops the exact
    // previous-strategy dimension).
    bool best_predecessor_only = false;
    bool record_frontier = false;
};

struct DpResult {
    bool feasible = false;
    Seconds time_s = kInfeasible;  // optimised objective
    std::vector<int> choice;       // strategy index per layer
    Bytes e_fwd_budget = 0;        // E_fwd bucket the plan was found at, in bytes
    Bytes e_fwd_used = 0;          // exact E_f of the plan
    Bytes e_all = 0;               // exact E_all of the plan
    // (E_fwd, best cost with forward footprint <= E_fwd and E_all <= E); non-increasing.
    std::vector<std::pair<Bytes, double>> frontier;
};

/// b_up: max over layers and strategies of O_b.
Bytes backward_peak_bound(const DpTable& table);

DpResult dp_search(const DpTable& table, Bytes budget, const DpOptions& options = {});

/// Weights turning a layer's per-micro-batch times into the DP objective:
/// sync * time_s + steady * time_no_sync_s, and (sync + steady) * R.
struct ObjectiveWeights {
    double sync = 1.0;
    double steady = 0.0;
};

struct StageSearchOptions {
    DpOptions dp;
    ObjectiveWeights weights;
    int fuse_max = 1;  // > 1 fuses runs of identical layers into super-layers
};

struct StageSearchResult {
    DpResult dp;
    std::vector<ParallelStrategy> strategies;  // per layer; empty when infeasible
};

/// Candidates whose batch split divides the micro-batch.
std::vector<ParallelStrategy> applicable_strategies(std::span<const ParallelStrategy> candidates, int micro_batch);

/// Builds the table for layers [first_layer, first_layer + n_layers). With
/// fuse_max > 1, runs of identical layers become one row; `row_sizes`
/// receives the layer count behind each row.
DpTable build_stage_table(const CostEstimator& est, int first_layer, int n_layers,
                          std::span<const ParallelStrategy> candidates, int micro_batch, const StageSlot& slot,
                          const ObjectiveWeights& weights, int fuse_max = 1, std::vector<int>* row_sizes = nullptr);

StageSearchResult dp_search(const CostEstimator& est, int first_layer, int n_layers,
                            std::span<const ParallelStrategy> candidates, int micro_batch, const StageSlot& slot,
                            Bytes budget, const StageSearchOptions& options = {});

}  // namespace parapilot
