// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/cost.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

namespace parapilot {

namespace {

// Ring collective volume factors.
double all_reduce_factor(int d) { return 2.0 * (d - 1) / d; }
double gather_factor(int d) { return static_cast<double>(d - 1) / d; }

Bytes ceil_bytes(double x) { return static_cast<Bytes>(std::ceil(x - 1e-9 * std::max(1.0, std::abs(x)))); }

struct BatchShard {
    long long index = 0;
    long long count = 1;
};

// Which slice of the micro-batch device `device` holds. Data levels are read
// as a mixed-radix number, root level most significant.
BatchShard batch_shard(const ParallelStrategy& s, int device) {
    BatchShard shard;
    long long stride = s.group_size();
    for (const auto& l : s.levels) {
        stride /= l.degree;
        const long long coord = (device / stride) % l.degree;
        if (l.paradigm == Paradigm::kDP || l.paradigm == Paradigm::kSDP) {
            shard.index = shard.index * l.degree + coord;
            shard.count *= l.degree;
        }
    }
    return shard;
}

}  // namespace

int stash_multiplier(const StageSlot& slot) {
    return std::max(1, std::min(slot.pp_degree - slot.stage_index + 1, slot.n_micro));
}

Seconds overlap(Seconds a, Seconds b, double slowdown) {
    if (a > 0 && b > 0) return std::max(a, b) * slowdown;
    return a + b;
}

MemoryFootprint memory_footprint(std::span<const LayerMemory> layers) {
    MemoryFootprint out;
    Bytes states = 0;
    Bytes prefix_fwd = 0;
    Bytes peak_act = 0;
    for (const auto& l : layers) {
        states += l.states;
        prefix_fwd += l.fwd;
        peak_act = std::max(peak_act, prefix_fwd + l.bwd);
    }
    out.e_f = prefix_fwd + states;
    out.e_all = layers.empty() ? 0 : peak_act + states;
    return out;
}

Seconds pipeline_cost(std::span<const StageCost> stages, int n_micro) {
    if (stages.empty()) throw std::invalid_argument("pipeline_cost: no stages");
    if (n_micro < 1) throw std::invalid_argument("pipeline_cost: n_micro must be >= 1");
    Seconds slowest = 0;
    Seconds sum = 0;
    for (const auto& s : stages) {
        slowest = std::max(slowest, s.time_no_sync_s);
        sum += s.time_s;
    }
    return (n_micro - 1) * slowest + sum;
}

Bytes pipeline_peak_memory(std::span<const StageCost> stages) {
    Bytes peak = 0;
    for (const auto& s : stages) peak = std::max(peak, s.peak_mem_bytes);
    return peak;
}

CostEstimator::CostEstimator(const ModelSpec& model, const ClusterSpec& cluster, const CostProfile& profile)
    : model_(&model), cluster_(&cluster), profile_(&profile) {}

double CostEstimator::bandwidth(const ParallelStrategy& s, std::size_t level) const {
    const double bw = level_tier(s, level, *cluster_) == LinkTier::kIntraIsland ? cluster_->intra_island_bw
                                                                                : cluster_->inter_island_bw;
    return bw * profile_->collective_efficiency;
}

int CostEstimator::samples_per_device(const ParallelStrategy& s, int micro_batch) const {
    if (micro_batch < 0) throw std::invalid_argument("micro_batch must be non-negative");
    const int split = s.batch_split();
    if (micro_batch % split != 0) {
        throw DivisibilityError("micro-batch " + std::to_string(micro_batch) + " is not divisible by the " +
                                std::to_string(split) + "-way batch split of " + to_string(s));
    }
    return micro_batch / split;
}

CommVolume CostEstimator::comm_volume(int layer, const ParallelStrategy& s, int micro_batch) const {
    const LayerSpec& spec = model_->layers.at(layer);
    const int samples = samples_per_device(s, micro_batch);
    const double shard_params = static_cast<double>(spec.param_bytes) / s.degree_of(Paradigm::kTP);
    const double tp_input = static_cast<double>(spec.bnd_bytes_per_sample) * samples;

    CommVolume v;
    for (const auto& l : s.levels) {
        const int d = l.degree;
        switch (l.paradigm) {
            case Paradigm::kDP:
                v.grad_bytes += all_reduce_factor(d) * shard_params;
                v.grad_sync_bytes += all_reduce_factor(d) * shard_params;
                break;
            case Paradigm::kSDP:
                // Two parameter all-gathers plus one gradient reduce-scatter.
                v.grad_bytes += 3.0 * gather_factor(d) * shard_params;
                v.grad_sync_bytes += gather_factor(d) * shard_params;
                break;
            case Paradigm::kTP:
                v.act_fwd_bytes += all_reduce_factor(d) * tp_input;
                v.act_bwd_bytes += all_reduce_factor(d) * tp_input;
                if (s.ckpt) v.act_recompute_bytes += all_reduce_factor(d) * tp_input;
                break;
        }
    }
    return v;
}

CommTime CostEstimator::comm_time(int layer, const ParallelStrategy& s, int micro_batch) const {
    const LayerSpec& spec = model_->layers.at(layer);
    const int samples = samples_per_device(s, micro_batch);
    const double shard_params = static_cast<double>(spec.param_bytes) / s.degree_of(Paradigm::kTP);
    const double tp_input = static_cast<double>(spec.bnd_bytes_per_sample) * samples;

    CommTime t;
    for (std::size_t i = 0; i < s.levels.size(); ++i) {
        const auto& l = s.levels[i];
        const double bw = bandwidth(s, i);
        const int d = l.degree;
        switch (l.paradigm) {
            case Paradigm::kDP:
                t.grad_s += all_reduce_factor(d) * shard_params / bw;
                t.grad_sync_s += all_reduce_factor(d) * shard_params / bw;
                break;
            case Paradigm::kSDP:
                t.grad_s += 3.0 * gather_factor(d) * shard_params / bw;
                t.grad_sync_s += gather_factor(d) * shard_params / bw;
                break;
            case Paradigm::kTP:
                t.act_fwd_s += all_reduce_factor(d) * tp_input / bw;
                t.act_bwd_s += all_reduce_factor(d) * tp_input / bw;
                if (s.ckpt) t.act_recompute_s += all_reduce_factor(d) * tp_input / bw;
                break;
        }
    }
    return t;
}

ComputeTime CostEstimator::compute_time(int layer, const ParallelStrategy& s, int micro_batch) const {
    const LayerSpec& spec = model_->layers.at(layer);
    const int samples = samples_per_device(s, micro_batch);
    ComputeTime c;
    c.fwd_s = samples * profile_->fwd_time(spec) / s.degree_of(Paradigm::kTP);
    c.bwd_s = c.fwd_s * profile_->bwd_fwd_ratio;
    c.recompute_s = s.ckpt ? c.fwd_s : 0.0;
    return c;
}

LayerMemory CostEstimator::layer_memory(int layer, const ParallelStrategy& s, int micro_batch,
                                        const StageSlot& slot) const {
    if (slot.stage_index < 1 || slot.stage_index > slot.pp_degree) {
        throw std::invalid_argument("stage_index must lie in [1, pp_degree]");
    }
    const LayerSpec& spec = model_->layers.at(layer);
    const int samples = samples_per_device(s, micro_batch);
    const int tp = s.degree_of(Paradigm::kTP);
    const int sdp = s.degree_of(Paradigm::kSDP);
    const double frac = profile_->tp_act_replication(spec);

    const Bytes bnd = spec.bnd_bytes_per_sample * samples;
    const Bytes inter =
        ceil_bytes(static_cast<double>(spec.int_bytes_per_sample) * samples * (frac + (1.0 - frac) / tp));
    const Bytes stash = stash_multiplier(slot);

    LayerMemory m;
    m.states = ceil_bytes(static_cast<double>(spec.param_bytes) * model_->ms_bytes_per_param_byte / (tp * sdp));
    if (s.ckpt) {
        m.fwd = stash * bnd;
        m.bwd = inter;
    } else {
        m.fwd = stash * (bnd + inter);
        m.bwd = 0;
    }
    return m;
}

LayerCost CostEstimator::layer_cost(int layer, const ParallelStrategy& s, int micro_batch,
                                    const StageSlot& slot) const {
    LayerCost c;
    c.compute = compute_time(layer, s, micro_batch);
    c.comm = comm_time(layer, s, micro_batch);
    const double slowdown = cluster_->overlap_slowdown;

    const Seconds fwd = c.compute.fwd_s + c.comm.act_fwd_s;
    const Seconds recompute = s.ckpt ? c.compute.recompute_s + c.comm.act_recompute_s : 0.0;
    const Seconds bwd_tail = c.comm.act_bwd_s + recompute;
    c.time_s = fwd + overlap(c.compute.bwd_s, c.comm.grad_s, slowdown) + bwd_tail;
    c.time_no_sync_s =
        fwd + overlap(c.compute.bwd_s, std::max(0.0, c.comm.grad_s - c.comm.grad_sync_s), slowdown) + bwd_tail;

    const LayerMemory m = layer_memory(layer, s, micro_batch, slot);
    c.mem_fwd_bytes = m.fwd;
    c.mem_bwd_bytes = m.bwd;
    c.mem_states_bytes = m.states;
    return c;
}

Seconds CostEstimator::layer_time(int layer, const ParallelStrategy& s, int micro_batch) const {
    return layer_cost(layer, s, micro_batch, StageSlot{}).time_s;
}

double CostEstimator::moved_fraction(const ParallelStrategy& prev, const ParallelStrategy& cur) {
    if (prev.group_size() != cur.group_size()) {
        throw std::invalid_argument("transform between strategies of different group sizes");
    }
    const long long unit = std::max(prev.batch_split(), cur.batch_split());
    long long worst = 0;
    for (int d = 0; d < cur.group_size(); ++d) {
        const BatchShard held = batch_shard(prev, d);
        const BatchShard need = batch_shard(cur, d);
        // Intervals on [0, unit): held [h0, h1), needed [n0, n1).
        const long long h0 = held.index * (unit / held.count), h1 = h0 + unit / held.count;
        const long long n0 = need.index * (unit / need.count), n1 = n0 + unit / need.count;
        const long long common = std::max(0LL, std::min(h1, n1) - std::max(h0, n0));
        worst = std::max(worst, (n1 - n0) - common);
    }
    return static_cast<double>(worst) / unit;
}

Seconds CostEstimator::transform_cost(int layer, const ParallelStrategy& prev, const ParallelStrategy& cur,
                                      int micro_batch) const {
    const double frac = moved_fraction(prev, cur);
    if (frac == 0.0) return 0.0;
    const double bytes = frac * static_cast<double>(model_->layers.at(layer).bnd_bytes_per_sample) * micro_batch;
    return bytes / cluster_->intra_island_bw;
}

Seconds CostEstimator::p2p_time(int next_layer, int micro_batch) const {
    const double bytes = static_cast<double>(model_->layers.at(next_layer).bnd_bytes_per_sample) * micro_batch;
    return bytes / cluster_->inter_island_bw;
}

StageCost CostEstimator::stage_cost(int first_layer, std::span<const ParallelStrategy> strategies, int micro_batch,
                                    const StageSlot& slot) const {
    StageCost out;
    std::vector<LayerMemory> mem;
    mem.reserve(strategies.size());
    for (std::size_t i = 0; i < strategies.size(); ++i) {
        const int layer = first_layer + static_cast<int>(i);
        const LayerCost c = layer_cost(layer, strategies[i], micro_batch, slot);
        out.time_s += c.time_s;
        out.time_no_sync_s += c.time_no_sync_s;
        if (i > 0) out.transform_s += transform_cost(layer, strategies[i - 1], strategies[i], micro_batch);
        mem.push_back(c.memory());
    }
    const int next = first_layer + static_cast<int>(strategies.size());
    if (slot.stage_index < slot.pp_degree && next < model_->num_layers()) {
        out.p2p_s = p2p_time(next, micro_batch);
    }
    out.time_s += out.transform_s + out.p2p_s;
    out.time_no_sync_s += out.transform_s + out.p2p_s;
    const MemoryFootprint fp = memory_footprint(mem);
    out.peak_mem_bytes = fp.e_all;
    out.fwd_mem_bytes = fp.e_f;
    return out;
}

}  // namespace parapilot
