// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/planner.hpp"

#include <algorithm>
#include <sstream>

namespace parapilot {

namespace {

// Higher throughput wins; callers iterate batch and pp ascending so ties keep
// the smaller configuration.
bool better(const Plan& a, const Plan& b) {
    return a.feasible && (!b.feasible || a.predicted_throughput > b.predicted_throughput);
}

long long binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    long long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

Plan infeasible_plan(int batch) {
    Plan p;
    p.batch_size = batch;
    return p;
}

}  // namespace

Plan make_plan(const PipelineResult& r) {
    Plan p;
    p.feasible = r.feasible;
    p.pp_degree = r.pp_degree;
    p.partition = r.partition;
    p.n_micro = r.n_micro;
    p.batch_size = r.batch_size;
    if (!r.feasible) return p;
    p.strategies = r.strategies;
    p.predicted_time_s = r.time_s;
    p.predicted_throughput = r.throughput();
    p.balance = balance_degrees(r.stages);
    for (const auto& s : r.stages) p.peak_mem_per_stage.push_back(s.peak_mem_bytes);
    return p;
}

Plan evaluate_plan(const CostEstimator& est, const Plan& plan) {
    return make_plan(evaluate_pipeline(est, plan.partition, plan.batch_size, plan.n_micro, plan.strategies));
}

nlohmann::json plan_to_json(const Plan& plan, const ClusterSpec& cluster) {
    nlohmann::json j;
    j["pp_degree"] = plan.pp_degree;
    j["partition"] = plan.partition;
    j["n_micro"] = plan.n_micro;
    j["batch_size"] = plan.batch_size;
    nlohmann::json stages = nlohmann::json::array();
    int id = 0;
    for (const auto& stage : plan.strategies) {
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& s : stage) layers.push_back({{"id", id++}, {"strategy", to_string(s, cluster)}});
        stages.push_back({{"layers", std::move(layers)}});
    }
    j["stages"] = std::move(stages);
    j["predicted_time_s"] = plan.predicted_time_s;
    j["predicted_throughput"] = plan.predicted_throughput;
    j["alpha_t"] = plan.balance.alpha_t;
    j["alpha_m"] = plan.balance.alpha_m;
    j["peak_mem_per_stage"] = plan.peak_mem_per_stage;
    return j;
}

Plan plan_from_json(const nlohmann::json& doc) {
    Plan p;
    try {
        p.pp_degree = doc.at("pp_degree").get<int>();
        p.partition = doc.at("partition").get<Partition>();
        p.n_micro = doc.at("n_micro").get<int>();
        p.batch_size = doc.at("batch_size").get<int>();
        for (const auto& stage : doc.at("stages")) {
            std::vector<ParallelStrategy> layers;
            for (const auto& l : stage.at("layers")) layers.push_back(parse_strategy(l.at("strategy").get<std::string>()));
            p.strategies.push_back(std::move(layers));
        }
        p.predicted_time_s = doc.at("predicted_time_s").get<double>();
        p.predicted_throughput = doc.at("predicted_throughput").get<double>();
        p.balance.alpha_t = doc.at("alpha_t").get<double>();
        p.balance.alpha_m = doc.at("alpha_m").get<double>();
        p.peak_mem_per_stage = doc.at("peak_mem_per_stage").get<std::vector<Bytes>>();
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("malformed plan: ") + e.what());
    }
    p.feasible = true;
    return p;
}

Plan plan_at_batch_base(const CostEstimator& est, int batch, const PlannerOptions& options, SweepLog* log) {
    const int L = est.model().num_layers();
    Plan best = infeasible_plan(batch);
    for (int P : pp_degrees(est.cluster().n_devices)) {
        if (P > L) break;
        const int m = init_microbatch_num(batch, P, options.balance.search.micro);
        const int mb = batch / m;
        const ParallelStrategy seed = seed_strategy(est, P, mb, m);
        const Partition p = init_partition_memory_balanced(est, P, mb, m, seed);
        PipelineResult r = pipeline_search(est, p, batch, m, options.balance.search);
        Plan plan = make_plan(r);
        if (better(plan, best)) best = std::move(plan);
        if (log) log->entries.push_back({batch, P, std::move(r)});
    }
    if (log) log->best_per_batch.push_back(best);
    return best;
}

Plan plan_at_batch(const CostEstimator& est, int batch, const PlannerOptions& options,
                   std::vector<TrajectoryEntry>* trajectory) {
    const int L = est.model().num_layers();
    Plan best = infeasible_plan(batch);
    for (int P : pp_degrees(est.cluster().n_devices)) {
        if (P > L) break;
        if (binomial(L - 1, P - 1) <= options.exhaustive_partition_limit) {
            const int m = init_microbatch_num(batch, P, options.balance.search.micro);
            for (const auto& p : all_partitions(L, P)) {
                Plan plan = make_plan(pipeline_search(est, p, batch, m, options.balance.search));
                if (better(plan, best)) best = std::move(plan);
            }
            continue;
        }
        BiObjectiveResult r = bi_objective_optimize(est, batch, P, options.balance);
        if (trajectory) trajectory->insert(trajectory->end(), r.trajectory.begin(), r.trajectory.end());
        Plan plan = make_plan(r.best);
        if (better(plan, best)) best = std::move(plan);
    }
    return best;
}

std::string infeasibility_diagnostic(const CostEstimator& est, int batch, const PlannerOptions& options) {
    std::ostringstream os;
    os << "no feasible plan at batch size " << batch << " (memory budget " << est.cluster().mem_budget_bytes
       << " bytes)";
    const int L = est.model().num_layers();
    const int N = est.cluster().n_devices;
    double states_lb = std::numeric_limits<double>::infinity();
    for (int P : pp_degrees(N)) {
        if (P > L) break;
        const auto cands = candidate_strategies(N, P, options.balance.search.prune);
        double total = 0;
        for (int l = 0; l < L; ++l) {
            Bytes lo = std::numeric_limits<Bytes>::max();
            for (const auto& s : cands) lo = std::min(lo, est.layer_memory(l, s, s.batch_split(), {}).states);
            total += static_cast<double>(lo);
        }
        states_lb = std::min(states_lb, total / P);
        const int m = init_microbatch_num(batch, P, options.balance.search.micro);
        const int mb = batch / m;
        const ParallelStrategy seed = seed_strategy(est, P, mb, m);
        const Partition p = init_partition_memory_balanced(est, P, mb, m, seed);
        const PipelineResult r = pipeline_search(est, p, batch, m, options.balance.search);
        os << "; pp" << P << ": " << r.reason;
    }
    if (states_lb > static_cast<double>(est.cluster().mem_budget_bytes)) {
        os << "; model states alone need at least " << static_cast<Bytes>(states_lb) << " bytes per device";
    }
    return os.str();
}

Plan plan_base(const CostEstimator& est, const PlannerOptions& options, SweepLog* log) {
    if (options.batch_step < 1) throw std::invalid_argument("batch step must be positive");
    Plan best = infeasible_plan(0);
    for (int B = options.batch_step; B <= options.max_batch; B += options.batch_step) {
        Plan plan = plan_at_batch_base(est, B, options, log);
        if (!plan.feasible) {
            if (B == options.batch_step) throw InfeasibleError(infeasibility_diagnostic(est, B, options));
            break;
        }
        if (better(plan, best)) best = std::move(plan);
    }
    if (!best.feasible) throw InfeasibleError("batch step exceeds the maximum batch size");
    return best;
}

Plan plan_full(const CostEstimator& est, const PlannerOptions& options, SweepLog* log,
               std::vector<TrajectoryEntry>* trajectory) {
    Plan best = plan_base(est, options, log);
    if (!options.bi_objective) return best;
    const int B0 = best.batch_size;
    const int span = options.batch_radius / options.batch_step * options.batch_step;
    const int lo = std::max(options.batch_step, B0 - span);
    const int hi = std::min(options.max_batch, B0 + span);
    for (int B = lo; B <= hi; B += options.batch_step) {
        Plan plan = plan_at_batch(est, B, options, trajectory);
        if (!plan.feasible) {
            if (B < B0) continue;
            break;
        }
        if (better(plan, best)) best = std::move(plan);
    }
    return best;
}

Plan brute_force_oracle(const CostEstimator& est, int batch, const OracleOptions& options) {
    const int L = est.model().num_layers();
    const int N = est.cluster().n_devices;
    Plan best = infeasible_plan(batch);
    long long evaluations = 0;
    for (int P : pp_degrees(N)) {
        if (P > L) break;
        std::vector<int> micro_counts;
        if (options.all_micro_counts) {
            for (int m = 1; m <= batch; ++m) {
                if (batch % m == 0) micro_counts.push_back(m);
            }
        } else {
            micro_counts.push_back(init_microbatch_num(batch, P, options.micro));
        }
        const auto cands = candidate_strategies(N, P, options.prune);
        const int S = static_cast<int>(cands.size());
        for (int m : micro_counts) {
            for (const auto& part : all_partitions(L, P)) {
                std::vector<int> digit(L, 0);
                while (true) {
                    if (++evaluations > options.max_evaluations) {
                        throw std::length_error("oracle: instance too large for exhaustive search");
                    }
                    std::vector<std::vector<ParallelStrategy>> assign(P);
                    int l = 0;
                    for (int i = 0; i < P; ++i) {
                        for (int k = 0; k < part[i]; ++k) assign[i].push_back(cands[digit[l++]]);
                    }
                    const PipelineResult r = evaluate_pipeline(est, part, batch, m, assign);
                    if (r.feasible) {
                        Plan plan = make_plan(r);
                        if (!best.feasible || plan.predicted_time_s < best.predicted_time_s) best = std::move(plan);
                    }
                    int k = L - 1;
                    while (k >= 0 && ++digit[k] == S) digit[k--] = 0;
                    if (k < 0) break;
                }
            }
        }
    }
    return best;
}

}  // namespace parapilot
