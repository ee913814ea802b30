// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"

using namespace parapilot;
using namespace parapilot::testing;

namespace {

constexpr Bytes kMB = 1'000'000;

std::string dump(const Plan& p, const ClusterSpec& c) { return plan_to_json(p, c).dump(2); }

void check_plan_invariants(const CostEstimator& est, const Plan& p) {
    REQUIRE(p.feasible);
    const int L = static_cast<int>(est.model().layers.size());
    check_partition(p.partition, L, p.pp_degree);
    CHECK(p.batch_size % p.n_micro == 0);
    const int mb = p.batch_size / p.n_micro;
    for (std::size_t s = 0; s < p.strategies.size(); ++s) {
        CHECK(static_cast<int>(p.strategies[s].size()) == p.partition[s]);
        for (const auto& x : p.strategies[s]) {
            CHECK(x.pp_degree == p.pp_degree);
            CHECK(mb % x.batch_split() == 0);
        }
    }
    for (Bytes m : p.peak_mem_per_stage) CHECK(m <= est.cluster().mem_budget_bytes);
    CHECK(p.predicted_throughput * p.predicted_time_s == doctest::Approx(p.batch_size));
}

}  // namespace

TEST_CASE("micro-batch count policy") {
    CHECK(init_microbatch_num(32, 4) == 16);
    CHECK(init_microbatch_num(64, 4) == 16);
    CHECK(init_microbatch_num(32, 1) == 1);
    CHECK(init_microbatch_num(7, 2) == 7);
    CHECK(init_microbatch_num(6, 4) == 6);
    MicroBatchPolicy p;
    p.min_micro_batch = 4;
    CHECK(init_microbatch_num(32, 4, p) == 8);
}

TEST_CASE("partitions are enumerated completely") {
    CHECK(all_partitions(4, 1) == std::vector<Partition>{{4}});
    CHECK(all_partitions(5, 2).size() == 4);
    CHECK(all_partitions(8, 4).size() == 35);
    CHECK(all_partitions(3, 4).empty());
    CHECK_THROWS_AS(check_partition({2, 0, 2}, 4, 3), std::invalid_argument);
    CHECK_THROWS_AS(check_partition({2, 2}, 5, 2), std::invalid_argument);
}

TEST_CASE("planner agrees with the exhaustive oracle on tiny instances") {
    Rng rng(2026);
    int compared = 0, feasible = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const int L = uniform_int(rng, 1, 4);
        const int N = 1 << uniform_int(rng, 0, 2);
        const ModelSpec m = random_model(rng, L);
        const ClusterSpec c = make_cluster(N, Bytes{1} << uniform_int(rng, 23, 28), std::max(1, N / 2));
        const CostProfile prof;
        const CostEstimator est(m, c, prof);
        const int B = 4 * uniform_int(rng, 1, 4);
        const Plan oracle = brute_force_oracle(est, B);
        const Plan planned = plan_at_batch(est, B, PlannerOptions{});
        CAPTURE(trial);
        CHECK(planned.feasible == oracle.feasible);
        if (oracle.feasible && planned.feasible) {
            CHECK(planned.predicted_time_s == doctest::Approx(oracle.predicted_time_s).epsilon(1e-12));
            ++feasible;
        }
        // Trying every micro-batch count can only help the oracle.
        OracleOptions all;
        all.all_micro_counts = true;
        const Plan wide = brute_force_oracle(est, B, all);
        if (planned.feasible) CHECK(wide.predicted_throughput >= planned.predicted_throughput * (1 - 1e-12));
        ++compared;
    }
    CHECK(compared == 60);
    CHECK(feasible > 10);
}

TEST_CASE("planner output satisfies plan invariants") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int L = uniform_int(rng, 2, 8);
        const ModelSpec m = random_model(rng, L);
        const ClusterSpec c = make_cluster(4, Bytes{1} << 28, 2);
        const CostProfile prof;
        const CostEstimator est(m, c, prof);
        PlannerOptions o;
        o.max_batch = 64;
        try {
            check_plan_invariants(est, plan_full(est, o));
        } catch (const InfeasibleError&) {
        }
    }
}

TEST_CASE("memory pressure switches the winning paradigm from DP to SDP") {
    const ModelSpec m = uniform_model(1, 100 * kMB, 10 * kMB, 0, 1e-3);
    const ClusterSpec c = make_cluster(2, 480 * kMB, 2, 10e9, 10e9);
    const CostProfile prof;
    const CostEstimator est(m, c, prof);
    PlannerOptions o;
    o.max_batch = 64;
    SweepLog log;
    const Plan best = plan_base(est, o, &log);
    REQUIRE(best.feasible);
    for (const Plan& p : log.best_per_batch) {
        CAPTURE(p.batch_size);
        if (!p.feasible) break;  // sweep ends where nothing fits
        const ParallelStrategy& s = p.strategies.at(0).at(0);
        if (p.batch_size <= 16) {
            CHECK(s.has(Paradigm::kDP));
        } else {
            CHECK_FALSE(s.has(Paradigm::kDP));
        }
    }
    REQUIRE(log.best_per_batch.size() >= 3);
    CHECK(log.best_per_batch.at(2).strategies.at(0).at(0).has(Paradigm::kSDP));
}

TEST_CASE("impossible budgets are reported") {
    const ModelSpec m = uniform_model(4, 100 * kMB, kMB, kMB, 1e-3);
    const CostProfile prof;
    const ClusterSpec tiny = make_cluster(2, 10 * kMB);
    const CostEstimator est(m, tiny, prof);
    CHECK_THROWS_AS(plan_base(est), InfeasibleError);
    CHECK_THROWS_AS(plan_full(est), InfeasibleError);
    const std::string why = infeasibility_diagnostic(est, 8, PlannerOptions{});
    CHECK(why.find("model states") != std::string::npos);

    const ClusterSpec zero = make_cluster(2, 0);
    const CostEstimator z(m, zero, prof);
    CHECK_FALSE(plan_at_batch_base(z, 8, PlannerOptions{}).feasible);
}

TEST_CASE("plan JSON round-trips and re-prices identically") {
    const ModelSpec m = load_model_spec(read_json_file(PARAPILOT_DATA_DIR "/t5_like_24.json"));
    const ClusterSpec c = make_cluster(4, Bytes{4} << 30, 2, 100e9, 12.5e9);
    const CostProfile prof;
    const CostEstimator est(m, c, prof);
    PlannerOptions o;
    o.max_batch = 64;
    const Plan p = plan_full(est, o);
    check_plan_invariants(est, p);
    const Plan back = plan_from_json(plan_to_json(p, c));
    CHECK(back.partition == p.partition);
    CHECK(back.strategies == p.strategies);
    CHECK(back.n_micro == p.n_micro);
    const Plan priced = evaluate_plan(est, back);
    REQUIRE(priced.feasible);
    CHECK(priced.predicted_time_s == p.predicted_time_s);
    CHECK(priced.peak_mem_per_stage == p.peak_mem_per_stage);
    CHECK(dump(priced, c) == dump(p, c));
}

TEST_CASE("planning is deterministic") {
    const ModelSpec m = load_model_spec(read_json_file(PARAPILOT_DATA_DIR "/t5_like_24.json"));
    const ClusterSpec c = make_cluster(4, Bytes{4} << 30, 2, 100e9, 12.5e9);
    const CostProfile prof;
    const CostEstimator est(m, c, prof);
    PlannerOptions o;
    o.max_batch = 64;
    o.bi_objective = true;
    CHECK(dump(plan_full(est, o), c) == dump(plan_full(est, o), c));
}

TEST_CASE("refinement never loses to the base sweep") {
    Rng rng(9);
    for (int trial = 0; trial < 6; ++trial) {
        const ModelSpec m = random_model(rng, uniform_int(rng, 4, 10));
        const ClusterSpec c = make_cluster(4, Bytes{1} << 27, 2);
        const CostProfile prof;
        const CostEstimator est(m, c, prof);
        PlannerOptions o;
        o.max_batch = 96;
        Plan base;
        try {
            base = plan_base(est, o);
        } catch (const InfeasibleError&) {
            continue;
        }
        o.bi_objective = true;
        const Plan refined = plan_full(est, o);
        CHECK(refined.predicted_throughput >= base.predicted_throughput);
    }
}

TEST_CASE("evaluate_plan rejects mismatched shapes") {
    const ModelSpec m = uniform_model(4, kMB, kMB, kMB, 1e-3);
    const ClusterSpec c = make_cluster(2, Bytes{1} << 30);
    const CostProfile prof;
    const CostEstimator est(m, c, prof);
    Plan p;
    p.pp_degree = 2;
    p.partition = {2, 2};
    p.batch_size = 8;
    p.n_micro = 8;
    p.strategies = {{strat("pp2"), strat("pp2")}, {strat("pp2")}};
    CHECK_THROWS_AS(evaluate_plan(est, p), std::invalid_argument);
}
