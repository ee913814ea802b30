// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "test_support.hpp"

using namespace parapilot;
using namespace parapilot::testing;

namespace {

constexpr Bytes kMB = 1'000'000;

std::vector<StageCost> stages_from(const std::vector<double>& t, const std::vector<Bytes>& m) {
    std::vector<StageCost> out;
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back({t[i], t[i], m[i], m[i], 0, 0});
    return out;
}

// Seed-strategy metric of every partition, evaluated directly.
double seed_alpha(const CostEstimator& est, const Partition& p, int mb, int m, const ParallelStrategy& seed,
                  BalanceTarget target) {
    std::vector<double> v;
    int first = 0;
    const int P = static_cast<int>(p.size());
    for (int i = 0; i < P; ++i) {
        const std::vector<ParallelStrategy> run(p[i], seed);
        const StageCost c = est.stage_cost(first, run, mb, {i + 1, P, m});
        v.push_back(target == BalanceTarget::kTime ? c.time_s : static_cast<double>(c.peak_mem_bytes));
        first += p[i];
    }
    return balance_degree(v);
}

}  // namespace

TEST_CASE("balance degree examples") {
    const std::vector<double> four{1, 1, 1, 1};
    CHECK(balance_degree(four) == 0.75);
    CHECK(balance_degree(std::vector<double>{3, 1}) == 0.25);
    const BalanceReport one = balance_degrees(stages_from({2.0}, {100}));
    CHECK(one.alpha_t == 0.0);
    CHECK(one.alpha_m == 0.0);
    CHECK_THROWS_AS(balance_degree(std::vector<double>{0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(balance_degree(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("balance degrees stay within [0, 1 - 1/P]") {
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        const int P = uniform_int(rng, 1, 16);
        std::vector<double> v(P);
        for (auto& x : v) x = uniform_real(rng, 0.0, 10.0);
        v[0] += 1e-3;
        const double a = balance_degree(v);
        CHECK(a >= 0.0);
        CHECK(a <= 1.0 - 1.0 / P + 1e-15);
    }
}

TEST_CASE("memory-balanced partition of uniform layers without stashing is an equal split") {
    const ModelSpec m = uniform_model(8, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(4, Bytes{1} << 40);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const ParallelStrategy seed{4, {}, false};
    CHECK(init_partition_memory_balanced(est, 4, 1, 1, seed) == Partition{2, 2, 2, 2});
    CHECK(init_partition_time_balanced(est, 2, 1, 1, ParallelStrategy{2, {}, false}).size() == 2);
}

TEST_CASE("1F1B stashing pushes layers to deeper stages") {
    const ModelSpec m = uniform_model(16, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(4, Bytes{1} << 40);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const ParallelStrategy seed{4, {}, false};
    const Partition pm = init_partition_memory_balanced(est, 4, 1, 8, seed);
    for (std::size_t i = 1; i < pm.size(); ++i) CHECK(pm[i] >= pm[i - 1]);
    CHECK(pm.back() > pm.front());
    // No partition balances memory better.
    const double best = seed_alpha(est, pm, 1, 8, seed, BalanceTarget::kMemory);
    for (const auto& q : all_partitions(16, 4)) CHECK(seed_alpha(est, q, 1, 8, seed, BalanceTarget::kMemory) <= best + 1e-12);
}

TEST_CASE("T5-like model concentrates light decoders in deeper stages") {
    const ModelSpec m = load_model_spec(read_json_file(PARAPILOT_DATA_DIR "/t5_like_24.json"));
    const ClusterSpec c = load_cluster_spec(read_json_file(PARAPILOT_DATA_DIR "/cluster_8gpu.json"));
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const ParallelStrategy seed = seed_strategy(est, 2, 8, 8);
    const Partition pm = init_partition_memory_balanced(est, 2, 8, 8, seed);
    CHECK(pm[0] < 12);
    CHECK(pm[1] > 12);
}

TEST_CASE("time-balanced split of heavy and light layers matches the best cut") {
    ModelSpec m;
    m.name = "mixed";
    for (int i = 0; i < 6; ++i) m.layers.push_back(make_layer(i, 10 * kMB, kMB, 4 * kMB, i < 3 ? 4e-3 : 1e-3));
    const ClusterSpec c = make_cluster(2, Bytes{1} << 40);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const ParallelStrategy seed{2, {}, false};
    const Partition pt = init_partition_time_balanced(est, 2, 1, 1, seed);
    double best = -1;
    Partition arg;
    for (int cut = 1; cut <= 5; ++cut) {
        const Partition q{cut, 6 - cut};
        const double a = seed_alpha(est, q, 1, 1, seed, BalanceTarget::kTime);
        if (a > best) {
            best = a;
            arg = q;
        }
    }
    CHECK(pt == arg);
    CHECK(pt == Partition{2, 4});
}

TEST_CASE("one layer per stage when P equals L") {
    const ModelSpec m = uniform_model(4, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(4, Bytes{1} << 40);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    CHECK(init_partition_time_balanced(est, 4, 1, 4, {4, {}, false}) == Partition{1, 1, 1, 1});
    CHECK_THROWS_AS(init_partition_time_balanced(est, 8, 1, 4, {8, {}, false}), std::invalid_argument);
}

TEST_CASE("initial partitions are locally optimal") {
    Rng rng(41);
    for (int trial = 0; trial < 40; ++trial) {
        const int L = uniform_int(rng, 2, 12);
        const ModelSpec m = random_model(rng, L);
        const ClusterSpec c = make_cluster(8, Bytes{1} << 40);
        const CostProfile p;
        const CostEstimator est(m, c, p);
        const int P = 1 << uniform_int(rng, 0, 3);
        if (P > L) continue;
        const int mb = 8, n_micro = uniform_int(rng, 1, 8);
        const ParallelStrategy seed = seed_strategy(est, P, mb, n_micro);
        for (BalanceTarget target : {BalanceTarget::kMemory, BalanceTarget::kTime}) {
            const Partition q = init_partition(est, P, mb, n_micro, seed, target);
            check_partition(q, L, P);
            const double a = seed_alpha(est, q, mb, n_micro, seed, target);
            for (int b = 0; b + 1 < P; ++b) {
                for (int dir : {-1, 1}) {
                    Partition r = q;
                    r[b] += dir;
                    r[b + 1] -= dir;
                    if (r[b] < 1 || r[b + 1] < 1) continue;
                    CHECK(seed_alpha(est, r, mb, n_micro, seed, target) <= a);
                }
            }
        }
    }
}

TEST_CASE("seed strategy fallbacks") {
    const ModelSpec m = uniform_model(4, 100 * kMB, kMB, 4 * kMB, 1e-3);
    const CostProfile p;
    const ClusterSpec roomy = make_cluster(4, Bytes{1} << 40);
    const CostEstimator a(m, roomy, p);
    CHECK(seed_strategy(a, 1, 8, 1) == strat("pp1/dp4"));
    CHECK(seed_strategy(a, 1, 2, 1) == strat("pp1/tp4"));
    CHECK(seed_strategy(a, 4, 2, 4).levels.empty());
    const ClusterSpec tight = make_cluster(4, 1200 * kMB);
    const CostEstimator b(m, tight, p);
    CHECK(seed_strategy(b, 1, 8, 1) == strat("pp1/sdp4"));
}

TEST_CASE("adjust moves one layer out of the slowest stage") {
    const std::vector<double> t1{1.0, 2.0};
    const Adjustment a = adjust_partition({6, 26}, t1);
    CHECK(a.moved);
    CHECK(a.partition == Partition{7, 25});
    CHECK(a.slowest_stage == 1);

    const std::vector<double> flat{1.0, 1.0};
    const Adjustment b = adjust_partition({16, 16}, flat);
    CHECK_FALSE(b.moved);
    CHECK(b.partition == Partition{16, 16});

    const std::vector<double> interior{1.0, 3.0, 2.0};
    const Adjustment c = adjust_partition({4, 4, 4}, interior);
    CHECK(c.partition == Partition{5, 3, 4});
    REQUIRE(c.untried.has_value());
    CHECK(*c.untried == Partition{4, 3, 5});

    const std::vector<double> tie{2.0, 3.0, 2.0};
    CHECK(adjust_partition({4, 4, 4}, tie).partition == Partition{4, 3, 5});

    const std::vector<double> single{1.0, 5.0, 1.0};
    const Adjustment d = adjust_partition({5, 1, 5}, single);
    CHECK_FALSE(d.moved);
    CHECK(d.partition == Partition{5, 1, 5});

    const std::vector<double> solo{1.0};
    CHECK_FALSE(adjust_partition({8}, solo).moved);
}

TEST_CASE("validation rules") {
    ValidationBounds bounds;
    bounds.max_time_prev = 3.0;
    bounds.mem_budget = 100;
    bounds.mem_cap_time_balanced = 90;
    CHECK(validate_partition(stages_from({2.5, 2.9}, {80, 85}), bounds) == Rejection::kNone);
    CHECK(validate_partition(stages_from({2.5, 3.0}, {80, 85}), bounds) == Rejection::kNone);
    CHECK(validate_partition(stages_from({2.5, 2.9}, {80, 120}), bounds) == Rejection::kMemoryBudget);
    CHECK(validate_partition(stages_from({3.5, 2.0}, {80, 85}), bounds) == Rejection::kTime);
    CHECK(validate_partition(stages_from({2.5, 2.9}, {95, 85}), bounds) == Rejection::kMemoryCap);
    bounds.min_alpha_t = 0.49;
    CHECK(validate_partition(stages_from({2.0, 2.9}, {80, 85}), bounds) == Rejection::kAlphaT);
    bounds.min_alpha_t.reset();
    bounds.min_alpha_m = 0.49;
    CHECK(validate_partition(stages_from({2.0, 2.9}, {50, 85}), bounds) == Rejection::kAlphaM);
}

TEST_CASE("homogeneous model with generous memory converges to an equal split") {
    const ModelSpec m = uniform_model(16, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(2, Bytes{1} << 40, 2, 100e9, 100e9);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const BiObjectiveResult r = bi_objective_optimize(est, 16, 2);
    REQUIRE(r.best.feasible);
    CHECK(r.memory_balanced != Partition{8, 8});
    CHECK(r.best.partition == Partition{8, 8});
    // Stage 1 also pays the boundary send, so the split is only nearly even.
    CHECK(balance_degrees(r.best.stages).alpha_t == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("budget that rules out the time-balanced partition") {
    // Activations equal model states per layer; stage 1 stashes two micro-batches.
    const ModelSpec m = uniform_model(16, 250'000, kMB, 0, 1e-3);
    const ClusterSpec c = make_cluster(2, 22 * kMB, 2, 100e9, 100e9);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const BiObjectiveResult r = bi_objective_optimize(est, 8, 2);
    CHECK(r.time_balanced == Partition{8, 8});
    CHECK_FALSE(r.time_balanced_result.feasible);
    CHECK(r.memory_balanced == Partition{6, 10});
    REQUIRE(r.best.feasible);
    CHECK(r.best.partition == Partition{7, 9});
    // Memory balance of the time-balanced partition under the same strategies.
    std::vector<double> mem;
    int first = 0;
    for (int i = 0; i < 2; ++i) {
        const std::vector<ParallelStrategy> run(8, ParallelStrategy{2, {}, false});
        mem.push_back(static_cast<double>(est.stage_cost(first, run, 1, {i + 1, 2, 8}).peak_mem_bytes));
        first += 8;
    }
    CHECK(balance_degrees(r.best.stages).alpha_m >= balance_degree(mem));
}

TEST_CASE("single stage skips the adjustment loop") {
    const ModelSpec m = uniform_model(4, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(2, Bytes{1} << 40);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const BiObjectiveResult r = bi_objective_optimize(est, 8, 1);
    REQUIRE(r.best.feasible);
    CHECK(r.best.partition == Partition{4});
    CHECK(r.trajectory.empty());
    CHECK(r.iterations == 1);
}

TEST_CASE("fuzzed adjustment runs respect every acceptance rule") {
    Rng rng(77);
    for (int trial = 0; trial < 150; ++trial) {
        const int L = uniform_int(rng, 2, 10);
        const ModelSpec m = random_model(rng, L);
        const int N = 1 << uniform_int(rng, 1, 3);
        const ClusterSpec c = make_cluster(N, Bytes{1} << uniform_int(rng, 24, 30), std::max(1, N / 2));
        const CostProfile p;
        const CostEstimator est(m, c, p);
        const int P = 1 << uniform_int(rng, 1, 3);
        if (P > N || P > L) continue;
        const int B = 8 * uniform_int(rng, 1, 4);
        const BiObjectiveResult r = bi_objective_optimize(est, B, P);
        CHECK(r.iterations <= 4 * L);
        const double cap = r.time_balanced_result.feasible ? static_cast<double>(r.time_balanced_result.max_stage_memory())
                                                           : kInfeasible;
        for (const auto& e : r.trajectory) {
            if (!e.accepted) continue;
            CHECK(e.max_time <= e.bound_time);
            CHECK(e.max_mem <= c.mem_budget_bytes);
            CHECK(static_cast<double>(e.max_mem) <= cap);
            CHECK(e.alpha_t >= 0.0);
            CHECK(e.alpha_t <= 1.0 - 1.0 / P + 1e-12);
        }
        if (r.best.feasible) CHECK(r.best.max_stage_memory() <= c.mem_budget_bytes);
    }
}

TEST_CASE("trajectory log is one JSON object per line") {
    const ModelSpec m = uniform_model(16, 10 * kMB, kMB, 4 * kMB, 1e-3);
    const ClusterSpec c = make_cluster(2, Bytes{1} << 40, 2, 100e9, 100e9);
    const CostProfile p;
    const CostEstimator est(m, c, p);
    const BiObjectiveResult r = bi_objective_optimize(est, 16, 2);
    std::ostringstream os;
    write_trajectory(os, r.trajectory);
    std::istringstream is(os.str());
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("partition"));
        CHECK(j.contains("alpha_t"));
        CHECK(j.contains("alpha_m"));
        CHECK(j.contains("accepted"));
        CHECK(j.contains("untried"));
        ++n;
    }
    CHECK(n == static_cast<int>(r.trajectory.size()));
    CHECK(n > 0);
}
