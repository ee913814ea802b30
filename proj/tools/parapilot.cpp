// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "parapilot/planner.hpp"

using namespace parapilot;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitInfeasible = 2;

struct Inputs {
    std::string model_path, cluster_path, profile_path;
    ModelSpec model;
    ClusterSpec cluster;
    CostProfile profile;

    void add_options(CLI::App* cmd) {
        cmd->add_option("--model", model_path, "model spec JSON")->required();
        cmd->add_option("--cluster", cluster_path, "cluster spec JSON")->required();
        cmd->add_option("--profile", profile_path, "cost profile JSON")->required();
    }

    void load() {
        model = load_model_spec(read_json_file(model_path));
        cluster = load_cluster_spec(read_json_file(cluster_path));
        profile = load_cost_profile(read_json_file(profile_path), &model);
    }
};

void emit(const json& doc, const std::string& path) {
    const std::string text = doc.dump(2) + "\n";
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

json layer_cost_json(const LayerCost& c) {
    return {{"time_s", c.time_s},
            {"time_no_sync_s", c.time_no_sync_s},
            {"mem_fwd_bytes", c.mem_fwd_bytes},
            {"mem_bwd_bytes", c.mem_bwd_bytes},
            {"mem_states_bytes", c.mem_states_bytes},
            {"compute", {{"fwd_s", c.compute.fwd_s}, {"bwd_s", c.compute.bwd_s}, {"recompute_s", c.compute.recompute_s}}},
            {"comm",
             {{"grad_s", c.comm.grad_s},
              {"grad_sync_s", c.comm.grad_sync_s},
              {"act_fwd_s", c.comm.act_fwd_s},
              {"act_bwd_s", c.comm.act_bwd_s},
              {"act_recompute_s", c.comm.act_recompute_s}}}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parapilot: hybrid-parallelism planner"};
    app.require_subcommand(1);

    Inputs plan_in;
    PlannerOptions popt;
    std::string plan_out, trajectory_path;
    double granularity_mb = 64;
    bool forward_sweep = false;
    auto* plan = app.add_subcommand("plan", "search for the highest-throughput plan");
    plan_in.add_options(plan);
    plan->add_option("--batch-step", popt.batch_step, "batch size increment")->check(CLI::PositiveNumber);
    plan->add_option("--mem-granularity-mb", granularity_mb, "memory bucket size in MiB")->check(CLI::PositiveNumber);
    plan->add_flag("--bi-objective", popt.bi_objective, "refine partitions around the best batch size");
    plan->add_option("--max-batch", popt.max_batch, "largest batch size to explore")->check(CLI::PositiveNumber);
    plan->add_option("--batch-radius", popt.batch_radius, "batch range explored around the base optimum");
    plan->add_option("--fuse-max", popt.balance.search.stage.fuse_max, "fuse up to this many identical layers");
    plan->add_flag("--forward-sweep", forward_sweep, "use the forward-memory sweep instead of the exact search");
    plan->add_option("--trajectory", trajectory_path, "write the partition trajectory as JSON lines");
    plan->add_option("-o,--output", plan_out, "plan JSON path (stdout if omitted)");

    Inputs oracle_in;
    int oracle_batch = 1;
    bool oracle_all_m = false;
    std::string oracle_out;
    auto* oracle = app.add_subcommand("oracle", "exhaustive search at one batch size (tiny instances)");
    oracle_in.add_options(oracle);
    oracle->add_option("--batch", oracle_batch, "batch size")->required()->check(CLI::PositiveNumber);
    oracle->add_flag("--all-micro-counts", oracle_all_m, "try every micro-batch count");
    oracle->add_option("-o,--output", oracle_out, "plan JSON path (stdout if omitted)");

    int count_devices = 8;
    bool no_prune = false;
    auto* count = app.add_subcommand("count-strategies", "size of the per-stage strategy space");
    count->add_option("--devices", count_devices, "device count")->required();
    count->add_flag("--no-prune", no_prune, "keep strategies mixing DP and SDP");

    Inputs est_in;
    std::string est_strategy;
    int est_mb = 1, est_micro = 1, est_first = 0, est_layers = -1;
    auto* estimate = app.add_subcommand("estimate", "cost of one strategy applied to a run of layers");
    est_in.add_options(estimate);
    estimate->add_option("--strategy", est_strategy, "e.g. pp1/tp2/dp4/ckpt")->required();
    estimate->add_option("--micro-batch", est_mb, "micro-batch size")->required()->check(CLI::PositiveNumber);
    estimate->add_option("--n-micro", est_micro, "micro-batches per iteration")->check(CLI::PositiveNumber);
    estimate->add_option("--first-layer", est_first, "first layer of the stage");
    estimate->add_option("--layers", est_layers, "layer count (default: rest of the model)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitInputError;
    }

    try {
        if (*plan) {
            plan_in.load();
            popt.balance.search.stage.dp.granularity = static_cast<Bytes>(granularity_mb * static_cast<double>(kMiB));
            if (popt.balance.search.stage.dp.granularity < 1) throw std::invalid_argument("granularity too small");
            if (forward_sweep) popt.balance.search.stage.dp.mode = DpMode::kForwardSweep;
            const CostEstimator est(plan_in.model, plan_in.cluster, plan_in.profile);
            std::vector<TrajectoryEntry> trajectory;
            const Plan p = plan_full(est, popt, nullptr, &trajectory);
            if (!trajectory_path.empty()) {
                std::ofstream t(trajectory_path, std::ios::binary);
                write_trajectory(t, trajectory);
            }
            emit(plan_to_json(p, plan_in.cluster), plan_out);
        } else if (*oracle) {
            oracle_in.load();
            if (oracle_in.model.num_layers() > 4 || oracle_in.cluster.n_devices > 4) {
                throw std::invalid_argument("oracle is limited to 4 layers and 4 devices");
            }
            const CostEstimator est(oracle_in.model, oracle_in.cluster, oracle_in.profile);
            OracleOptions o;
            o.all_micro_counts = oracle_all_m;
            const Plan p = brute_force_oracle(est, oracle_batch, o);
            if (!p.feasible) {
                std::cerr << "infeasible: no configuration fits at batch size " << oracle_batch << "\n";
                return kExitInfeasible;
            }
            emit(plan_to_json(p, oracle_in.cluster), oracle_out);
        } else if (*count) {
            if (!is_power_of_two(count_devices)) throw UnsupportedDeviceCount(count_devices);
            json doc;
            std::size_t total = 0;
            for (int P : pp_degrees(count_devices)) {
                const auto n = candidate_strategies(count_devices, P, !no_prune).size();
                doc["per_pp_degree"][std::to_string(P)] = n;
                if (P == 1) doc["per_stage_group"] = n;
                total += n;
            }
            doc["total"] = total;
            emit(doc, "");
        } else if (*estimate) {
            est_in.load();
            const ParallelStrategy s = parse_strategy(est_strategy);
            if (!satisfies_construction_rules(s, est_in.cluster.n_devices)) {
                throw std::invalid_argument("strategy does not cover " + std::to_string(est_in.cluster.n_devices) +
                                            " devices");
            }
            const int L = est_in.model.num_layers();
            const int n = est_layers < 0 ? L - est_first : est_layers;
            if (est_first < 0 || n < 1 || est_first + n > L) throw std::invalid_argument("layer range out of bounds");
            const CostEstimator est(est_in.model, est_in.cluster, est_in.profile);
            const StageSlot slot{1, s.pp_degree, est_micro};
            json layers = json::array();
            for (int l = est_first; l < est_first + n; ++l) {
                json j = layer_cost_json(est.layer_cost(l, s, est_mb, slot));
                j["id"] = l;
                layers.push_back(std::move(j));
            }
            const std::vector<ParallelStrategy> run(n, s);
            const StageCost sc = est.stage_cost(est_first, run, est_mb, slot);
            json doc{{"strategy", to_string(s, est_in.cluster)},
                     {"micro_batch", est_mb},
                     {"layers", std::move(layers)},
                     {"stage",
                      {{"time_s", sc.time_s},
                       {"time_no_sync_s", sc.time_no_sync_s},
                       {"peak_mem_bytes", sc.peak_mem_bytes},
                       {"fwd_mem_bytes", sc.fwd_mem_bytes},
                       {"transform_s", sc.transform_s},
                       {"p2p_s", sc.p2p_s},
                       {"fits_budget", sc.peak_mem_bytes <= est_in.cluster.mem_budget_bytes}}}};
            emit(doc, "");
        }
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return kExitOk;
}
