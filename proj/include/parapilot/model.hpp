// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0
//
// Immutable planner inputs: model layers, cluster description and the
// measured cost profile, plus their JSON ingestion.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace parapilot {

using Bytes = std::int64_t;
using Seconds = double;

/// Raised for any malformed or out-of-range input document.
class SpecError : public std::runtime_error {
public:
    SpecError(const std::string& what, std::optional<int> layer = std::nullopt,
              std::string field = {});

    std::optional<int> layer() const { return layer_; }
    const std::string& field() const { return field_; }

private:
    std::optional<int> layer_;
    std::string field_;
};

/// Raised when the cluster device count is not a power of two.
class UnsupportedDeviceCount : public SpecError {
public:
    explicit UnsupportedDeviceCount(std::int64_t n);
};

inline constexpr double kDefaultMsMultiplier = 4.0;
inline constexpr double kDefaultTpActReplication = 0.25;
inline constexpr double kDefaultBwdFwdRatio = 2.0;
inline constexpr double kDefaultOverlapSlowdown = 1.3;

struct LayerSpec {
    int id = 0;
    std::string kind = "layer";
    Bytes param_bytes = 0;
    Bytes bnd_bytes_per_sample = 0;
    Bytes int_bytes_per_sample = 0;
    Seconds fwd_time_per_sample = 0.0;
    // Fraction of intermediate activations kept whole on every tensor-parallel rank.
    double tp_act_replication_fraction = kDefaultTpActReplication;

    bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
    std::string name;
    std::vector<LayerSpec> layers;
    // Model-state bytes (params + grads + optimizer states) per parameter byte.
    double ms_bytes_per_param_byte = kDefaultMsMultiplier;

    int num_layers() const { return static_cast<int>(layers.size()); }
    bool operator==(const ModelSpec&) const = default;
};

struct ClusterSpec {
    int n_devices = 1;
    Bytes mem_budget_bytes = 0;
    int island_size = 1;
    double intra_island_bw = 0.0;  // bytes / s
    double inter_island_bw = 0.0;  // bytes / s
    double overlap_slowdown = kDefaultOverlapSlowdown;

    bool operator==(const ClusterSpec&) const = default;
};

struct CostProfile {
    std::map<int, Seconds> fwd_time_overrides;
    std::map<int, double> tp_act_replication_overrides;
    double bwd_fwd_ratio = kDefaultBwdFwdRatio;
    double collective_efficiency = 1.0;

    Seconds fwd_time(const LayerSpec& layer) const;
    double tp_act_replication(const LayerSpec& layer) const;

    bool operator==(const CostProfile&) const = default;
};

bool is_power_of_two(std::int64_t n);

// Validation. Each throws SpecError naming the offending layer and field.
void validate(const LayerSpec& layer);
void validate(const ModelSpec& model);
void validate(const ClusterSpec& cluster);
void validate(const CostProfile& profile);
void validate(const CostProfile& profile, const ModelSpec& model);

ModelSpec load_model_spec(const nlohmann::json& doc);
ClusterSpec load_cluster_spec(const nlohmann::json& doc);
// When `model` is given, layer overrides are checked against its layer ids.
CostProfile load_cost_profile(const nlohmann::json& doc, const ModelSpec* model = nullptr);

nlohmann::json to_json(const ModelSpec& model);
nlohmann::json to_json(const ClusterSpec& cluster);
nlohmann::json to_json(const CostProfile& profile);

nlohmann::json read_json_file(const std::string& path);

}  // namespace parapilot
