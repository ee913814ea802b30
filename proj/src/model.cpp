// Copyright (c) 2026, The Parapilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "parapilot/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace parapilot {

namespace {

using nlohmann::json;

std::string describe(std::optional<int> layer, const std::string& field) {
    std::ostringstream os;
    if (layer) os << "layer " << *layer;
    if (!field.empty()) os << (layer ? ", " : "") << "field '" << field << "'";
    return os.str();
}

[[noreturn]] void fail(const std::string& msg, std::optional<int> layer = std::nullopt,
                       const std::string& field = {}) {
    throw SpecError(msg, layer, field);
}

const json& require(const json& obj, const char* key, std::optional<int> layer = std::nullopt) {
    auto it = obj.find(key);
    if (it == obj.end()) fail("missing required field", layer, key);
    return *it;
}

Bytes get_bytes(const json& v, const char* key, std::optional<int> layer) {
    if (!v.is_number_integer()) fail("expected an integer byte count", layer, key);
    return v.get<Bytes>();
}

double get_number(const json& v, const char* key, std::optional<int> layer) {
    if (!v.is_number()) fail("expected a number", layer, key);
    double x = v.get<double>();
    if (!std::isfinite(x)) fail("expected a finite number", layer, key);
    return x;
}

int get_int(const json& v, const char* key) {
    if (!v.is_number_integer()) fail("expected an integer", std::nullopt, key);
    auto x = v.get<std::int64_t>();
    if (x < 0 || x > (1 << 30)) fail("integer out of range", std::nullopt, key);
    return static_cast<int>(x);
}

int parse_layer_id(const std::string& key, const ModelSpec* model) {
    std::size_t pos = 0;
    int id = -1;
    try {
        id = std::stoi(key, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != key.size() || id < 0) fail("layer override key is not a layer id: '" + key + "'");
    if (model && id >= model->num_layers()) {
        fail("override references unknown layer id " + key, id, "layer_overrides");
    }
    return id;
}

}  // namespace

SpecError::SpecError(const std::string& what, std::optional<int> layer, std::string field)
    : std::runtime_error(layer || !field.empty() ? what + " (" + describe(layer, field) + ")" : what),
      layer_(layer),
      field_(std::move(field)) {}

UnsupportedDeviceCount::UnsupportedDeviceCount(std::int64_t n)
    : SpecError("unsupported device count " + std::to_string(n) + ": must be a power of two",
                std::nullopt, "n_devices") {}

Seconds CostProfile::fwd_time(const LayerSpec& layer) const {
    auto it = fwd_time_overrides.find(layer.id);
    return it == fwd_time_overrides.end() ? layer.fwd_time_per_sample : it->second;
}

double CostProfile::tp_act_replication(const LayerSpec& layer) const {
    auto it = tp_act_replication_overrides.find(layer.id);
    return it == tp_act_replication_overrides.end() ? layer.tp_act_replication_fraction : it->second;
}

bool is_power_of_two(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void validate(const LayerSpec& layer) {
    const int id = layer.id;
    if (layer.param_bytes <= 0) fail("param_bytes must be positive", id, "param_bytes");
    if (layer.bnd_bytes_per_sample <= 0) {
        fail("bnd_bytes_per_sample must be positive", id, "bnd_bytes_per_sample");
    }
    if (layer.int_bytes_per_sample < 0) {
        fail("int_bytes_per_sample must be non-negative", id, "int_bytes_per_sample");
    }
    if (!(layer.fwd_time_per_sample > 0.0) || !std::isfinite(layer.fwd_time_per_sample)) {
        fail("fwd_time_per_sample must be positive", id, "fwd_time_per_sample");
    }
    if (!(layer.tp_act_replication_fraction >= 0.0 && layer.tp_act_replication_fraction <= 1.0)) {
        fail("tp_act_replication_fraction must lie in [0, 1]", id, "tp_act_replication_fraction");
    }
}

void validate(const ModelSpec& model) {
    if (model.layers.empty()) fail("model has no layers", std::nullopt, "layers");
    if (!(model.ms_bytes_per_param_byte >= 1.0)) {
        fail("ms_bytes_per_param_byte must be >= 1", std::nullopt, "ms_bytes_per_param_byte");
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].id != static_cast<int>(i)) {
            fail("layer ids must be 0..L-1 in order", static_cast<int>(i), "id");
        }
        validate(model.layers[i]);
    }
}

void validate(const ClusterSpec& c) {
    if (!is_power_of_two(c.n_devices)) throw UnsupportedDeviceCount(c.n_devices);
    if (!is_power_of_two(c.island_size)) {
        fail("island_size must be a power of two", std::nullopt, "island_size");
    }
    if (c.n_devices % c.island_size != 0) {
        fail("island_size must divide n_devices", std::nullopt, "island_size");
    }
    if (c.mem_budget_bytes < 0) fail("mem_budget_bytes must be non-negative", std::nullopt, "mem_budget_bytes");
    if (!(c.inter_island_bw > 0.0)) fail("inter_island_bw must be positive", std::nullopt, "inter_island_bw");
    if (!(c.intra_island_bw >= c.inter_island_bw)) {
        fail("intra_island_bw must be >= inter_island_bw", std::nullopt, "intra_island_bw");
    }
    if (!(c.overlap_slowdown >= 1.0)) fail("overlap_slowdown must be >= 1", std::nullopt, "overlap_slowdown");
}

void validate(const CostProfile& p) {
    if (!(p.bwd_fwd_ratio > 0.0)) fail("bwd_fwd_ratio must be positive", std::nullopt, "bwd_fwd_ratio");
    if (!(p.collective_efficiency > 0.0 && p.collective_efficiency <= 1.0)) {
        fail("collective_efficiency must lie in (0, 1]", std::nullopt, "collective_efficiency");
    }
    for (const auto& [id, t] : p.fwd_time_overrides) {
        if (!(t > 0.0) || !std::isfinite(t)) fail("override time must be positive", id, "fwd_time_per_sample");
    }
    for (const auto& [id, f] : p.tp_act_replication_overrides) {
        if (!(f >= 0.0 && f <= 1.0)) fail("override fraction must lie in [0, 1]", id, "tp_act_replication_fraction");
    }
}

void validate(const CostProfile& p, const ModelSpec& model) {
    validate(p);
    for (const auto& [id, t] : p.fwd_time_overrides) {
        if (id < 0 || id >= model.num_layers()) fail("override references unknown layer id", id, "layer_overrides");
    }
    for (const auto& [id, f] : p.tp_act_replication_overrides) {
        if (id < 0 || id >= model.num_layers()) {
            fail("override references unknown layer id", id, "tp_act_replication_overrides");
        }
    }
}

ModelSpec load_model_spec(const json& doc) {
    if (!doc.is_object()) fail("model document must be a JSON object");
    ModelSpec model;
    const json& name = require(doc, "name");
    if (!name.is_string()) fail("expected a string", std::nullopt, "name");
    model.name = name.get<std::string>();
    if (auto it = doc.find("ms_bytes_per_param_byte"); it != doc.end()) {
        model.ms_bytes_per_param_byte = get_number(*it, "ms_bytes_per_param_byte", std::nullopt);
    }
    const json& layers = require(doc, "layers");
    if (!layers.is_array()) fail("expected an array", std::nullopt, "layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const int id = static_cast<int>(i);
        const json& l = layers[i];
        if (!l.is_object()) fail("layer entry must be an object", id);
        LayerSpec layer;
        layer.id = id;
        if (auto it = l.find("id"); it != l.end()) {
            if (!it->is_number_integer() || it->get<std::int64_t>() != id) {
                fail("explicit id must equal the layer's position", id, "id");
            }
        }
        if (auto it = l.find("kind"); it != l.end()) {
            if (!it->is_string()) fail("expected a string", id, "kind");
            layer.kind = it->get<std::string>();
        }
        layer.param_bytes = get_bytes(require(l, "param_bytes", id), "param_bytes", id);
        layer.bnd_bytes_per_sample = get_bytes(require(l, "bnd_bytes_per_sample", id), "bnd_bytes_per_sample", id);
        layer.int_bytes_per_sample = get_bytes(require(l, "int_bytes_per_sample", id), "int_bytes_per_sample", id);
        layer.fwd_time_per_sample = get_number(require(l, "fwd_time_per_sample", id), "fwd_time_per_sample", id);
        if (auto it = l.find("tp_act_replication_fraction"); it != l.end()) {
            layer.tp_act_replication_fraction = get_number(*it, "tp_act_replication_fraction", id);
        }
        model.layers.push_back(std::move(layer));
    }
    validate(model);
    return model;
}

ClusterSpec load_cluster_spec(const json& doc) {
    if (!doc.is_object()) fail("cluster document must be a JSON object");
    ClusterSpec c;
    const json& n = require(doc, "n_devices");
    if (!n.is_number_integer()) fail("expected an integer", std::nullopt, "n_devices");
    if (!is_power_of_two(n.get<std::int64_t>())) throw UnsupportedDeviceCount(n.get<std::int64_t>());
    c.n_devices = get_int(n, "n_devices");
    c.mem_budget_bytes = get_bytes(require(doc, "mem_budget_bytes"), "mem_budget_bytes", std::nullopt);
    c.island_size = get_int(require(doc, "island_size"), "island_size");
    c.intra_island_bw = get_number(require(doc, "intra_island_bw"), "intra_island_bw", std::nullopt);
    c.inter_island_bw = get_number(require(doc, "inter_island_bw"), "inter_island_bw", std::nullopt);
    if (auto it = doc.find("overlap_slowdown"); it != doc.end()) {
        c.overlap_slowdown = get_number(*it, "overlap_slowdown", std::nullopt);
    }
    validate(c);
    return c;
}

CostProfile load_cost_profile(const json& doc, const ModelSpec* model) {
    if (!doc.is_object()) fail("profile document must be a JSON object");
    CostProfile p;
    if (auto it = doc.find("bwd_fwd_ratio"); it != doc.end()) {
        p.bwd_fwd_ratio = get_number(*it, "bwd_fwd_ratio", std::nullopt);
    }
    if (auto it = doc.find("collective_efficiency"); it != doc.end()) {
        p.collective_efficiency = get_number(*it, "collective_efficiency", std::nullopt);
    }
    if (auto it = doc.find("layer_overrides"); it != doc.end()) {
        if (!it->is_object()) fail("expected an object", std::nullopt, "layer_overrides");
        for (const auto& [key, value] : it->items()) {
            const int id = parse_layer_id(key, model);
            p.fwd_time_overrides[id] = get_number(value, "fwd_time_per_sample", id);
        }
    }
    if (auto it = doc.find("tp_act_replication_overrides"); it != doc.end()) {
        if (!it->is_object()) fail("expected an object", std::nullopt, "tp_act_replication_overrides");
        for (const auto& [key, value] : it->items()) {
            const int id = parse_layer_id(key, model);
            p.tp_act_replication_overrides[id] = get_number(value, "tp_act_replication_fraction", id);
        }
    }
    if (model) {
        validate(p, *model);
    } else {
        validate(p);
    }
    return p;
}

json to_json(const ModelSpec& model) {
    json layers = json::array();
    for (const auto& l : model.layers) {
        layers.push_back({{"kind", l.kind},
                          {"param_bytes", l.param_bytes},
                          {"bnd_bytes_per_sample", l.bnd_bytes_per_sample},
                          {"int_bytes_per_sample", l.int_bytes_per_sample},
                          {"fwd_time_per_sample", l.fwd_time_per_sample},
                          {"tp_act_replication_fraction", l.tp_act_replication_fraction}});
    }
    return {{"name", model.name}, {"ms_bytes_per_param_byte", model.ms_bytes_per_param_byte}, {"layers", layers}};
}

json to_json(const ClusterSpec& c) {
    return {{"n_devices", c.n_devices},
            {"mem_budget_bytes", c.mem_budget_bytes},
            {"island_size", c.island_size},
            {"intra_island_bw", c.intra_island_bw},
            {"inter_island_bw", c.inter_island_bw},
            {"overlap_slowdown", c.overlap_slowdown}};
}

json to_json(const CostProfile& p) {
    json overrides = json::object();
    for (const auto& [id, t] : p.fwd_time_overrides) overrides[std::to_string(id)] = t;
    json doc = {{"bwd_fwd_ratio", p.bwd_fwd_ratio},
                {"collective_efficiency", p.collective_efficiency},
                {"layer_overrides", overrides}};
    if (!p.tp_act_replication_overrides.empty()) {
        json frac = json::object();
        for (const auto& [id, f] : p.tp_act_replication_overrides) frac[std::to_string(id)] = f;
        doc["tp_act_replication_overrides"] = frac;
    }
    return doc;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SpecError("'" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace parapilot
