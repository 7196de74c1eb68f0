#include "frism/frism.hpp"

#include "frism/error.hpp"
#include "frism/ops.hpp"
#include "frism/svd.hpp"

#include <cmath>

namespace frism {

using nlohmann::json;

const char * gate_variant_name(gate_variant v) {
    return v == gate_variant::subspace ? "subspace" : "scalar_gate";
}

gate_variant parse_gate_variant(const std::string & s) {
    if (s == "subspace") return gate_variant::subspace;
    if (s == "scalar_gate") return gate_variant::scalar_gate;
    throw config_error("unknown gate variant '" + s + "' (expected subspace or scalar_gate)");
}

void frism_config::validate() const {
    if (!(lambda_lrm > 0.0) || !std::isfinite(lambda_lrm)) {
        throw config_error("frism.lambda_lrm must be positive");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw config_error("frism.alpha must be nonnegative");
    }
    if (rank_truncation && *rank_truncation < 1) {
        throw config_error("frism.rank_truncation must be at least 1");
    }
}

std::size_t subspace_decomposition::total_rank() const {
    std::size_t n = 0;
    for (const auto & [name, l] : layers) n += l.rank;
    return n;
}

const layer_decomposition & subspace_decomposition::at(const std::string & layer) const {
    const auto it = layers.find(layer);
    if (it == layers.end()) {
        throw shape_error("decomposition has no layer '" + layer + "'");
    }
    return it->second;
}

subspace_decomposition decompose(const task_vector & tau_lrm, const frism_config & cfg) {
    cfg.validate();
    subspace_decomposition out;
    out.arch = tau_lrm.arch;
    out.lambda_lrm = cfg.lambda_lrm;
    for (const auto & layer : tau_lrm.arch.merged_layers()) {
        const tensor tau = tau_lrm.delta_tensor(layer + ".w");
        const svd_result full = svd(tau);
        const std::size_t nr = numerical_rank(full);
        layer_decomposition ld;
        ld.layer = layer;
        if (nr == 0) {
            ld.u = full.u;
            ld.vt = full.vt;
            ld.s = tensor({full.rank});
            ld.rank = full.rank;
            ld.degenerate = true;
        } else {
            std::size_t k = nr;
            if (cfg.rank_truncation) k = std::min(k, *cfg.rank_truncation);
            const svd_result t = truncate(full, k);
            ld.u = t.u;
            ld.s = t.s;
            ld.vt = t.vt;
            ld.rank = t.rank;
        }
        for (float s : ld.s.data()) out.inject_normalizer += 0.25 * static_cast<double>(s) * s;
        out.layers.emplace(layer, std::move(ld));
    }
    return out;
}

std::size_t gate_set::parameter_count() const {
    std::size_t n = 0;
    for (const auto & [name, v] : g) n += v.size();
    return n;
}

std::map<std::string, std::vector<double>> gate_set::expanded(const subspace_decomposition & d) const {
    check_gates(d, *this);
    std::map<std::string, std::vector<double>> out;
    for (const auto & [layer, ld] : d.layers) {
        const auto & v = g.at(layer);
        std::vector<double> e(ld.rank);
        for (std::size_t i = 0; i < ld.rank; ++i) e[i] = variant == gate_variant::scalar_gate ? v[0] : v[i];
        out.emplace(layer, std::move(e));
    }
    return out;
}

gate_set constant_gates(const subspace_decomposition & d, gate_variant variant, float value) {
    gate_set gs;
    gs.variant = variant;
    for (const auto & [layer, ld] : d.layers) {
        gs.g.emplace(layer, std::vector<float>(variant == gate_variant::scalar_gate ? 1 : ld.rank, value));
    }
    return gs;
}

gate_set init_gates(const subspace_decomposition & d, gate_variant variant) {
    return constant_gates(d, variant, 0.0f);
}

void check_gates(const subspace_decomposition & d, const gate_set & gates) {
    if (gates.g.size() != d.layers.size()) {
        throw shape_error("gate set covers " + std::to_string(gates.g.size()) + " layers, decomposition has " +
                          std::to_string(d.layers.size()));
    }
    for (const auto & [layer, ld] : d.layers) {
        const auto it = gates.g.find(layer);
        if (it == gates.g.end()) {
            throw shape_error("no gates for layer '" + layer + "'");
        }
        const std::size_t want = gates.variant == gate_variant::scalar_gate ? 1 : ld.rank;
        if (it->second.size() != want) {
            throw shape_error("layer '" + layer + "' has " + std::to_string(it->second.size()) + " gates, expected " +
                              std::to_string(want));
        }
    }
}

static std::vector<double> update_values(const layer_decomposition & d, std::span<const double> g, double lambda_lrm) {
    if (g.size() != d.rank) {
        throw shape_error("layer '" + d.layer + "': gate length " + std::to_string(g.size()) + " != rank " +
                          std::to_string(d.rank));
    }
    const std::size_t m = d.u.rows(), n = d.vt.cols();
    std::vector<double> out(m * n, 0.0);
    if (d.degenerate) return out;
    for (std::size_t k = 0; k < d.rank; ++k) {
        const double c = lambda_lrm * sigmoid(g[k]) * d.s[k];
        for (std::size_t i = 0; i < m; ++i) {
            const double ci = c * d.u(i, k);
            double * row = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += ci * d.vt(k, j);
        }
    }
    return out;
}

tensor effective_update(const layer_decomposition & d, std::span<const double> g, double lambda_lrm) {
    const auto v = update_values(d, g, lambda_lrm);
    return tensor({d.u.rows(), d.vt.cols()}, std::vector<float>(v.begin(), v.end()));
}

tensor merged_weight(const tensor & vlm_weight, const layer_decomposition & d, std::span<const double> g, double lambda_lrm) {
    if (vlm_weight.ndim() != 2 || vlm_weight.rows() != d.u.rows() || vlm_weight.cols() != d.vt.cols()) {
        throw shape_error("merged_weight: theta_vlm tensor " + shape_str(vlm_weight.shape()) + " does not match layer '" +
                          d.layer + "'");
    }
    tensor out = vlm_weight;
    if (d.degenerate) return out;
    const auto v = update_values(d, g, lambda_lrm);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(vlm_weight[i]) + v[i]);
    }
    return out;
}

model_params scalar_gate_variant(const model_params & vlm, const task_vector & tau_lrm,
                                 const std::map<std::string, float> & g_scalar, double lambda_lrm) {
    if (!(vlm.arch == tau_lrm.arch)) {
        throw incompatible_error("scalar_gate_variant: architecture mismatch");
    }
    model_params out = vlm;
    out.prov = provenance::merged;
    for (const auto & layer : vlm.arch.merged_layers()) {
        const auto it = g_scalar.find(layer);
        if (it == g_scalar.end()) {
            throw config_error("missing scalar gate for layer '" + layer + "'");
        }
        const double c = lambda_lrm * sigmoid(static_cast<double>(it->second));
        tensor & w = out.at(layer + ".w");
        const auto d = tau_lrm.deltas(layer + ".w");
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = static_cast<float>(static_cast<double>(vlm.at(layer + ".w")[i]) + c * d[i]);
        }
    }
    return out;
}

model_params materialize(const model_params & vlm, const subspace_decomposition & d, const gate_set & gates,
                         const frism_config & cfg) {
    if (!(vlm.arch == d.arch)) {
        throw incompatible_error("materialize: decomposition was built for a different architecture");
    }
    const auto g = gates.expanded(d);
    model_params out = vlm;
    out.prov = provenance::merged;
    for (const auto & [layer, ld] : d.layers) {
        out.at(layer + ".w") = merged_weight(vlm.at(layer + ".w"), ld, g.at(layer), cfg.lambda_lrm);
    }
    return out;
}

container decomposition_to_container(const subspace_decomposition & d) {
    container c;
    c.meta["kind"] = "frism_decomposition";
    c.meta["arch"] = arch_to_json(d.arch);
    c.meta["lambda_lrm"] = d.lambda_lrm;
    c.meta["inject_normalizer"] = d.inject_normalizer;
    json layers = json::object();
    for (const auto & [name, ld] : d.layers) {
        layers[name] = {{"rank", ld.rank}, {"degenerate", ld.degenerate}};
        c.tensors.emplace(name + ".u", ld.u);
        c.tensors.emplace(name + ".s", ld.s);
        c.tensors.emplace(name + ".vt", ld.vt);
    }
    c.meta["layers"] = layers;
    return c;
}

subspace_decomposition decomposition_from_container(const container & c) {
    if (c.meta.value("kind", "") != "frism_decomposition") {
        throw format_error("not a decomposition archive");
    }
    subspace_decomposition d;
    try {
        d.arch = arch_from_json(c.meta.at("arch"));
        d.lambda_lrm = c.meta.at("lambda_lrm").get<double>();
        d.inject_normalizer = c.meta.at("inject_normalizer").get<double>();
        for (const auto & [name, info] : c.meta.at("layers").items()) {
            layer_decomposition ld;
            ld.layer = name;
            ld.rank = info.at("rank").get<std::size_t>();
            ld.degenerate = info.at("degenerate").get<bool>();
            for (const char * part : {".u", ".s", ".vt"}) {
                if (!c.tensors.count(name + part)) {
                    throw format_error("decomposition archive lacks tensor '" + name + part + "'");
                }
            }
            ld.u = c.tensors.at(name + ".u");
            ld.s = c.tensors.at(name + ".s");
            ld.vt = c.tensors.at(name + ".vt");
            if (ld.s.size() != ld.rank || ld.u.cols() != ld.rank || ld.vt.rows() != ld.rank) {
                throw format_error("decomposition layer '" + name + "' tensors disagree with rank " + std::to_string(ld.rank));
            }
            d.layers.emplace(name, std::move(ld));
        }
    } catch (const json::exception & e) {
        throw format_error(std::string("malformed decomposition manifest: ") + e.what());
    }
    return d;
}

container gates_to_container(const gate_set & gates) {
    container c;
    c.meta["kind"] = "frism_gates";
    c.meta["variant"] = gate_variant_name(gates.variant);
    c.meta["trainable"] = gates.trainable;
    for (const auto & [name, v] : gates.g) {
        c.tensors.emplace(name + ".g", tensor::from_vector(v));
    }
    return c;
}

gate_set gates_from_container(const container & c) {
    if (c.meta.value("kind", "") != "frism_gates") {
        throw format_error("not a gate archive");
    }
    gate_set gs;
    try {
        gs.variant = parse_gate_variant(c.meta.at("variant").get<std::string>());
        gs.trainable = c.meta.at("trainable").get<bool>();
    } catch (const json::exception & e) {
        throw format_error(std::string("malformed gate manifest: ") + e.what());
    }
    for (const auto & [name, t] : c.tensors) {
        if (name.size() < 3 || name.substr(name.size() - 2) != ".g") {
            throw format_error("unexpected tensor '" + name + "' in gate archive");
        }
        gs.g.emplace(name.substr(0, name.size() - 2), std::vector<float>(t.values().begin(), t.values().end()));
    }
    return gs;
}

} // namespace frism
