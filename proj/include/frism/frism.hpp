#pragma once

#include "frism/checkpoint.hpp"
#include "frism/merge.hpp"
#include "frism/model.hpp"
#include "frism/tensor.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace frism {

enum class gate_variant { subspace, scalar_gate };

const char * gate_variant_name(gate_variant v);
gate_variant parse_gate_variant(const std::string & s);

constexpr std::size_t k_default_truncation = 8;

struct frism_config {
    double lambda_lrm = 0.2;
    double alpha = 0.2;
    std::optional<std::size_t> rank_truncation;
    gate_variant variant = gate_variant::subspace;

    void validate() const;   // throws config_error
};

// frozen SVD of one merged layer's reasoning task vector
struct layer_decomposition {
    std::string layer;          // dense layer name, e.g. "layer1"
    tensor u;                   // m x r
    tensor s;                   // r
    tensor vt;                  // r x n
    std::size_t rank = 0;
    bool degenerate = false;    // tau is zero here: s is all zero and the layer is never changed
};

struct subspace_decomposition {
    arch_spec arch;
    std::map<std::string, layer_decomposition> layers;   // merged layers only
    double lambda_lrm = 0.2;
    double inject_normalizer = 0.0;                      // sum over layers of |0.5 s|^2, fixed here
    std::size_t total_rank() const;
    const layer_decomposition & at(const std::string & layer) const;
};

// SVD per merged weight. Triplets whose singular value is numerically zero
// (below max(m,n) * 2^-23 * s_max) are dropped; a layer with nothing left is
// degenerate. Truncation keeps min(k, rank) triplets.
subspace_decomposition decompose(const task_vector & tau_lrm, const frism_config & cfg);

struct gate_set {
    gate_variant variant = gate_variant::subspace;
    std::map<std::string, std::vector<float>> g;   // subspace: length rank; scalar_gate: length 1
    bool trainable = true;

    std::size_t parameter_count() const;
    // per-subspace gate values, a shared scalar repeated over the layer's rank
    std::map<std::string, std::vector<double>> expanded(const subspace_decomposition & d) const;
};

gate_set init_gates(const subspace_decomposition & d, gate_variant variant);   // all zero
gate_set constant_gates(const subspace_decomposition & d, gate_variant variant, float value);
void check_gates(const subspace_decomposition & d, const gate_set & gates);     // shape_error on mismatch

// lambda * U diag(sigmoid(g) * s) V^T; g has one entry per singular triplet
tensor effective_update(const layer_decomposition & d, std::span<const double> g, double lambda_lrm);
// theta_vlm + effective_update, with theta_vlm at coefficient exactly 1
tensor merged_weight(const tensor & vlm_weight, const layer_decomposition & d, std::span<const double> g, double lambda_lrm);

// theta_vlm + lambda * sigmoid(g_l) * tau_lrm on merged weights; biases and frozen layers stay at theta_vlm
model_params scalar_gate_variant(const model_params & vlm, const task_vector & tau_lrm,
                                 const std::map<std::string, float> & g_scalar, double lambda_lrm);

// plain checkpoint: merged weights from the gates, everything else copied from theta_vlm
model_params materialize(const model_params & vlm, const subspace_decomposition & d, const gate_set & gates,
                         const frism_config & cfg);

container              decomposition_to_container(const subspace_decomposition & d);
subspace_decomposition decomposition_from_container(const container & c);
container gates_to_container(const gate_set & gates);
gate_set  gates_from_container(const container & c);

} // namespace frism
