#pragma once

#include "frism/model.hpp"
#include "frism/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace frism {

// tau = ft - base per tensor. A float delta alone cannot always reproduce ft when
// added back to base, so each delta is stored as a float pair (hi, lo) with
// hi + lo == ft - base to double precision. Merges add base + lambda * (hi + lo)
// in double and round once, which makes base + 1 * tau reproduce ft bitwise.
struct task_vector {
    arch_spec arch;
    std::map<std::string, tensor> tensors;    // hi part, the delta as float
    std::map<std::string, tensor> residual;   // lo part, rounding compensation
    provenance source = provenance::base;
    std::string base_id;                      // params_checksum of the base model

    const tensor & at(const std::string & name) const;
    double delta(const std::string & name, std::size_t i) const;
    std::vector<double> deltas(const std::string & name) const;
    tensor delta_tensor(const std::string & name) const;   // hi + lo rounded to float
    double norm_sq() const;
};

task_vector compute_task_vector(const model_params & ft, const model_params & base);

// throws incompatible_error unless tau was computed against this base
void check_compatible(const model_params & base, const task_vector & tau);

// Frozen-layer conventions:
//  - task arithmetic applies its formula to every tensor; tau_lrm is exactly zero on
//    frozen layers, so lambda_vlm = 1 leaves them at theta_vlm
//  - layer-wise copies frozen layers from theta_vlm unless a coefficient is given
//  - ties writes base + sum of all deltas on frozen layers (the only delta there is tau_vlm's)
//  - dare leaves frozen tensors untouched and draws no random numbers for them

model_params merge_task_arithmetic(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm,
                                   double lambda_vlm, double lambda_lrm);

// coefficient maps are keyed by dense layer name ("layer1") and apply to .w and .b
model_params merge_layer_wise(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm,
                              const std::map<std::string, double> & lambda_vlm,
                              const std::map<std::string, double> & lambda_lrm);

// trim / elect / disjoint-mean on flat vectors of equal length
std::vector<double> ties_combine(const std::vector<std::vector<double>> & vectors, double density);
// indices kept by the trim step: the ceil(density * n) largest magnitudes, lower index first on ties
std::vector<bool> ties_trim_mask(const std::vector<double> & v, double density);

model_params ties_merge(const model_params & base, const std::vector<task_vector> & vectors, double density, double lambda);

task_vector dare(const task_vector & tau, double drop, std::uint64_t seed);

struct ip_result {
    double lambda = 0.0;
    bool flagged = false;   // lambda > lambda_warn
};

constexpr double k_ip_lambda_warn = 2.0;

ip_result ip_coefficient(const std::vector<double> & sigma_vlm, const std::vector<double> & sigma_lrm,
                         double lambda_warn = k_ip_lambda_warn);

struct ip_merge_result {
    model_params merged;
    std::map<std::string, ip_result> coefficients;   // per merged layer
};

// theta_vlm + lambda_l * tau_lrm per merged layer, lambda_l from the singular values of both task vectors
ip_merge_result merge_ip(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm,
                         double lambda_warn = k_ip_lambda_warn);

struct sweep_row {
    std::size_t rank = 0;   // 1-indexed
    double lambda = 0.0;
    std::string layer_set;
    double score_task_v = 0.0;
    double score_task_r = 0.0;
};

using model_evaluator = std::function<std::pair<double, double>(const model_params &)>;

// rank-n injection: per layer in layer_set, theta_vlm + B_n * (|tau|^2 / s_n^2) * lambda where
// B_n = s_n u_n v_n^T; all layers in the set are modified together. An empty layer_set means
// every merged layer.
model_params rank_injection(const model_params & vlm, const task_vector & tau_lrm, std::size_t rank, double lambda,
                            const std::vector<std::string> & layer_set);

std::vector<sweep_row> rank_injection_sweep(const model_params & vlm, const task_vector & tau_lrm,
                                            const std::vector<std::size_t> & ranks, const std::vector<double> & lambdas,
                                            const model_evaluator & eval, const std::vector<std::string> & layer_set = {});

std::string sweep_to_csv(const std::vector<sweep_row> & rows);

// lambda with the best taskR score for a rank (first on ties)
double sweep_best_lambda(const std::vector<sweep_row> & rows, std::size_t rank);

} // namespace frism
