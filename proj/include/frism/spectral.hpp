#pragma once

#include "frism/frism.hpp"
#include "frism/model.hpp"

#include <string>
#include <vector>

namespace frism {

// decoupled quadratic model of the merge objective around theta_vlm:
// L(lambda) = sum_i 0.5 lambda_i^2 h_i - alpha lambda_i^2 |B_i|^2
struct quadratic_landscape {
    std::vector<double> curvatures;         // h_i = tr(B_i^T H B_i) >= 0
    std::vector<double> subspace_norms_sq;  // |B_i|_F^2 > 0
    double alpha = 0.2;
    double lambda_lrm = 1.0;

    void validate() const;   // throws config_error
    std::size_t size() const { return curvatures.size(); }
};

enum class regime { suppression, injection };

const char * regime_name(regime r);

struct regime_prediction {
    std::vector<regime> regimes;
    std::vector<double> margins;   // h_i - 2 alpha |B_i|^2
};

std::vector<double> closed_form_gradient(const quadratic_landscape & land, const std::vector<double> & lambda);
double decoupled_loss(const quadratic_landscape & land, const std::vector<double> & lambda);
regime_prediction classify_regimes(const quadratic_landscape & land);

constexpr double k_gate_divergence = 100.0;

// gradient descent on the decoupled loss with lambda_i = lambda_lrm * sigmoid(g_i).
// Returns sigmoid(g) after every step, row 0 being the initial state.
// |g_i| > 100 aborts with a domain_error carrying the step and subspace.
std::vector<std::vector<double>> simulate_gate_dynamics(const quadratic_landscape & land, const std::vector<double> & g_init,
                                                        double lr, std::size_t steps);

struct distance_result {
    double j_value = 0.0;                  // |delta_res - tau_vlm|^2
    double cross_term = 0.0;               // <delta_res, tau_vlm>
    std::vector<double> norms_sq;          // |B_i|^2
    std::vector<double> subspace_cross;    // <B_i, tau_vlm> / (|B_i| |tau_vlm|), 0 when tau_vlm = 0
};

// delta_res = sum_i (1 - lambda_i) B_i with B_i = s_i u_i v_i^T from the decomposition
distance_result distance_proxy(const layer_decomposition & d, const tensor & tau_vlm, const std::vector<double> & lambda);

// h_i estimated around theta_vlm for the distillation loss against theta_vlm on `x`:
// hvp(B_i) = (grad L(W + eps B_i) - grad L(W - eps B_i)) / 2 eps, h_i = <B_i, hvp(B_i)>.
// cross[i][j] = <B_j, hvp(B_i)> is returned for reporting.
struct curvature_estimate {
    std::vector<double> h;
    std::vector<std::vector<double>> cross;
};

curvature_estimate estimate_curvatures(const model_params & vlm, const layer_decomposition & d, const batch & x,
                                       double eps = 1e-3);

struct regime_row {
    std::size_t subspace_index = 0;
    double h = 0.0;
    double norm_sq = 0.0;
    double alpha = 0.0;
    double margin = 0.0;
    regime reg = regime::suppression;
    double final_gate = 0.0;   // sigmoid(g) after the simulation
};

std::vector<regime_row> regime_map(const quadratic_landscape & land, double lr, std::size_t steps);
std::string regimes_to_csv(const std::vector<regime_row> & rows);

} // namespace frism
