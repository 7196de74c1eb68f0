#pragma once

#include "frism/frism.hpp"
#include "frism/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace frism {

constexpr double k_prob_floor = 1e-12;
constexpr std::size_t k_calibration_size = 512;

enum class optimizer_kind { sgd, adam };

const char * optimizer_name(optimizer_kind k);
optimizer_kind parse_optimizer(const std::string & s);

// alpha lives in frism_config; everything about the optimization loop lives here
struct train_config {
    optimizer_kind optimizer = optimizer_kind::adam;
    double learning_rate = 0.01;
    std::size_t steps = 500;
    std::size_t batch_size = 64;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;         // calibration stream
    std::size_t log_every = 50;
    bool early_stop = false;        // stop when |total(t) - total(t-50)| < 1e-6
    std::size_t early_stop_window = 50;
    double early_stop_tol = 1e-6;

    void validate() const;
};

// mean over rows of KL(p_t || p_s), probabilities floored at 1e-12 before the log
double kl_divergence(const std::vector<double> & p_teacher, const std::vector<double> & p_student, std::size_t classes);

double distill_loss(const model_params & teacher, const model_params & student, const batch & x);

// -sum |sigmoid(g) * s|^2 divided by the normalizer frozen at decomposition time
double inject_loss(const subspace_decomposition & d, const gate_set & gates);
double inject_loss(const subspace_decomposition & d, const std::map<std::string, std::vector<double>> & expanded_gates);

double total_loss(double distill, double inject, double alpha);

struct objective_value {
    double distill = 0.0;
    double inject = 0.0;
    double total = 0.0;
    std::map<std::string, std::vector<double>> grad;   // gate-shaped (length 1 per layer for scalar_gate)
};

// Distillation against theta_vlm plus alpha * injection, evaluated in double with the
// merged weights built in double. `g` holds gate-shaped values (not expanded).
objective_value evaluate_objective(const model_params & vlm, const subspace_decomposition & d, gate_variant variant,
                                   const std::map<std::string, std::vector<double>> & g, const frism_config & cfg,
                                   const batch & x, bool with_grad);

std::map<std::string, std::vector<double>> gate_values(const gate_set & gates);

std::map<std::string, std::vector<double>> gate_gradient(const model_params & vlm, const subspace_decomposition & d,
                                                         const gate_set & gates, const frism_config & cfg, const batch & x);

struct train_record {
    std::size_t step = 0;
    double distill = 0.0;
    double inject = 0.0;
    double total = 0.0;
    std::map<std::string, double> gate_mean;   // mean sigmoid(g) per layer
};

struct train_report {
    std::vector<train_record> records;   // logged steps, evaluated on the training batch of that step
    train_record final_state;            // after the last update, on the 512-sample calibration pool
    std::size_t steps_run = 0;
    bool early_stopped = false;
    std::vector<std::size_t> gate_histogram;   // 10 equal bins of sigmoid(g) over [0, 1]
    std::size_t parameter_count = 0;
    double wall_seconds = 0.0;           // not serialized, so reports stay byte-identical

    std::string to_jsonl() const;
};

struct train_result {
    gate_set gates;
    train_report report;
};

// calibration pool = draw 0 of the calibration task; the batch for step t is draw t + 1
batch calibration_pool(const synthetic_task & calibration);

train_result train_gates(const model_params & vlm, const subspace_decomposition & d, const train_config & tcfg,
                         const frism_config & fcfg, const synthetic_task & calibration);

double mean_gate_activation(const gate_set & gates);

} // namespace frism
