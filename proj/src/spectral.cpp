#include "frism/spectral.hpp"

#include "frism/error.hpp"
#include "frism/ops.hpp"
#include "frism/trainer.hpp"

#include <cmath>
#include <cstdio>

namespace frism {

void quadratic_landscape::validate() const {
    if (curvatures.size() != subspace_norms_sq.size()) {
        throw config_error("landscape: curvature and norm vectors differ in length");
    }
    for (std::size_t i = 0; i < curvatures.size(); ++i) {
        if (!(curvatures[i] >= 0.0)) throw config_error("landscape: curvature " + std::to_string(i) + " is negative");
        if (!(subspace_norms_sq[i] > 0.0)) throw config_error("landscape: norm " + std::to_string(i) + " is not positive");
    }
    if (!(alpha >= 0.0)) throw config_error("landscape: alpha must be nonnegative");
    if (!(lambda_lrm > 0.0)) throw config_error("landscape: lambda_lrm must be positive");
}

const char * regime_name(regime r) {
    return r == regime::suppression ? "suppression" : "injection";
}

static double margin_of(const quadratic_landscape & land, std::size_t i) {
    return land.curvatures[i] - 2.0 * land.alpha * land.subspace_norms_sq[i];
}

std::vector<double> closed_form_gradient(const quadratic_landscape & land, const std::vector<double> & lambda) {
    land.validate();
    if (lambda.size() != land.size()) {
        throw shape_error("closed_form_gradient: lambda has the wrong length");
    }
    std::vector<double> g(lambda.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = margin_of(land, i) * lambda[i];
    return g;
}

double decoupled_loss(const quadratic_landscape & land, const std::vector<double> & lambda) {
    if (lambda.size() != land.size()) {
        throw shape_error("decoupled_loss: lambda has the wrong length");
    }
    double l = 0.0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        const double l2 = lambda[i] * lambda[i];
        l += 0.5 * l2 * land.curvatures[i] - land.alpha * l2 * land.subspace_norms_sq[i];
    }
    return l;
}

regime_prediction classify_regimes(const quadratic_landscape & land) {
    land.validate();
    regime_prediction p;
    for (std::size_t i = 0; i < land.size(); ++i) {
        const double m = margin_of(land, i);
        p.margins.push_back(m);
        p.regimes.push_back(m > 0.0 ? regime::suppression : regime::injection);
    }
    return p;
}

std::vector<std::vector<double>> simulate_gate_dynamics(const quadratic_landscape & land, const std::vector<double> & g_init,
                                                        double lr, std::size_t steps) {
    land.validate();
    if (!(lr > 0.0) || steps == 0) {
        throw config_error("simulate_gate_dynamics: lr and steps must be positive");
    }
    if (g_init.size() != land.size()) {
        throw shape_error("simulate_gate_dynamics: g_init has the wrong length");
    }
    std::vector<double> g = g_init;
    std::vector<std::vector<double>> traj;
    traj.reserve(steps + 1);
    auto record = [&] {
        std::vector<double> s(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) s[i] = sigmoid(g[i]);
        traj.push_back(std::move(s));
    };
    record();
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double lam = land.lambda_lrm * sigmoid(g[i]);
            const double dl = margin_of(land, i) * lam;              // dL/dlambda_i
            g[i] -= lr * dl * land.lambda_lrm * sigmoid_grad(g[i]);  // chain through the sigmoid
            if (!(std::fabs(g[i]) <= k_gate_divergence)) {
                throw domain_error("gate dynamics diverged at step " + std::to_string(t) + ", subspace " + std::to_string(i) +
                                   ": g = " + std::to_string(g[i]));
            }
        }
        record();
    }
    return traj;
}

distance_result distance_proxy(const layer_decomposition & d, const tensor & tau_vlm, const std::vector<double> & lambda) {
    const std::size_t m = d.u.rows(), n = d.vt.cols();
    if (tau_vlm.ndim() != 2 || tau_vlm.rows() != m || tau_vlm.cols() != n) {
        throw shape_error("distance_proxy: tau_vlm " + shape_str(tau_vlm.shape()) + " does not match layer '" + d.layer + "'");
    }
    if (lambda.size() != d.rank) {
        throw shape_error("distance_proxy: lambda length " + std::to_string(lambda.size()) + " != rank " + std::to_string(d.rank));
    }
    const double tau_norm = frobenius_norm(tau_vlm);
    distance_result r;
    std::vector<double> res(m * n, 0.0);
    std::vector<double> b(m * n);
    for (std::size_t k = 0; k < d.rank; ++k) {
        double nsq = 0.0, dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double v = static_cast<double>(d.s[k]) * d.u(i, k) * d.vt(k, j);
                b[i * n + j] = v;
                nsq += v * v;
                dot += v * tau_vlm(i, j);
                res[i * n + j] += (1.0 - lambda[k]) * v;
            }
        }
        r.norms_sq.push_back(nsq);
        const double denom = std::sqrt(nsq) * tau_norm;
        r.subspace_cross.push_back(denom > 0.0 ? dot / denom : 0.0);
    }
    for (std::size_t i = 0; i < m * n; ++i) {
        const double t = tau_vlm[i];
        const double diff = res[i] - t;
        r.j_value += diff * diff;
        r.cross_term += res[i] * t;
    }
    return r;
}

// gradient of KL(vlm || net) w.r.t. the weight of `layer`, with that weight replaced by w
static std::vector<double> kl_weight_grad(const network & teacher, const forward_trace & tt, const std::string & layer,
                                          const std::vector<double> & w, const batch & x) {
    network student = teacher;
    student.layer(layer).w = w;
    const forward_trace st = run_forward(student, x.inputs);
    const std::size_t classes = teacher.layers.back().out;
    const double inv_n = 1.0 / static_cast<double>(st.n);
    std::vector<double> dprobs(st.probs.size());
    for (std::size_t i = 0; i < dprobs.size(); ++i) {
        dprobs[i] = st.probs[i] > k_prob_floor ? -tt.probs[i] / st.probs[i] * inv_n : 0.0;
    }
    const auto grads = run_backward(student, st, softmax_backward(st.probs, dprobs, classes));
    return grads[teacher.arch.layer_index(layer)].w;
}

curvature_estimate estimate_curvatures(const model_params & vlm, const layer_decomposition & d, const batch & x, double eps) {
    const network teacher = network::from_params(vlm);
    const forward_trace tt = run_forward(teacher, x.inputs);
    const dense_layer & base = teacher.layer(d.layer);
    const std::size_t m = d.u.rows(), n = d.vt.cols();
    if (base.out != m || base.in != n) {
        throw shape_error("estimate_curvatures: decomposition does not match layer '" + d.layer + "'");
    }
    std::vector<std::vector<double>> dirs(d.rank, std::vector<double>(m * n));
    for (std::size_t k = 0; k < d.rank; ++k) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) dirs[k][i * n + j] = static_cast<double>(d.s[k]) * d.u(i, k) * d.vt(k, j);
        }
    }
    curvature_estimate est;
    est.cross.assign(d.rank, std::vector<double>(d.rank, 0.0));
    for (std::size_t k = 0; k < d.rank; ++k) {
        std::vector<double> wp = base.w, wm = base.w;
        for (std::size_t i = 0; i < m * n; ++i) {
            wp[i] += eps * dirs[k][i];
            wm[i] -= eps * dirs[k][i];
        }
        const auto gp = kl_weight_grad(teacher, tt, d.layer, wp, x);
        const auto gm = kl_weight_grad(teacher, tt, d.layer, wm, x);
        for (std::size_t j = 0; j < d.rank; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < m * n; ++i) acc += dirs[j][i] * (gp[i] - gm[i]) / (2.0 * eps);
            est.cross[k][j] = acc;
        }
        est.h.push_back(est.cross[k][k]);
    }
    return est;
}

std::vector<regime_row> regime_map(const quadratic_landscape & land, double lr, std::size_t steps) {
    const regime_prediction pred = classify_regimes(land);
    const auto traj = simulate_gate_dynamics(land, std::vector<double>(land.size(), 0.0), lr, steps);
    std::vector<regime_row> rows;
    for (std::size_t i = 0; i < land.size(); ++i) {
        rows.push_back({i, land.curvatures[i], land.subspace_norms_sq[i], land.alpha, pred.margins[i], pred.regimes[i],
                        traj.back()[i]});
    }
    return rows;
}

std::string regimes_to_csv(const std::vector<regime_row> & rows) {
    std::string out = "subspace_index,h,norm_sq,alpha,margin,regime,final_gate\n";
    char buf[320];
    for (const auto & r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%s,%.10g\n", r.subspace_index, r.h, r.norm_sq, r.alpha,
                      r.margin, regime_name(r.reg), r.final_gate);
        out += buf;
    }
    return out;
}

} // namespace frism
