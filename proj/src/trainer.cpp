#include "frism/trainer.hpp"

#include "frism/error.hpp"
#include "frism/ops.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace frism {

using nlohmann::json;

const char * optimizer_name(optimizer_kind k) {
    return k == optimizer_kind::adam ? "adam" : "sgd";
}

optimizer_kind parse_optimizer(const std::string & s) {
    if (s == "adam") return optimizer_kind::adam;
    if (s == "sgd") return optimizer_kind::sgd;
    throw config_error("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void train_config::validate() const {
    if (batch_size == 0) throw config_error("train.batch must be positive");
    if (!(learning_rate > 0.0)) throw config_error("train.lr must be positive");
    if (log_every == 0) throw config_error("train.log_every must be positive");
    if (early_stop && early_stop_window == 0) throw config_error("train.early_stop_window must be positive");
}

double kl_divergence(const std::vector<double> & p_teacher, const std::vector<double> & p_student, std::size_t classes) {
    if (p_teacher.size() != p_student.size() || classes == 0 || p_teacher.size() % classes != 0) {
        throw shape_error("kl_divergence: shape mismatch");
    }
    const std::size_t n = p_teacher.size() / classes;
    double total = 0.0;
    for (std::size_t i = 0; i < p_teacher.size(); ++i) {
        const double pt = std::max(p_teacher[i], k_prob_floor);
        const double ps = std::max(p_student[i], k_prob_floor);
        total += p_teacher[i] * (std::log(pt) - std::log(ps));
    }
    return total / static_cast<double>(n);
}

double distill_loss(const model_params & teacher, const model_params & student, const batch & x) {
    if (!(teacher.arch == student.arch)) {
        throw shape_error("distill_loss: teacher and student architectures differ");
    }
    const network tn = network::from_params(teacher);
    const network sn = network::from_params(student);
    const forward_trace tt = run_forward(tn, x.inputs);
    const forward_trace st = run_forward(sn, x.inputs);
    return kl_divergence(tt.probs, st.probs, tn.layers.back().out);
}

double inject_loss(const subspace_decomposition & d, const std::map<std::string, std::vector<double>> & g) {
    if (d.inject_normalizer == 0.0) {
        throw degenerate_error("injection loss normalizer is zero (all singular values vanish); train with alpha = 0");
    }
    double raw = 0.0;
    for (const auto & [layer, ld] : d.layers) {
        const auto & gl = g.at(layer);
        for (std::size_t i = 0; i < ld.rank; ++i) {
            const double e = sigmoid(gl[i]) * ld.s[i];
            raw -= e * e;
        }
    }
    return raw / d.inject_normalizer;
}

double inject_loss(const subspace_decomposition & d, const gate_set & gates) {
    return inject_loss(d, gates.expanded(d));
}

double total_loss(double distill, double inject, double alpha) {
    return distill + alpha * inject;
}

std::map<std::string, std::vector<double>> gate_values(const gate_set & gates) {
    std::map<std::string, std::vector<double>> out;
    for (const auto & [layer, v] : gates.g) out.emplace(layer, std::vector<double>(v.begin(), v.end()));
    return out;
}

static std::map<std::string, std::vector<double>> expand(const subspace_decomposition & d, gate_variant variant,
                                                         const std::map<std::string, std::vector<double>> & g) {
    std::map<std::string, std::vector<double>> out;
    for (const auto & [layer, ld] : d.layers) {
        const auto it = g.find(layer);
        const std::size_t want = variant == gate_variant::scalar_gate ? 1 : ld.rank;
        if (it == g.end() || it->second.size() != want) {
            throw shape_error("gates for layer '" + layer + "' missing or of wrong length");
        }
        std::vector<double> e(ld.rank);
        for (std::size_t i = 0; i < ld.rank; ++i) e[i] = it->second[variant == gate_variant::scalar_gate ? 0 : i];
        out.emplace(layer, std::move(e));
    }
    return out;
}

objective_value evaluate_objective(const model_params & vlm, const subspace_decomposition & d, gate_variant variant,
                                   const std::map<std::string, std::vector<double>> & g, const frism_config & cfg,
                                   const batch & x, bool with_grad) {
    const auto ge = expand(d, variant, g);
    const double lambda = cfg.lambda_lrm;

    const network teacher = network::from_params(vlm);
    network student = teacher;
    for (const auto & [layer, ld] : d.layers) {
        if (ld.degenerate) continue;
        dense_layer & dl = student.layer(layer);
        const auto & gl = ge.at(layer);
        for (std::size_t k = 0; k < ld.rank; ++k) {
            const double c = lambda * sigmoid(gl[k]) * ld.s[k];
            for (std::size_t i = 0; i < dl.out; ++i) {
                const double ci = c * ld.u(i, k);
                double * row = dl.w.data() + i * dl.in;
                for (std::size_t j = 0; j < dl.in; ++j) row[j] += ci * ld.vt(k, j);
            }
        }
    }

    const forward_trace tt = run_forward(teacher, x.inputs);
    const forward_trace st = run_forward(student, x.inputs);
    const std::size_t classes = teacher.layers.back().out;

    objective_value out;
    out.distill = kl_divergence(tt.probs, st.probs, classes);
    out.inject = inject_loss(d, ge);
    out.total = total_loss(out.distill, out.inject, cfg.alpha);
    if (!with_grad) return out;

    // d KL / d p_s = -p_t / (n p_s), zero where the floor is active
    const double inv_n = 1.0 / static_cast<double>(st.n);
    std::vector<double> dprobs(st.probs.size());
    for (std::size_t i = 0; i < dprobs.size(); ++i) {
        dprobs[i] = st.probs[i] > k_prob_floor ? -tt.probs[i] / st.probs[i] * inv_n : 0.0;
    }
    const auto grads = run_backward(student, st, softmax_backward(st.probs, dprobs, classes));

    for (const auto & [layer, ld] : d.layers) {
        const auto & gl = ge.at(layer);
        const std::size_t li = vlm.arch.layer_index(layer);
        const std::vector<double> & gw = grads[li].w;
        const std::size_t m = ld.u.rows(), n = ld.vt.cols();
        std::vector<double> per(ld.rank, 0.0);
        if (!ld.degenerate) {
            std::vector<double> gv(m);
            for (std::size_t k = 0; k < ld.rank; ++k) {
                // u_k^T G v_k
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    const double * row = gw.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += row[j] * ld.vt(k, j);
                    gv[i] = acc;
                }
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += ld.u(i, k) * gv[i];
                const double s = ld.s[k];
                const double sg = sigmoid(gl[k]);
                const double sp = sg * (1.0 - sg);
                per[k] = lambda * s * sp * proj + cfg.alpha * (-2.0 * s * s * sg * sp / d.inject_normalizer);
            }
        }
        if (variant == gate_variant::scalar_gate) {
            double sum = 0.0;
            for (double v : per) sum += v;
            out.grad.emplace(layer, std::vector<double>{sum});
        } else {
            out.grad.emplace(layer, std::move(per));
        }
    }
    return out;
}

std::map<std::string, std::vector<double>> gate_gradient(const model_params & vlm, const subspace_decomposition & d,
                                                         const gate_set & gates, const frism_config & cfg, const batch & x) {
    check_gates(d, gates);
    return evaluate_objective(vlm, d, gates.variant, gate_values(gates), cfg, x, true).grad;
}

static std::map<std::string, double> layer_gate_means(const std::map<std::string, std::vector<double>> & g) {
    std::map<std::string, double> out;
    for (const auto & [layer, v] : g) {
        double s = 0.0;
        for (double x : v) s += sigmoid(x);
        out[layer] = v.empty() ? 0.0 : s / static_cast<double>(v.size());
    }
    return out;
}

double mean_gate_activation(const gate_set & gates) {
    const auto means = layer_gate_means(gate_values(gates));
    if (means.empty()) return 0.0;
    double s = 0.0;
    for (const auto & [layer, m] : means) s += m;
    return s / static_cast<double>(means.size());
}

batch calibration_pool(const synthetic_task & calibration) {
    return calibration.sample_unlabeled(k_calibration_size, 0);
}

static json record_json(const train_record & r) {
    return {
        {"step", r.step},
        {"distill_loss", r.distill},
        {"inject_loss", r.inject},
        {"total_loss", r.total},
        {"gate_mean", r.gate_mean},
    };
}

std::string train_report::to_jsonl() const {
    std::string out;
    for (const auto & r : records) out += record_json(r).dump() + "\n";
    json summary = {
        {"summary", true},
        {"steps_run", steps_run},
        {"early_stopped", early_stopped},
        {"final", record_json(final_state)},
        {"gate_histogram", gate_histogram},
        {"parameter_count", parameter_count},
    };
    out += summary.dump() + "\n";
    return out;
}

train_result train_gates(const model_params & vlm, const subspace_decomposition & d, const train_config & tcfg,
                         const frism_config & fcfg, const synthetic_task & calibration) {
    tcfg.validate();
    fcfg.validate();
    if (!(vlm.arch == d.arch)) {
        throw incompatible_error("train_gates: decomposition was built for a different architecture");
    }
    const auto t_start = std::chrono::steady_clock::now();

    gate_set gates = init_gates(d, fcfg.variant);
    auto g = gate_values(gates);
    std::map<std::string, std::vector<double>> m1, m2;
    for (const auto & [layer, v] : g) {
        m1[layer].assign(v.size(), 0.0);
        m2[layer].assign(v.size(), 0.0);
    }

    train_report rep;
    std::vector<double> totals;
    for (std::size_t t = 0; t < tcfg.steps; ++t) {
        const batch x = calibration.sample_unlabeled(tcfg.batch_size, t + 1);
        const objective_value obj = evaluate_objective(vlm, d, fcfg.variant, g, fcfg, x, true);
        if (!std::isfinite(obj.total) || !std::isfinite(obj.distill) || !std::isfinite(obj.inject)) {
            throw domain_error("non-finite loss at step " + std::to_string(t) + ": distill=" + std::to_string(obj.distill) +
                               " inject=" + std::to_string(obj.inject));
        }
        if (t % tcfg.log_every == 0 || t + 1 == tcfg.steps) {
            rep.records.push_back({t, obj.distill, obj.inject, obj.total, layer_gate_means(g)});
        }
        const double step = static_cast<double>(t + 1);
        for (auto & [layer, v] : g) {
            const auto & gr = obj.grad.at(layer);
            auto & a = m1[layer];
            auto & b = m2[layer];
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (tcfg.optimizer == optimizer_kind::sgd) {
                    v[i] -= tcfg.learning_rate * gr[i];
                    continue;
                }
                a[i] = tcfg.beta1 * a[i] + (1.0 - tcfg.beta1) * gr[i];
                b[i] = tcfg.beta2 * b[i] + (1.0 - tcfg.beta2) * gr[i] * gr[i];
                const double mh = a[i] / (1.0 - std::pow(tcfg.beta1, step));
                const double vh = b[i] / (1.0 - std::pow(tcfg.beta2, step));
                v[i] -= tcfg.learning_rate * mh / (std::sqrt(vh) + tcfg.eps);
            }
        }
        rep.steps_run = t + 1;
        totals.push_back(obj.total);
        if (tcfg.early_stop && totals.size() > tcfg.early_stop_window) {
            const double delta = totals.back() - totals[totals.size() - 1 - tcfg.early_stop_window];
            if (std::fabs(delta) < tcfg.early_stop_tol) {
                rep.early_stopped = true;
                break;
            }
        }
    }

    for (auto & [layer, v] : gates.g) {
        const auto & src = g.at(layer);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(src[i]);
    }
    const auto gf = gate_values(gates);
    const batch pool = calibration_pool(calibration);
    const objective_value fin = evaluate_objective(vlm, d, fcfg.variant, gf, fcfg, pool, false);
    rep.final_state = {rep.steps_run, fin.distill, fin.inject, fin.total, layer_gate_means(gf)};
    rep.gate_histogram.assign(10, 0);
    for (const auto & [layer, v] : gates.g) {
        for (float x : v) {
            const auto bin = static_cast<std::size_t>(std::min(9.0, std::floor(sigmoid(x) * 10.0)));
            ++rep.gate_histogram[bin];
        }
    }
    rep.parameter_count = gates.parameter_count();
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return {std::move(gates), std::move(rep)};
}

} // namespace frism
