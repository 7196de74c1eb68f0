#include "frism/merge.hpp"

#include "frism/error.hpp"
#include "frism/ops.hpp"
#include "frism/rng.hpp"
#include "frism/svd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace frism {

const tensor & task_vector::at(const std::string & name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw shape_error("task vector has no tensor '" + name + "'");
    }
    return it->second;
}

double task_vector::delta(const std::string & name, std::size_t i) const {
    return static_cast<double>(at(name)[i]) + residual.at(name)[i];
}

std::vector<double> task_vector::deltas(const std::string & name) const {
    const tensor & hi = at(name);
    const tensor & lo = residual.at(name);
    std::vector<double> out(hi.size());
    for (std::size_t i = 0; i < hi.size(); ++i) out[i] = static_cast<double>(hi[i]) + lo[i];
    return out;
}

tensor task_vector::delta_tensor(const std::string & name) const {
    tensor t = at(name);
    const auto d = deltas(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(d[i]);
    return t;
}

double task_vector::norm_sq() const {
    double s = 0.0;
    for (const auto & [name, t] : tensors) {
        for (double d : deltas(name)) s += d * d;
    }
    return s;
}

task_vector compute_task_vector(const model_params & ft, const model_params & base) {
    if (!(ft.arch == base.arch) || ft.tensors.size() != base.tensors.size()) {
        throw incompatible_error("task_vector: architectures differ");
    }
    task_vector tv;
    tv.arch = base.arch;
    tv.source = ft.prov;
    tv.base_id = params_checksum(base);
    for (const auto & [name, b] : base.tensors) {
        const auto it = ft.tensors.find(name);
        if (it == ft.tensors.end() || !it->second.same_shape(b)) {
            throw incompatible_error("task_vector: tensor '" + name + "' missing or reshaped in the fine-tuned model");
        }
        tensor hi = b, lo = b;
        for (std::size_t i = 0; i < b.size(); ++i) {
            const double d = static_cast<double>(it->second[i]) - b[i];
            hi[i] = static_cast<float>(d);
            lo[i] = static_cast<float>(d - hi[i]);
        }
        tv.tensors.emplace(name, std::move(hi));
        tv.residual.emplace(name, std::move(lo));
    }
    return tv;
}

void check_compatible(const model_params & base, const task_vector & tau) {
    if (!(base.arch == tau.arch)) {
        throw incompatible_error("task vector architecture differs from the base model");
    }
    if (tau.base_id != params_checksum(base)) {
        throw incompatible_error("task vector was computed against a different base model");
    }
    for (const auto & [name, b] : base.tensors) {
        if (!tau.at(name).same_shape(b)) {
            throw incompatible_error("task vector tensor '" + name + "' has the wrong shape");
        }
    }
}

static model_params merged_copy(const model_params & base) {
    model_params out = base;
    out.prov = provenance::merged;
    return out;
}

model_params merge_task_arithmetic(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm,
                                   double lambda_vlm, double lambda_lrm) {
    check_compatible(base, tau_vlm);
    check_compatible(base, tau_lrm);
    model_params out = merged_copy(base);
    for (auto & [name, t] : out.tensors) {
        const tensor & b = base.at(name);
        const auto dv = tau_vlm.deltas(name);
        const auto dl = tau_lrm.deltas(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            double r = b[i];
            r += lambda_vlm * dv[i];
            r += lambda_lrm * dl[i];
            t[i] = static_cast<float>(r);
        }
    }
    return out;
}

model_params merge_layer_wise(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm,
                              const std::map<std::string, double> & lambda_vlm,
                              const std::map<std::string, double> & lambda_lrm) {
    check_compatible(base, tau_vlm);
    check_compatible(base, tau_lrm);
    const auto layers = base.arch.dense_layers();
    for (const auto * m : {&lambda_vlm, &lambda_lrm}) {
        for (const auto & [layer, v] : *m) {
            if (std::find(layers.begin(), layers.end(), layer) == layers.end()) {
                throw config_error("layer-wise coefficient for unknown layer '" + layer + "'");
            }
            if (!std::isfinite(v)) {
                throw config_error("layer-wise coefficient for '" + layer + "' is not finite");
            }
        }
    }
    model_params out = merged_copy(base);
    for (auto & [name, t] : out.tensors) {
        const std::string layer = dense_layer_of(name);
        const auto iv = lambda_vlm.find(layer);
        const auto il = lambda_lrm.find(layer);
        double lv = 1.0, ll = 0.0;   // theta_vlm for unlisted frozen layers
        if (iv != lambda_vlm.end() && il != lambda_lrm.end()) {
            lv = iv->second;
            ll = il->second;
        } else if (!base.arch.is_frozen(layer)) {
            throw config_error("missing layer-wise coefficient for merged layer '" + layer + "'");
        } else if (iv != lambda_vlm.end() || il != lambda_lrm.end()) {
            throw config_error("frozen layer '" + layer + "' needs both coefficients or none");
        }
        const tensor & b = base.at(name);
        const auto dv = tau_vlm.deltas(name);
        const auto dl = tau_lrm.deltas(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            double r = b[i];
            r += lv * dv[i];
            r += ll * dl[i];
            t[i] = static_cast<float>(r);
        }
    }
    return out;
}

std::vector<bool> ties_trim_mask(const std::vector<double> & v, double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw range_error("ties density must be in (0, 1], got " + std::to_string(density));
    }
    const std::size_t n = v.size();
    const auto keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::fabs(v[a]) > std::fabs(v[b]); });
    std::vector<bool> mask(n, false);
    for (std::size_t k = 0; k < std::min(keep, n); ++k) mask[idx[k]] = true;
    return mask;
}

std::vector<double> ties_combine(const std::vector<std::vector<double>> & vectors, double density) {
    if (vectors.empty()) {
        throw config_error("ties needs at least one task vector");
    }
    const std::size_t n = vectors[0].size();
    std::vector<std::vector<double>> kept;
    for (const auto & v : vectors) {
        if (v.size() != n) {
            throw shape_error("ties: vectors differ in length");
        }
        const auto mask = ties_trim_mask(v, density);
        std::vector<double> t(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) t[i] = v[i];
        }
        kept.push_back(std::move(t));
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (const auto & t : kept) total += t[i];
        if (total == 0.0) continue;
        const bool positive = total > 0.0;
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto & t : kept) {
            if ((positive && t[i] > 0.0) || (!positive && t[i] < 0.0)) {
                sum += t[i];
                ++count;
            }
        }
        out[i] = count ? sum / static_cast<double>(count) : 0.0;
    }
    return out;
}

model_params ties_merge(const model_params & base, const std::vector<task_vector> & vectors, double density, double lambda) {
    if (vectors.empty()) {
        throw config_error("ties needs at least one task vector");
    }
    for (const auto & v : vectors) check_compatible(base, v);
    model_params out = merged_copy(base);
    for (auto & [name, t] : out.tensors) {
        const tensor & b = base.at(name);
        std::vector<std::vector<double>> ds;
        for (const auto & v : vectors) ds.push_back(v.deltas(name));
        if (base.arch.is_frozen(dense_layer_of(name))) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                double r = b[i];
                for (const auto & d : ds) r += d[i];
                t[i] = static_cast<float>(r);
            }
            continue;
        }
        const auto merged = ties_combine(ds, density);
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<float>(static_cast<double>(b[i]) + lambda * merged[i]);
        }
    }
    return out;
}

task_vector dare(const task_vector & tau, double drop, std::uint64_t seed) {
    if (!(drop >= 0.0 && drop < 1.0)) {
        throw range_error("dare drop rate must be in [0, 1), got " + std::to_string(drop));
    }
    task_vector out = tau;
    if (drop == 0.0) {
        return out;
    }
    const double keep_scale = 1.0 / (1.0 - drop);
    rng r(seed, 0);
    for (auto & [name, hi] : out.tensors) {
        if (tau.arch.is_frozen(dense_layer_of(name))) continue;
        tensor & lo = out.residual.at(name);
        for (std::size_t i = 0; i < hi.size(); ++i) {
            if (r.uniform() < drop) {
                hi[i] = 0.0f;
                lo[i] = 0.0f;
            } else {
                hi[i] = static_cast<float>(hi[i] * keep_scale);
                lo[i] = static_cast<float>(lo[i] * keep_scale);
            }
        }
    }
    return out;
}

ip_result ip_coefficient(const std::vector<double> & sigma_vlm, const std::vector<double> & sigma_lrm, double lambda_warn) {
    const double num = std::accumulate(sigma_vlm.begin(), sigma_vlm.end(), 0.0);
    const double den = std::accumulate(sigma_lrm.begin(), sigma_lrm.end(), 0.0);
    if (den == 0.0) {
        throw degenerate_error("ip coefficient: LRM singular values sum to zero");
    }
    ip_result r;
    r.lambda = num / den;
    r.flagged = r.lambda > lambda_warn;
    return r;
}

static std::vector<double> singular_values(const tensor & t) {
    const svd_result d = svd(t);
    return std::vector<double>(d.s.values().begin(), d.s.values().end());
}

ip_merge_result merge_ip(const model_params & base, const task_vector & tau_vlm, const task_vector & tau_lrm, double lambda_warn) {
    check_compatible(base, tau_vlm);
    check_compatible(base, tau_lrm);
    ip_merge_result res;
    res.merged = merged_copy(base);
    for (const auto & layer : base.arch.dense_layers()) {
        double lambda = 0.0;
        if (!base.arch.is_frozen(layer)) {
            const ip_result c = ip_coefficient(singular_values(tau_vlm.delta_tensor(layer + ".w")),
                                               singular_values(tau_lrm.delta_tensor(layer + ".w")), lambda_warn);
            res.coefficients[layer] = c;
            lambda = c.lambda;
        }
        for (const std::string suffix : {".w", ".b"}) {
            const std::string name = layer + suffix;
            tensor & t = res.merged.at(name);
            const tensor & b = base.at(name);
            const auto dv = tau_vlm.deltas(name);
            const auto dl = tau_lrm.deltas(name);
            for (std::size_t i = 0; i < t.size(); ++i) {
                double r = b[i];
                r += dv[i];
                r += lambda * dl[i];
                t[i] = static_cast<float>(r);
            }
        }
    }
    return res;
}

static std::vector<std::string> resolve_layer_set(const arch_spec & arch, const std::vector<std::string> & layer_set) {
    if (layer_set.empty()) return arch.merged_layers();
    for (const auto & l : layer_set) {
        arch.layer_index(l);
        if (arch.is_frozen(l)) {
            throw config_error("sweep layer '" + l + "' is frozen");
        }
    }
    return layer_set;
}

static std::string join_layers(const std::vector<std::string> & layers) {
    std::string s;
    for (const auto & l : layers) s += (s.empty() ? "" : "+") + l;
    return s;
}

model_params rank_injection(const model_params & vlm, const task_vector & tau_lrm, std::size_t rank, double lambda,
                            const std::vector<std::string> & layer_set) {
    model_params out = merged_copy(vlm);
    for (const auto & layer : resolve_layer_set(vlm.arch, layer_set)) {
        const tensor tau = tau_lrm.delta_tensor(layer + ".w");
        const svd_result d = svd(tau);
        const std::size_t r = numerical_rank(d);
        if (rank < 1 || rank > r) {
            throw range_error("rank " + std::to_string(rank) + " outside [1, " + std::to_string(r) + "] for layer '" + layer + "'");
        }
        const std::size_t k = rank - 1;
        const double sn = d.s[k];
        const double coef = lambda * frobenius_norm_sq(tau) / (sn * sn) * sn;   // applied to u_n v_n^T
        tensor & w = out.at(layer + ".w");
        for (std::size_t i = 0; i < w.rows(); ++i) {
            for (std::size_t j = 0; j < w.cols(); ++j) {
                w(i, j) = static_cast<float>(w(i, j) + coef * static_cast<double>(d.u(i, k)) * d.vt(k, j));
            }
        }
    }
    return out;
}

std::vector<sweep_row> rank_injection_sweep(const model_params & vlm, const task_vector & tau_lrm,
                                            const std::vector<std::size_t> & ranks, const std::vector<double> & lambdas,
                                            const model_evaluator & eval, const std::vector<std::string> & layer_set) {
    const auto layers = resolve_layer_set(vlm.arch, layer_set);
    const std::string label = join_layers(layers);
    std::vector<sweep_row> rows;
    for (std::size_t n : ranks) {
        for (double lambda : lambdas) {
            const auto [sv, sr] = eval(rank_injection(vlm, tau_lrm, n, lambda, layers));
            rows.push_back({n, lambda, label, sv, sr});
        }
    }
    return rows;
}

std::string sweep_to_csv(const std::vector<sweep_row> & rows) {
    std::string out = "rank,lambda,layer_set,score_taskV,score_taskR\n";
    char buf[256];
    for (const auto & r : rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g,%s,%.10g,%.10g\n", r.rank, r.lambda, r.layer_set.c_str(), r.score_task_v,
                      r.score_task_r);
        out += buf;
    }
    return out;
}

double sweep_best_lambda(const std::vector<sweep_row> & rows, std::size_t rank) {
    double best = -1.0, arg = 0.0;
    bool found = false;
    for (const auto & r : rows) {
        if (r.rank != rank) continue;
        if (!found || r.score_task_r > best) {
            best = r.score_task_r;
            arg = r.lambda;
            found = true;
        }
    }
    if (!found) {
        throw range_error("sweep has no rows for rank " + std::to_string(rank));
    }
    return arg;
}

} // namespace frism
