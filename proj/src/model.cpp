#include "frism/model.hpp"

#include "frism/error.hpp"
#include "frism/ops.hpp"
#include "frism/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

namespace frism {

const char * provenance_name(provenance p) {
    switch (p) {
        case provenance::base:   return "base";
        case provenance::vlm:    return "vlm";
        case provenance::lrm:    return "lrm";
        case provenance::merged: return "merged";
    }
    return "unknown";
}

provenance parse_provenance(const std::string & s) {
    if (s == "base")   return provenance::base;
    if (s == "vlm")    return provenance::vlm;
    if (s == "lrm")    return provenance::lrm;
    if (s == "merged") return provenance::merged;
    throw format_error("unknown provenance '" + s + "'");
}

std::string dense_layer_of(const std::string & tensor_name) {
    const auto dot = tensor_name.rfind('.');
    return dot == std::string::npos ? tensor_name : tensor_name.substr(0, dot);
}

std::vector<std::string> arch_spec::dense_layers() const {
    std::vector<std::string> names = {"adapter"};
    for (std::size_t i = 1; i <= num_hidden_layers; ++i) {
        names.push_back("layer" + std::to_string(i));
    }
    return names;
}

std::vector<std::string> arch_spec::merged_layers() const {
    std::vector<std::string> out;
    for (const auto & name : dense_layers()) {
        if (!is_frozen(name)) out.push_back(name);
    }
    return out;
}

bool arch_spec::is_frozen(const std::string & dense_layer) const {
    for (const auto & f : frozen_layers) {
        if (f == dense_layer || dense_layer_of(f) == dense_layer) return true;
    }
    return false;
}

std::size_t arch_spec::layer_index(const std::string & dense_layer) const {
    const auto names = dense_layers();
    const auto it = std::find(names.begin(), names.end(), dense_layer);
    if (it == names.end()) {
        throw config_error("unknown layer '" + dense_layer + "'");
    }
    return static_cast<std::size_t>(it - names.begin());
}

std::vector<std::size_t> arch_spec::weight_shape(const std::string & dense_layer) const {
    const std::size_t idx = layer_index(dense_layer);
    const std::size_t in  = idx == 0 ? input_dim : hidden_dim;
    const std::size_t out = idx == num_hidden_layers ? output_classes : hidden_dim;
    return {out, in};
}

void arch_spec::validate() const {
    if (input_dim == 0 || hidden_dim == 0 || output_classes == 0) {
        throw config_error("arch: dimensions must be positive");
    }
    if (activation != "tanh") {
        throw config_error("arch: unsupported activation '" + activation + "'");
    }
    const auto names = dense_layers();
    for (const auto & f : frozen_layers) {
        const std::string layer = dense_layer_of(f);
        const bool known_layer = std::find(names.begin(), names.end(), f) != names.end();
        const bool known_tensor = (f == layer + ".w" || f == layer + ".b") &&
                                  std::find(names.begin(), names.end(), layer) != names.end();
        if (!known_layer && !known_tensor) {
            throw config_error("arch: frozen layer '" + f + "' is not a layer of this architecture");
        }
    }
}

const tensor & model_params::at(const std::string & name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw shape_error("model has no tensor '" + name + "'");
    }
    return it->second;
}

tensor & model_params::at(const std::string & name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw shape_error("model has no tensor '" + name + "'");
    }
    return it->second;
}

void model_params::validate() const {
    arch.validate();
    std::set<std::string> expected;
    for (const auto & layer : arch.dense_layers()) {
        const auto ws = arch.weight_shape(layer);
        const std::vector<std::size_t> bs = {ws[0]};
        const tensor & w = at(layer + ".w");
        const tensor & b = at(layer + ".b");
        if (w.shape() != ws) {
            throw shape_error("tensor '" + layer + ".w' has shape " + shape_str(w.shape()) + ", expected " + shape_str(ws));
        }
        if (b.shape() != bs) {
            throw shape_error("tensor '" + layer + ".b' has shape " + shape_str(b.shape()) + ", expected " + shape_str(bs));
        }
        require_finite(w, layer + ".w");
        require_finite(b, layer + ".b");
        expected.insert(layer + ".w");
        expected.insert(layer + ".b");
    }
    for (const auto & [name, t] : tensors) {
        if (!expected.count(name)) {
            throw shape_error("unexpected tensor '" + name + "' for this architecture");
        }
    }
}

model_params zero_params(const arch_spec & arch) {
    arch.validate();
    model_params m;
    m.arch = arch;
    for (const auto & layer : arch.dense_layers()) {
        const auto ws = arch.weight_shape(layer);
        m.tensors.emplace(layer + ".w", tensor(ws));
        m.tensors.emplace(layer + ".b", tensor({ws[0]}));
    }
    return m;
}

// Weights ~ N(0, 1/fan_in), biases ~ 0.3 N(0, 1), drawn layer by layer in forward
// order (weights row-major, then biases). The adapter is then split by modality:
// its first half of units only sees the visual inputs and the second half only
// the reasoning inputs, rescaled by sqrt(2) to keep the fan-in variance.
model_params init_params(const arch_spec & arch, std::uint64_t seed) {
    model_params m = zero_params(arch);
    rng r(seed, 0);
    for (const auto & layer : arch.dense_layers()) {
        tensor & w = m.at(layer + ".w");
        tensor & b = m.at(layer + ".b");
        const double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (float & v : w.data()) v = static_cast<float>(sd * r.normal());
        for (float & v : b.data()) v = static_cast<float>(0.3 * r.normal());
    }
    tensor & a = m.at("adapter.w");
    const std::size_t half_out = a.rows() / 2, half_in = arch.input_dim / 2;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const bool keep = (i < half_out) == (j < half_in);
            a(i, j) = keep ? static_cast<float>(std::sqrt(2.0) * a(i, j)) : 0.0f;
        }
    }
    return m;
}

bool bitwise_equal(const model_params & a, const model_params & b) {
    if (!(a.arch == b.arch) || a.tensors.size() != b.tensors.size()) {
        return false;
    }
    for (const auto & [name, t] : a.tensors) {
        const auto it = b.tensors.find(name);
        if (it == b.tensors.end() || !bitwise_equal(t, it->second)) return false;
    }
    return true;
}

std::string params_checksum(const model_params & m) {
    EVP_MD_CTX * ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    for (const auto & [name, t] : m.tensors) {
        EVP_DigestUpdate(ctx, name.data(), name.size() + 1);
        for (std::size_t d : t.shape()) {
            const std::uint64_t d64 = d;
            EVP_DigestUpdate(ctx, &d64, sizeof(d64));
        }
        EVP_DigestUpdate(ctx, t.data().data(), t.size() * sizeof(float));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char * hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

// ---- tasks ----

const char * task_kind_name(task_kind k) {
    switch (k) {
        case task_kind::task_v:  return "taskV";
        case task_kind::task_r:  return "taskR";
        case task_kind::generic: return "generic";
    }
    return "unknown";
}

task_kind parse_task_kind(const std::string & s) {
    if (s == "taskV")   return task_kind::task_v;
    if (s == "taskR")   return task_kind::task_r;
    if (s == "generic") return task_kind::generic;
    throw config_error("unknown task '" + s + "'");
}

namespace {

constexpr std::size_t k_task_classes = 4;
constexpr std::uint64_t k_rule_seed = 0x7a5c0de;

struct task_rules {
    std::vector<double> a;   // half x 4
    std::vector<double> n;   // half x 4
};

task_rules make_rules(std::size_t half) {
    rng r(k_rule_seed, half);
    task_rules t;
    t.a.resize(half * k_task_classes);
    t.n.resize(half * k_task_classes);
    for (double & v : t.a) v = r.normal();
    for (double & v : t.n) v = r.normal();
    return t;
}

int linear_rule(const float * xv, std::size_t half, const std::vector<double> & a, const std::vector<double> * noise) {
    double best = -1e300;
    int arg = 0;
    for (std::size_t c = 0; c < k_task_classes; ++c) {
        double z = 0.0;
        for (std::size_t j = 0; j < half; ++j) {
            double coef = a[j * k_task_classes + c];
            if (noise) coef += 0.8 * (*noise)[j * k_task_classes + c];
            z += xv[j] * coef;
        }
        if (z > best) {
            best = z;
            arg = static_cast<int>(c);
        }
    }
    return arg;
}

int reasoning_rule(const float * xr) {
    return 2 * (xr[0] * xr[1] > 0 ? 1 : 0) + (xr[2] * xr[3] > 0 ? 1 : 0);
}

} // namespace

batch synthetic_task::sample(std::size_t n, std::uint64_t draw) const {
    if (input_dim < 8 || input_dim % 2 != 0) {
        throw config_error("synthetic tasks need an even input_dim >= 8, got " + std::to_string(input_dim));
    }
    if (n == 0) {
        throw shape_error("sample: n must be positive");
    }
    const std::size_t half = input_dim / 2;
    const task_rules rules = make_rules(half);
    rng r(seed, draw * 3 + static_cast<std::uint64_t>(kind));

    batch out;
    out.inputs = tensor({n, input_dim});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        float * x = out.inputs.data().data() + i * input_dim;
        bool visual = kind == task_kind::task_v;
        if (kind == task_kind::generic) {
            visual = r.uniform() < 0.5;
        }
        float * active = visual ? x : x + half;
        for (std::size_t j = 0; j < half; ++j) {
            active[j] = static_cast<float>(r.uniform(-1.0, 1.0));
        }
        int y = 0;
        if (kind == task_kind::generic) {
            y = visual ? linear_rule(x, half, rules.a, &rules.n) : reasoning_rule(x + half);
            if (r.uniform() < 0.5) {
                y = static_cast<int>(r.below(k_task_classes));
            }
        } else {
            y = visual ? linear_rule(x, half, rules.a, nullptr) : reasoning_rule(x + half);
        }
        labels[i] = y;
    }
    out.labels = std::move(labels);
    return out;
}

batch synthetic_task::sample_unlabeled(std::size_t n, std::uint64_t draw) const {
    batch b = sample(n, draw);
    b.labels.reset();
    return b;
}

// ---- network ----

network network::from_params(const model_params & m) {
    network net;
    net.arch = m.arch;
    for (const auto & name : m.arch.dense_layers()) {
        const tensor & w = m.at(name + ".w");
        const tensor & b = m.at(name + ".b");
        dense_layer l;
        l.name = name;
        l.out = w.rows();
        l.in = w.cols();
        l.w.assign(w.values().begin(), w.values().end());
        l.b.assign(b.values().begin(), b.values().end());
        net.layers.push_back(std::move(l));
    }
    return net;
}

dense_layer & network::layer(const std::string & name) {
    for (auto & l : layers) {
        if (l.name == name) return l;
    }
    throw shape_error("network has no layer '" + name + "'");
}

const dense_layer & network::layer(const std::string & name) const {
    for (const auto & l : layers) {
        if (l.name == name) return l;
    }
    throw shape_error("network has no layer '" + name + "'");
}

forward_trace run_forward(const network & net, const tensor & inputs) {
    if (inputs.ndim() != 2 || inputs.cols() != net.arch.input_dim) {
        throw shape_error("forward: input shape " + shape_str(inputs.shape()) + " does not match input_dim " +
                          std::to_string(net.arch.input_dim));
    }
    forward_trace tr;
    tr.n = inputs.rows();
    tr.acts.emplace_back(inputs.values().begin(), inputs.values().end());
    std::vector<double> wt;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const dense_layer & l = net.layers[li];
        const bool last = li + 1 == net.layers.size();
        // transposed copy so the inner loop runs over independent outputs
        wt.assign(l.in * l.out, 0.0);
        for (std::size_t o = 0; o < l.out; ++o) {
            for (std::size_t i = 0; i < l.in; ++i) wt[i * l.out + o] = l.w[o * l.in + i];
        }
        const std::vector<double> & a = tr.acts.back();
        std::vector<double> z(tr.n * l.out);
        for (std::size_t s = 0; s < tr.n; ++s) {
            double * zs = z.data() + s * l.out;
            std::copy(l.b.begin(), l.b.end(), zs);
            const double * as = a.data() + s * l.in;
            for (std::size_t i = 0; i < l.in; ++i) {
                const double ai = as[i];
                const double * wrow = wt.data() + i * l.out;
                for (std::size_t o = 0; o < l.out; ++o) zs[o] += ai * wrow[o];
            }
            if (!last) {
                for (std::size_t o = 0; o < l.out; ++o) zs[o] = std::tanh(zs[o]);
            }
        }
        tr.acts.push_back(std::move(z));
    }
    const std::size_t c = net.layers.back().out;
    tr.probs.resize(tr.n * c);
    const std::vector<double> & logits = tr.acts.back();
    for (std::size_t s = 0; s < tr.n; ++s) {
        const auto p = softmax(std::span<const double>(logits.data() + s * c, c));
        std::copy(p.begin(), p.end(), tr.probs.begin() + s * c);
    }
    return tr;
}

std::vector<layer_grad> run_backward(const network & net, const forward_trace & tr, const std::vector<double> & dlogits) {
    const std::size_t nl = net.layers.size();
    if (dlogits.size() != tr.n * net.layers.back().out) {
        throw shape_error("backward: upstream gradient size does not match the forward output");
    }
    std::vector<layer_grad> grads(nl);
    std::vector<double> d = dlogits;
    for (std::size_t k = nl; k-- > 0;) {
        const dense_layer & l = net.layers[k];
        const std::vector<double> & a = tr.acts[k];
        layer_grad & g = grads[k];
        g.w.assign(l.out * l.in, 0.0);
        g.b.assign(l.out, 0.0);
        for (std::size_t s = 0; s < tr.n; ++s) {
            const double * ds = d.data() + s * l.out;
            const double * as = a.data() + s * l.in;
            for (std::size_t o = 0; o < l.out; ++o) {
                const double dv = ds[o];
                g.b[o] += dv;
                double * gw = g.w.data() + o * l.in;
                for (std::size_t i = 0; i < l.in; ++i) gw[i] += dv * as[i];
            }
        }
        if (k == 0) break;
        std::vector<double> prev(tr.n * l.in, 0.0);
        for (std::size_t s = 0; s < tr.n; ++s) {
            const double * ds = d.data() + s * l.out;
            double * ps = prev.data() + s * l.in;
            for (std::size_t o = 0; o < l.out; ++o) {
                const double dv = ds[o];
                const double * wrow = l.w.data() + o * l.in;
                for (std::size_t i = 0; i < l.in; ++i) ps[i] += dv * wrow[i];
            }
            const double * as = a.data() + s * l.in;   // tanh outputs of the previous layer
            for (std::size_t i = 0; i < l.in; ++i) ps[i] *= 1.0 - as[i] * as[i];
        }
        d = std::move(prev);
    }
    return grads;
}

std::vector<double> softmax_backward(const std::vector<double> & probs, const std::vector<double> & dprobs, std::size_t classes) {
    if (probs.size() != dprobs.size() || classes == 0 || probs.size() % classes != 0) {
        throw shape_error("softmax_backward: shape mismatch");
    }
    std::vector<double> dz(probs.size());
    for (std::size_t s = 0; s < probs.size() / classes; ++s) {
        const double * p = probs.data() + s * classes;
        const double * u = dprobs.data() + s * classes;
        double dotpu = 0.0;
        for (std::size_t c = 0; c < classes; ++c) dotpu += p[c] * u[c];
        for (std::size_t c = 0; c < classes; ++c) dz[s * classes + c] = p[c] * (u[c] - dotpu);
    }
    return dz;
}

tensor forward(const model_params & m, const batch & x) {
    const network net = network::from_params(m);
    const forward_trace tr = run_forward(net, x.inputs);
    const std::size_t c = net.layers.back().out;
    std::vector<float> p(tr.probs.begin(), tr.probs.end());
    return tensor({tr.n, c}, std::move(p));
}

std::map<std::string, tensor> backward(const model_params & m, const batch & x, const tensor & upstream) {
    const network net = network::from_params(m);
    const forward_trace tr = run_forward(net, x.inputs);
    const std::size_t c = net.layers.back().out;
    if (upstream.ndim() != 2 || upstream.rows() != tr.n || upstream.cols() != c) {
        throw shape_error("backward: upstream shape " + shape_str(upstream.shape()) + " does not match output [" +
                          std::to_string(tr.n) + "," + std::to_string(c) + "]");
    }
    const std::vector<double> up(upstream.values().begin(), upstream.values().end());
    const auto grads = run_backward(net, tr, softmax_backward(tr.probs, up, c));
    std::map<std::string, tensor> out;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const dense_layer & l = net.layers[k];
        out.emplace(l.name + ".w", tensor({l.out, l.in}, std::vector<float>(grads[k].w.begin(), grads[k].w.end())));
        out.emplace(l.name + ".b", tensor({l.out}, std::vector<float>(grads[k].b.begin(), grads[k].b.end())));
    }
    return out;
}

double accuracy(const model_params & m, const batch & x) {
    if (!x.labels) {
        throw shape_error("accuracy needs a labeled batch");
    }
    const network net = network::from_params(m);
    const forward_trace tr = run_forward(net, x.inputs);
    const std::size_t c = net.layers.back().out;
    std::size_t hits = 0;
    for (std::size_t s = 0; s < tr.n; ++s) {
        const double * p = tr.probs.data() + s * c;
        const auto arg = static_cast<int>(std::max_element(p, p + c) - p);
        if (arg == (*x.labels)[s]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(tr.n);
}

double accuracy(const model_params & m, const synthetic_task & task, std::size_t n) {
    return accuracy(m, task.sample(n, 0));
}

void train_cross_entropy(model_params & m, const synthetic_task & task, std::size_t steps, double lr,
                         std::size_t batch_size, bool train_frozen) {
    if (steps == 0) return;
    network net = network::from_params(m);
    const std::size_t c = net.layers.back().out;
    for (std::size_t t = 0; t < steps; ++t) {
        const batch b = task.sample(batch_size, t);
        const forward_trace tr = run_forward(net, b.inputs);
        std::vector<double> dz = tr.probs;
        for (std::size_t s = 0; s < tr.n; ++s) {
            dz[s * c + static_cast<std::size_t>((*b.labels)[s])] -= 1.0;
        }
        for (double & v : dz) v /= static_cast<double>(tr.n);
        const auto grads = run_backward(net, tr, dz);
        for (std::size_t k = 0; k < net.layers.size(); ++k) {
            dense_layer & l = net.layers[k];
            if (!train_frozen && m.arch.is_frozen(l.name)) continue;
            // parameters stay float-representable so the in-memory network matches the checkpoint
            for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = static_cast<float>(l.w[i] - lr * grads[k].w[i]);
            for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] = static_cast<float>(l.b[i] - lr * grads[k].b[i]);
        }
    }
    for (const auto & l : net.layers) {
        std::copy(l.w.begin(), l.w.end(), m.at(l.name + ".w").data().begin());
        std::copy(l.b.begin(), l.b.end(), m.at(l.name + ".b").data().begin());
    }
}

model_triple make_triple(const arch_spec & arch, const triple_seeds & seeds, const triple_epochs & epochs) {
    arch.validate();
    if (arch.output_classes != 4) {
        throw config_error("synthetic tasks have 4 classes; arch.output_classes must be 4");
    }
    model_triple t;
    t.base = init_params(arch, seeds.base);
    train_cross_entropy(t.base, synthetic_task{task_kind::generic, seeds.base, arch.input_dim},
                        epochs.pretrain, k_finetune_lr, k_finetune_batch, true);
    t.base.prov = provenance::base;

    t.vlm = t.base;
    train_cross_entropy(t.vlm, synthetic_task{task_kind::task_v, seeds.vlm, arch.input_dim},
                        epochs.finetune, k_finetune_lr, k_finetune_batch, true);
    t.vlm.prov = provenance::vlm;

    t.lrm = t.base;
    train_cross_entropy(t.lrm, synthetic_task{task_kind::task_r, seeds.lrm, arch.input_dim},
                        epochs.finetune, k_finetune_lr, k_finetune_batch, false);
    t.lrm.prov = provenance::lrm;
    return t;
}

} // namespace frism
