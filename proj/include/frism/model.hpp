#pragma once

#include "frism/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace frism {

enum class provenance { base, vlm, lrm, merged };

const char * provenance_name(provenance p);
provenance   parse_provenance(const std::string & s);

// Dense tanh MLP: "adapter" maps the input to the first hidden layer, then
// layer1..layerH follow; the last one produces logits. With the defaults this is
// 16 -> 32 (adapter) -> 32 (layer1) -> 4 (layer2).
struct arch_spec {
    std::size_t input_dim         = 16;
    std::size_t hidden_dim        = 32;
    std::size_t num_hidden_layers = 2;
    std::size_t output_classes    = 4;
    std::string activation        = "tanh";
    // entries may name a dense layer ("adapter") or one of its tensors ("adapter.w");
    // either way the whole dense layer is frozen
    std::vector<std::string> frozen_layers = {"adapter.w"};

    std::vector<std::string> dense_layers() const;     // forward order
    std::vector<std::string> merged_layers() const;    // dense layers that are not frozen
    bool is_frozen(const std::string & dense_layer) const;
    std::vector<std::size_t> weight_shape(const std::string & dense_layer) const;
    std::size_t layer_index(const std::string & dense_layer) const;

    void validate() const;   // throws config_error
    bool operator==(const arch_spec &) const = default;
};

// "layer1.w" -> "layer1"
std::string dense_layer_of(const std::string & tensor_name);

struct model_params {
    arch_spec arch;
    std::map<std::string, tensor> tensors;   // alphabetical by name
    provenance prov = provenance::base;

    const tensor & at(const std::string & name) const;
    tensor & at(const std::string & name);
    void validate() const;   // shapes consistent with arch, finite values
};

model_params zero_params(const arch_spec & arch);
model_params init_params(const arch_spec & arch, std::uint64_t seed);
bool bitwise_equal(const model_params & a, const model_params & b);
// sha256 over tensor names, shapes and raw bytes; hex string
std::string params_checksum(const model_params & m);

struct batch {
    tensor inputs;                          // n x input_dim
    std::optional<std::vector<int>> labels; // absent for calibration batches
    std::size_t size() const { return inputs.rows(); }
};

enum class task_kind { task_v, task_r, generic };

const char * task_kind_name(task_kind k);
task_kind    parse_task_kind(const std::string & s);

// Synthetic tasks over x in [-1,1]^d. The first d/2 coordinates are the "visual"
// half, the rest the "reasoning" half.
//   taskV:   visual half active, label = argmax(x_v * A) for a fixed random d/2 x 4 matrix A
//   taskR:   reasoning half active, label = 2*[r0*r1 > 0] + [r2*r3 > 0]
//   generic: one half active at random; visual samples use a perturbed rule
//            argmax(x_v * (A + 0.8 N)), reasoning samples the taskR rule, and every
//            label is replaced by a uniform random class with probability 0.5
// sample(n, draw) is a pure function of (kind, seed, n, draw).
struct synthetic_task {
    task_kind kind = task_kind::task_v;
    std::uint64_t seed = 0;
    std::size_t input_dim = 16;

    batch sample(std::size_t n, std::uint64_t draw = 0) const;
    batch sample_unlabeled(std::size_t n, std::uint64_t draw = 0) const;
};

// ---- double precision network used by forward/backward and training ----

struct dense_layer {
    std::string name;
    std::size_t out = 0, in = 0;
    std::vector<double> w;   // out x in, row-major
    std::vector<double> b;   // out
};

struct network {
    arch_spec arch;
    std::vector<dense_layer> layers;   // forward order

    static network from_params(const model_params & m);
    dense_layer & layer(const std::string & name);
    const dense_layer & layer(const std::string & name) const;
};

struct forward_trace {
    std::size_t n = 0;
    std::vector<std::vector<double>> acts;   // acts[0] = input, acts[l+1] = output of layer l
    std::vector<double> probs;               // n x classes
};

forward_trace run_forward(const network & net, const tensor & inputs);

struct layer_grad {
    std::vector<double> w;
    std::vector<double> b;
};

// reverse pass from dL/dlogits (n x classes); one entry per layer in forward order
std::vector<layer_grad> run_backward(const network & net, const forward_trace & tr, const std::vector<double> & dlogits);

// dL/dlogits from dL/dprobs through the softmax Jacobian
std::vector<double> softmax_backward(const std::vector<double> & probs, const std::vector<double> & dprobs, std::size_t classes);

// probabilities, n x classes
tensor forward(const model_params & m, const batch & x);

// dL/dW and dL/db for every dense layer given dL/dprobs (n x classes)
std::map<std::string, tensor> backward(const model_params & m, const batch & x, const tensor & upstream);

double accuracy(const model_params & m, const batch & x);
double accuracy(const model_params & m, const synthetic_task & task, std::size_t n);

// plain gradient descent on mean cross-entropy; frozen layers of the arch are skipped
// unless `train_frozen` is set
void train_cross_entropy(model_params & m, const synthetic_task & task, std::size_t steps, double lr,
                         std::size_t batch_size, bool train_frozen);

struct triple_seeds {
    std::uint64_t base = 1, vlm = 2, lrm = 3;
};

struct triple_epochs {
    std::size_t pretrain = 1000;
    std::size_t finetune = 8000;
};

struct model_triple {
    model_params base, vlm, lrm;
};

constexpr double k_finetune_lr = 0.05;
constexpr std::size_t k_finetune_batch = 64;

model_triple make_triple(const arch_spec & arch, const triple_seeds & seeds, const triple_epochs & epochs);

} // namespace frism
