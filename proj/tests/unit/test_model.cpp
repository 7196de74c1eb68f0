#include "frism/error.hpp"
#include "frism/model.hpp"
#include "frism/ops.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace frism;

TEST_CASE("arch defaults and layer bookkeeping") {
    const arch_spec a;
    CHECK(a.dense_layers() == std::vector<std::string>{"adapter", "layer1", "layer2"});
    CHECK(a.merged_layers() == std::vector<std::string>{"layer1", "layer2"});
    CHECK(a.is_frozen("adapter"));
    CHECK(a.weight_shape("adapter") == std::vector<std::size_t>{32, 16});
    CHECK(a.weight_shape("layer2") == std::vector<std::size_t>{4, 32});
    CHECK(a.layer_index("layer1") == 1);
    CHECK(dense_layer_of("layer1.w") == "layer1");
    CHECK_THROWS_AS(a.layer_index("nope"), config_error);

    arch_spec bad = a;
    bad.frozen_layers = {"layer9"};
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = a;
    bad.activation = "relu";
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = a;
    bad.hidden_dim = 0;
    CHECK_THROWS_AS(bad.validate(), config_error);
}

TEST_CASE("provenance and task names round-trip") {
    for (auto p : {provenance::base, provenance::vlm, provenance::lrm, provenance::merged}) {
        CHECK(parse_provenance(provenance_name(p)) == p);
    }
    CHECK_THROWS_AS(parse_provenance("other"), format_error);
    for (auto k : {task_kind::task_v, task_kind::task_r, task_kind::generic}) CHECK(parse_task_kind(task_kind_name(k)) == k);
    CHECK_THROWS_AS(parse_task_kind("taskX"), config_error);
}

TEST_CASE("init_params is seeded and splits the adapter by modality") {
    const arch_spec a;
    const model_params m1 = init_params(a, 7), m2 = init_params(a, 7), m3 = init_params(a, 8);
    CHECK(bitwise_equal(m1, m2));
    CHECK_FALSE(bitwise_equal(m1, m3));
    CHECK(params_checksum(m1) == params_checksum(m2));
    CHECK(params_checksum(m1) != params_checksum(m3));
    const tensor & ad = m1.at("adapter.w");
    for (std::size_t i = 0; i < ad.rows(); ++i) {
        for (std::size_t j = 0; j < ad.cols(); ++j) {
            const bool cross = (i < ad.rows() / 2) != (j < a.input_dim / 2);
            if (cross) CHECK(ad(i, j) == 0.0f);
        }
    }
    CHECK_NOTHROW(m1.validate());
    CHECK_THROWS_AS(m1.at("layer7.w"), shape_error);
}

TEST_CASE("model validation catches wrong shapes and non-finite values") {
    model_params m = init_params(arch_spec{}, 1);
    m.tensors["layer1.b"] = tensor({3});
    CHECK_THROWS_AS(m.validate(), shape_error);
    m = init_params(arch_spec{}, 1);
    m.at("layer1.w")[0] = std::nanf("");
    CHECK_THROWS_AS(m.validate(), domain_error);
}

TEST_CASE("synthetic task labels follow their rules") {
    const std::size_t d = 16, half = 8;
    const synthetic_task tr{task_kind::task_r, 3, d};
    const batch b = tr.sample(500, 2);
    REQUIRE(b.labels.has_value());
    for (std::size_t i = 0; i < b.size(); ++i) {
        const float * x = b.inputs.data().data() + i * d;
        for (std::size_t j = 0; j < half; ++j) CHECK(x[j] == 0.0f);
        const int want = 2 * (x[half] * x[half + 1] > 0) + (x[half + 2] * x[half + 3] > 0);
        CHECK((*b.labels)[i] == want);
    }
    const synthetic_task tv{task_kind::task_v, 3, d};
    const batch bv = tv.sample(200, 0);
    std::vector<int> counts(4, 0);
    for (std::size_t i = 0; i < bv.size(); ++i) {
        const float * x = bv.inputs.data().data() + i * d;
        for (std::size_t j = half; j < d; ++j) CHECK(x[j] == 0.0f);
        counts[(*bv.labels)[i]]++;
    }
    for (int c : counts) CHECK(c > 0);
}

TEST_CASE("sampling is a pure function of (kind, seed, n, draw)") {
    const synthetic_task t{task_kind::generic, 9, 16};
    const batch a = t.sample(64, 5), b = t.sample(64, 5), c = t.sample(64, 6);
    CHECK(bitwise_equal(a.inputs, b.inputs));
    CHECK(*a.labels == *b.labels);
    CHECK_FALSE(bitwise_equal(a.inputs, c.inputs));
    CHECK_FALSE(t.sample_unlabeled(4, 0).labels.has_value());
    CHECK_THROWS_AS(synthetic_task({task_kind::task_v, 0, 7}).sample(4), config_error);
    CHECK_THROWS_AS(t.sample(0), shape_error);
}

TEST_CASE("generic task labels are about half noise") {
    const synthetic_task t{task_kind::generic, 1, 16};
    const batch b = t.sample(4000, 0);
    std::size_t visual = 0;
    for (std::size_t i = 0; i < b.size(); ++i) visual += b.inputs(i, 0) != 0.0f;
    CHECK(std::fabs(visual / 4000.0 - 0.5) < 0.05);
}

TEST_CASE("forward produces row-stochastic probabilities") {
    const model_params m = init_params(arch_spec{}, 2);
    const batch b = synthetic_task{task_kind::task_v, 1, 16}.sample(10);
    const tensor p = forward(m, b);
    CHECK(p.rows() == 10);
    CHECK(p.cols() == 4);
    for (std::size_t i = 0; i < 10; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(p(i, c) > 0.0f);
            s += p(i, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    batch wrong;
    wrong.inputs = tensor::zeros(2, 5);
    CHECK_THROWS_AS(forward(m, wrong), shape_error);
}

TEST_CASE("backward matches central finite differences") {
    // L = sum(upstream * probs); compared on 60 coordinates across all tensors
    const model_params m = init_params(arch_spec{}, 4);
    const batch b = synthetic_task{task_kind::generic, 2, 16}.sample(12);
    const tensor up = test_util::random_matrix(12, 4, 77);
    const auto grads = backward(m, b, up);
    const network base = network::from_params(m);

    auto loss = [&](const network & net) {
        const forward_trace tr = run_forward(net, b.inputs);
        double l = 0.0;
        for (std::size_t i = 0; i < tr.probs.size(); ++i) l += up[i] * tr.probs[i];
        return l;
    };
    rng pick(5);
    std::size_t checked = 0;
    const std::vector<std::string> names = {"adapter", "layer1", "layer2"};
    while (checked < 60) {
        const std::string layer = names[pick.below(names.size())];
        const bool weight = pick.uniform() < 0.7;
        const auto li = base.arch.layer_index(layer);
        const std::size_t n = weight ? base.layers[li].w.size() : base.layers[li].b.size();
        const std::size_t k = pick.below(n);
        if (weight && layer == "adapter" && m.at("adapter.w")[k] == 0.0f) continue;
        auto f = [&](double x) {
            network net = base;
            (weight ? net.layers[li].w : net.layers[li].b)[k] = x;
            return loss(net);
        };
        const double x0 = weight ? base.layers[li].w[k] : base.layers[li].b[k];
        const double fd = central_difference(f, x0, 1e-5);
        const double an = grads.at(layer + (weight ? ".w" : ".b"))[k];
        CAPTURE(layer);
        CAPTURE(k);
        CHECK(std::fabs(an - fd) <= 1e-4 * std::fabs(fd) + 1e-7);
        ++checked;
    }
    CHECK_THROWS_AS(backward(m, b, tensor::zeros(3, 4)), shape_error);
}

TEST_CASE("accuracy requires labels") {
    const model_params m = init_params(arch_spec{}, 2);
    CHECK_THROWS_AS(accuracy(m, synthetic_task{task_kind::task_v, 1, 16}.sample_unlabeled(4)), shape_error);
    const double acc = accuracy(m, synthetic_task{task_kind::task_v, 1, 16}, 100);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
}

TEST_CASE("training improves accuracy and respects frozen layers") {
    model_params m = init_params(arch_spec{}, 3);
    const model_params before = m;
    const synthetic_task t{task_kind::task_r, 5, 16};
    const double acc0 = accuracy(m, t, 2000);
    train_cross_entropy(m, t, 1500, k_finetune_lr, k_finetune_batch, false);
    CHECK(accuracy(m, t, 2000) > acc0 + 0.1);
    CHECK(bitwise_equal(m.at("adapter.w"), before.at("adapter.w")));
    CHECK(bitwise_equal(m.at("adapter.b"), before.at("adapter.b")));
    CHECK_FALSE(bitwise_equal(m.at("layer1.w"), before.at("layer1.w")));
}

TEST_CASE("make_triple with zero epochs gives three identical models") {
    const model_triple t = make_triple(arch_spec{}, {1, 2, 3}, {0, 0});
    for (const auto & [name, w] : t.base.tensors) {
        CHECK(bitwise_equal(w, t.vlm.at(name)));
        CHECK(bitwise_equal(w, t.lrm.at(name)));
    }
    CHECK(t.vlm.prov == provenance::vlm);
    CHECK(t.lrm.prov == provenance::lrm);
}

TEST_CASE("make_triple keeps the frozen adapter of the reasoning model at the base") {
    const model_triple t = make_triple(arch_spec{}, {1, 2, 3}, {20, 30});
    CHECK(bitwise_equal(t.base.at("adapter.w"), t.lrm.at("adapter.w")));
    CHECK_FALSE(bitwise_equal(t.base.at("adapter.w"), t.vlm.at("adapter.w")));
    CHECK_FALSE(bitwise_equal(t.base.at("layer1.w"), t.lrm.at("layer1.w")));
}
