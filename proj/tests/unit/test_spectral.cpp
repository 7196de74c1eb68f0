#include "frism/error.hpp"
#include "frism/merge.hpp"
#include "frism/ops.hpp"
#include "frism/spectral.hpp"
#include "frism/svd.hpp"
#include "frism/trainer.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace frism;

namespace {

quadratic_landscape random_landscape(rng & r, std::size_t n) {
    quadratic_landscape l;
    l.alpha = r.uniform(0.0, 1.0);
    l.lambda_lrm = r.uniform(0.5, 2.0);
    for (std::size_t i = 0; i < n; ++i) {
        l.curvatures.push_back(r.uniform(0.0, 4.0));
        l.subspace_norms_sq.push_back(r.uniform(0.1, 4.0));
    }
    return l;
}

} // namespace

TEST_CASE("landscape validation") {
    quadratic_landscape l;
    l.curvatures = {1.0};
    l.subspace_norms_sq = {1.0};
    CHECK_NOTHROW(l.validate());
    l.curvatures = {-1.0};
    CHECK_THROWS_AS(l.validate(), config_error);
    l.curvatures = {1.0, 2.0};
    CHECK_THROWS_AS(l.validate(), config_error);
    l.curvatures = {1.0};
    l.subspace_norms_sq = {0.0};
    CHECK_THROWS_AS(l.validate(), config_error);
}

TEST_CASE("closed-form gradient matches finite differences of the decoupled loss") {
    rng r(3);
    for (int t = 0; t < 20; ++t) {
        const quadratic_landscape l = random_landscape(r, 5);
        std::vector<double> lam(5);
        for (double & v : lam) v = r.uniform(-1.0, 2.0);
        const auto g = closed_form_gradient(l, lam);
        for (std::size_t i = 0; i < 5; ++i) {
            auto f = [&](double x) {
                auto p = lam;
                p[i] = x;
                return decoupled_loss(l, p);
            };
            CHECK(std::fabs(g[i] - central_difference(f, lam[i], 1e-4)) < 1e-8);
        }
    }
    quadratic_landscape l;
    l.curvatures = {1.0};
    l.subspace_norms_sq = {1.0};
    CHECK_THROWS_AS(closed_form_gradient(l, {1.0, 2.0}), shape_error);
}

TEST_CASE("regime classification follows the margin sign") {
    quadratic_landscape l;
    l.alpha = 0.5;
    l.curvatures = {3.0, 0.5, 1.0};
    l.subspace_norms_sq = {1.0, 1.0, 1.0};
    const regime_prediction p = classify_regimes(l);
    CHECK(p.regimes == std::vector<regime>{regime::suppression, regime::injection, regime::injection});
    CHECK(p.margins[0] == doctest::Approx(2.0));
    CHECK(p.margins[2] == 0.0);   // the boundary counts as injection
    CHECK(std::string(regime_name(regime::suppression)) == "suppression");
}

TEST_CASE("gate dynamics move toward the predicted regime") {
    rng r(8);
    for (int t = 0; t < 20; ++t) {
        const quadratic_landscape l = random_landscape(r, 4);
        const auto traj = simulate_gate_dynamics(l, std::vector<double>(4, 0.0), 0.2, 300);
        CHECK(traj.size() == 301);
        const regime_prediction p = classify_regimes(l);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(traj[0][i] == 0.5);
            if (std::fabs(p.margins[i]) < 1e-3) continue;
            if (p.regimes[i] == regime::suppression) CHECK(traj.back()[i] < 0.5);
            else CHECK(traj.back()[i] > 0.5);
        }
    }
}

TEST_CASE("gate dynamics report divergence and bad arguments") {
    quadratic_landscape l;
    l.alpha = 100.0;
    l.lambda_lrm = 10.0;
    l.curvatures = {0.0};
    l.subspace_norms_sq = {100.0};
    CHECK_THROWS_AS(simulate_gate_dynamics(l, {0.0}, 1.0, 10), domain_error);
    CHECK_THROWS_AS(simulate_gate_dynamics(l, {0.0}, 0.0, 10), config_error);
    CHECK_THROWS_AS(simulate_gate_dynamics(l, {0.0, 0.0}, 0.1, 10), shape_error);
}

TEST_CASE("distance proxy under constructed orthogonality") {
    // B_i from a random SVD; tau_vlm orthogonal to every B_i
    const tensor a = test_util::random_matrix(6, 5, 4);
    const svd_result s = svd(a);
    layer_decomposition ld;
    ld.layer = "layer1";
    const svd_result keep = truncate(s, 3);
    ld.u = keep.u;
    ld.s = keep.s;
    ld.vt = keep.vt;
    ld.rank = 3;
    // tau_vlm lives in the complement: u_4 v_4^T + u_5 v_5^T
    tensor tau = tensor::zeros(6, 5);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 5; ++j) tau(i, j) = 0.7f * s.u(i, 3) * s.vt(3, j) - 1.3f * s.u(i, 4) * s.vt(4, j);
    }
    const std::vector<double> lam = {0.2, 0.5, 1.3};
    const distance_result d = distance_proxy(ld, tau, lam);
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += (1.0 - lam[i]) * (1.0 - lam[i]) * d.norms_sq[i];
    CHECK(d.j_value - frobenius_norm_sq(tau) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(std::fabs(d.cross_term) < 1e-6);
    for (double c : d.subspace_cross) CHECK(std::fabs(c) < 1e-6);
    CHECK(d.norms_sq[0] == doctest::Approx(static_cast<double>(s.s[0]) * s.s[0]).epsilon(1e-5));
    CHECK_THROWS_AS(distance_proxy(ld, tau, {0.0}), shape_error);
    CHECK_THROWS_AS(distance_proxy(ld, tensor::zeros(2, 2), lam), shape_error);
}

TEST_CASE("curvature estimates match a second difference of the distillation loss") {
    const model_triple t = make_triple(arch_spec{}, {1, 2, 3}, {50, 300});
    const task_vector tl = compute_task_vector(t.lrm, t.base);
    frism_config c;
    c.rank_truncation = 3;
    const subspace_decomposition d = decompose(tl, c);
    const batch x = calibration_pool(synthetic_task{task_kind::task_v, 0, 16});
    const layer_decomposition & ld = d.at("layer2");
    const curvature_estimate est = estimate_curvatures(t.vlm, ld, x, 1e-3);
    REQUIRE(est.h.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        // L(eps) = KL(vlm || vlm + eps B_k), evaluated in double through the network
        auto loss = [&](double eps) {
            network net = network::from_params(t.vlm);
            auto & w = net.layer("layer2").w;
            for (std::size_t i = 0; i < ld.u.rows(); ++i) {
                for (std::size_t j = 0; j < ld.vt.cols(); ++j) {
                    w[i * ld.vt.cols() + j] += eps * static_cast<double>(ld.s[k]) * ld.u(i, k) * ld.vt(k, j);
                }
            }
            const forward_trace tt = run_forward(network::from_params(t.vlm), x.inputs);
            const forward_trace st = run_forward(net, x.inputs);
            return kl_divergence(tt.probs, st.probs, 4);
        };
        const double e = 1e-2;
        const double second = (loss(e) + loss(-e) - 2.0 * loss(0.0)) / (e * e);
        CHECK(est.h[k] >= 0.0);
        CHECK(est.h[k] == doctest::Approx(second).epsilon(2e-2));
        CHECK(est.cross[k][k] == est.h[k]);
    }
}

TEST_CASE("regime map and csv") {
    quadratic_landscape l;
    l.alpha = 0.25;
    l.lambda_lrm = 1.0;
    l.curvatures = {2.0, 0.1};
    l.subspace_norms_sq = {1.0, 1.0};
    const auto rows = regime_map(l, 0.5, 500);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].reg == regime::suppression);
    CHECK(rows[0].final_gate < 0.5);
    CHECK(rows[1].reg == regime::injection);
    CHECK(rows[1].final_gate > 0.5);
    const std::string csv = regimes_to_csv(rows);
    CHECK(csv.rfind("subspace_index,h,norm_sq,alpha,margin,regime,final_gate\n", 0) == 0);
    CHECK(csv.find("0,2,1,0.25,1.5,suppression,") != std::string::npos);
}
