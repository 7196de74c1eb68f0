#include "frism/error.hpp"
#include "frism/ops.hpp"
#include "frism/rng.hpp"
#include "frism/tensor.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace frism;

TEST_CASE("tensor shapes are validated") {
    CHECK_THROWS_AS(tensor(std::vector<std::size_t>{}), shape_error);
    CHECK_THROWS_AS(tensor({2, 3, 4}), shape_error);
    CHECK_THROWS_AS(tensor({0, 3}), shape_error);
    CHECK_THROWS_AS(tensor({2, 2}, {1.0f, 2.0f, 3.0f}), shape_error);
    CHECK_THROWS_AS(tensor::from_rows({{1.0f, 2.0f}, {3.0f}}), shape_error);
    const tensor t({2, 3});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    const tensor v = tensor::from_vector({1.0f, 2.0f});
    CHECK(v.ndim() == 1);
    CHECK(v.rows() == 1);
}

TEST_CASE("bitwise_equal distinguishes signed zeros") {
    tensor a = tensor::from_vector({0.0f, 1.0f});
    tensor b = tensor::from_vector({-0.0f, 1.0f});
    CHECK_FALSE(bitwise_equal(a, b));
    CHECK(bitwise_equal(a, a));
    CHECK_FALSE(bitwise_equal(a, tensor::from_rows({{0.0f, 1.0f}})));
}

TEST_CASE("require_finite names the offending entry") {
    tensor a = tensor::from_vector({1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(require_finite(a, "x"), domain_error);
    CHECK_NOTHROW(require_finite(tensor::from_vector({1.0f}), "x"));
}

TEST_CASE("softmax is stable and sums to one") {
    const std::vector<double> x = {1000.0, 1001.0, 999.0};
    const auto p = softmax(std::span<const double>(x));
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[1] > p[0]);
    CHECK(std::isfinite(p[2]));
    CHECK_THROWS_AS(softmax(std::span<const double>()), shape_error);
}

TEST_CASE("sigmoid and its derivative") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) <= 1.0);
    for (double x : {-3.0, -0.5, 0.0, 1.7}) {
        const double fd = central_difference([](double t) { return sigmoid(t); }, x, 1e-5);
        CHECK(sigmoid_grad(x) == doctest::Approx(fd).epsilon(1e-8));
    }
}

TEST_CASE("matmul matches a naive triple loop") {
    const tensor a = test_util::random_matrix(5, 7, 1);
    const tensor b = test_util::random_matrix(7, 3, 2);
    const tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 7; ++k) acc += static_cast<double>(a(i, k)) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-6));
        }
    }
    CHECK_THROWS_AS(matmul(a, a), shape_error);
}

TEST_CASE("elementwise ops and norms") {
    const tensor a = test_util::random_matrix(4, 4, 3);
    const tensor b = test_util::random_matrix(4, 4, 4);
    CHECK(max_abs_diff(sub(add(a, b), b), a) < 1e-5);
    CHECK(bitwise_equal(transpose(transpose(a)), a));
    CHECK(frobenius_norm_sq(a) == doctest::Approx(frobenius_dot(a, a)));
    CHECK(frobenius_norm(scale(a, 2.0)) == doctest::Approx(2.0 * frobenius_norm(a)).epsilon(1e-6));
    const tensor e = elementwise_mul(a, b);
    CHECK(e[5] == doctest::Approx(static_cast<double>(a[5]) * b[5]));
    CHECK_THROWS_AS(add(a, test_util::random_matrix(4, 3, 5)), shape_error);
}

TEST_CASE("central_difference rejects bad input") {
    CHECK_THROWS_AS(central_difference([](double x) { return x; }, 0.0, 0.0), domain_error);
    CHECK_THROWS_AS(central_difference([](double x) { return std::log(x); }, 0.0, 1e-3), domain_error);
    CHECK(central_difference([](double x) { return x * x; }, 3.0, 1e-3) == doctest::Approx(6.0));
}

TEST_CASE("rng is deterministic per (seed, stream)") {
    rng a(5, 1), b(5, 1), c(5, 2), d(6, 1);
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
    CHECK(x != d.next_u64());
}

TEST_CASE("rng distributions have the right moments") {
    rng r(42);
    const int n = 200000;
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    std::vector<int> counts(5, 0);
    bool in_range = true;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        in_range = in_range && u >= 0.0 && u < 1.0;
        su += u;
        const double z = r.normal();
        sn += z;
        sn2 += z * z;
        counts[r.below(5)]++;
    }
    CHECK(in_range);
    CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::fabs(sn / n) < 0.01);
    CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
    for (int c : counts) CHECK(std::fabs(c - n / 5.0) < 5.0 * std::sqrt(n * 0.16));
}
