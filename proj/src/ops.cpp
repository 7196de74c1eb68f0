#include "frism/ops.hpp"

#include "frism/error.hpp"

#include <algorithm>
#include <cmath>

namespace frism {

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double sigmoid_grad(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

tensor sigmoid(const tensor & x) {
    tensor out = x;
    for (float & v : out.data()) {
        v = static_cast<float>(sigmoid(static_cast<double>(v)));
    }
    return out;
}

std::vector<double> softmax(std::span<const double> x) {
    if (x.empty()) {
        throw shape_error("softmax of an empty vector");
    }
    const double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> p(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = std::exp(x[i] - mx);
        sum += p[i];
    }
    for (double & v : p) {
        v /= sum;
    }
    return p;
}

tensor softmax(const tensor & x) {
    if (x.ndim() != 1) {
        throw shape_error("softmax expects a vector, got " + shape_str(x.shape()));
    }
    std::vector<double> xd(x.values().begin(), x.values().end());
    const auto p = softmax(xd);
    return tensor::from_vector(std::vector<float>(p.begin(), p.end()));
}

static void require_2d(const tensor & a, const char * op) {
    if (a.ndim() != 2) {
        throw shape_error(std::string(op) + " expects a matrix, got " + shape_str(a.shape()));
    }
}

static void require_same(const tensor & a, const tensor & b, const char * op) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
}

tensor matmul(const tensor & a, const tensor & b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw shape_error("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    tensor out({m, n});
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += av * b(p, j);
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            out(i, j) = static_cast<float>(acc[j]);
        }
    }
    return out;
}

tensor transpose(const tensor & a) {
    require_2d(a, "transpose");
    tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

tensor add(const tensor & a, const tensor & b) {
    require_same(a, b, "add");
    tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(a[i]) + b[i]);
    }
    return out;
}

tensor sub(const tensor & a, const tensor & b) {
    require_same(a, b, "sub");
    tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(a[i]) - b[i]);
    }
    return out;
}

tensor scale(const tensor & a, double s) {
    tensor out = a;
    for (float & v : out.data()) {
        v = static_cast<float>(s * v);
    }
    return out;
}

tensor elementwise_mul(const tensor & a, const tensor & b) {
    require_same(a, b, "elementwise_mul");
    tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(a[i]) * b[i]);
    }
    return out;
}

double frobenius_norm_sq(const tensor & a) {
    double s = 0.0;
    for (float v : a.data()) {
        s += static_cast<double>(v) * v;
    }
    return s;
}

double frobenius_norm(const tensor & a) {
    return std::sqrt(frobenius_norm_sq(a));
}

double frobenius_dot(const tensor & a, const tensor & b) {
    require_same(a, b, "frobenius_dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += static_cast<double>(a[i]) * b[i];
    }
    return s;
}

double max_abs_diff(const tensor & a, const tensor & b) {
    require_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    }
    return m;
}

double central_difference(const std::function<double(double)> & f, double x, double h) {
    if (!(h > 0)) {
        throw domain_error("central_difference: step must be positive");
    }
    const double fp = f(x + h);
    const double fm = f(x - h);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw domain_error("central_difference: function is not finite near x = " + std::to_string(x));
    }
    return (fp - fm) / (2.0 * h);
}

} // namespace frism
