#include "frism/svd.hpp"

#include "frism/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace frism {

namespace {

constexpr double k_jacobi_tol  = 1e-10;
constexpr int    k_max_sweeps  = 100;
// singular values below this fraction of the largest are treated as exact zeros
constexpr double k_zero_rel    = 1e-13;

// column-major p x q double matrix
struct colmat {
    std::size_t p = 0, q = 0;
    std::vector<double> a;
    double * col(std::size_t j) { return a.data() + j * p; }
    const double * col(std::size_t j) const { return a.data() + j * p; }
};

double dot(const double * x, const double * y, std::size_t n) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    for (; i < n; ++i) {
        s0 += x[i] * y[i];
    }
    return (s0 + s1) + (s2 + s3);
}

void rotate(double * x, double * y, std::size_t n, double c, double s) {
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// orthogonalizes the columns of w in place, accumulating rotations into v (q x q)
void hestenes(colmat & w, colmat & v) {
    const std::size_t p = w.p, q = w.q;
    for (int sweep = 0; sweep < k_max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < q; ++i) {
            for (std::size_t j = i + 1; j < q; ++j) {
                double * wi = w.col(i);
                double * wj = w.col(j);
                const double alpha = dot(wi, wi, p);
                const double beta  = dot(wj, wj, p);
                const double gamma = dot(wi, wj, p);
                if (alpha == 0.0 || beta == 0.0) {
                    continue;
                }
                if (std::fabs(gamma) <= k_jacobi_tol * std::sqrt(alpha * beta)) {
                    continue;
                }
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate(wi, wj, p, c, s);
                rotate(v.col(i), v.col(j), q, c, s);
                rotated = true;
            }
        }
        if (!rotated) {
            return;
        }
    }
}

// fills the columns flagged in `missing` with unit vectors orthogonal to every other column
void complete_basis(colmat & u, const std::vector<bool> & missing) {
    const std::size_t p = u.p;
    std::vector<std::size_t> done;
    for (std::size_t j = 0; j < u.q; ++j) {
        if (!missing[j]) done.push_back(j);
    }
    std::size_t cand = 0;
    std::vector<double> x(p);
    for (std::size_t j = 0; j < u.q; ++j) {
        if (!missing[j]) continue;
        for (;; ++cand) {
            if (cand >= p) {
                throw degenerate_error("svd: could not complete the left singular basis");
            }
            std::fill(x.begin(), x.end(), 0.0);
            x[cand] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t k : done) {
                    const double * uk = u.col(k);
                    const double d = dot(uk, x.data(), p);
                    for (std::size_t r = 0; r < p; ++r) x[r] -= d * uk[r];
                }
            }
            const double nrm = std::sqrt(dot(x.data(), x.data(), p));
            if (nrm > 0.5) {
                double * uj = u.col(j);
                for (std::size_t r = 0; r < p; ++r) uj[r] = x[r] / nrm;
                done.push_back(j);
                ++cand;
                break;
            }
        }
    }
}

} // namespace

svd_result svd(const tensor & a) {
    if (a.ndim() != 2) {
        throw shape_error("svd expects a matrix, got " + shape_str(a.shape()));
    }
    require_finite(a, "svd input");
    const std::size_t m = a.rows(), n = a.cols();
    if (std::max(m, n) > 4096) {
        throw shape_error("svd: dimension above 4096 in " + shape_str(a.shape()));
    }

    // work on a tall p x q matrix; transpose when the input is wide
    const bool wide = m < n;
    const std::size_t p = wide ? n : m;
    const std::size_t q = wide ? m : n;

    colmat w{p, q, std::vector<double>(p * q)};
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (wide) {
                w.col(i)[j] = a(i, j);
            } else {
                w.col(j)[i] = a(i, j);
            }
        }
    }
    colmat v{q, q, std::vector<double>(q * q, 0.0)};
    for (std::size_t j = 0; j < q; ++j) v.col(j)[j] = 1.0;

    hestenes(w, v);

    std::vector<double> sigma(q);
    for (std::size_t j = 0; j < q; ++j) {
        sigma[j] = std::sqrt(dot(w.col(j), w.col(j), p));
    }
    std::vector<std::size_t> order(q);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    const double smax = sigma[order[0]];
    colmat uw{p, q, std::vector<double>(p * q, 0.0)};
    colmat vw{q, q, std::vector<double>(q * q, 0.0)};
    std::vector<double> s(q);
    std::vector<bool> missing(q, false);
    for (std::size_t k = 0; k < q; ++k) {
        const std::size_t j = order[k];
        std::copy(v.col(j), v.col(j) + q, vw.col(k));
        if (smax == 0.0 || sigma[j] <= k_zero_rel * smax) {
            s[k] = 0.0;
            missing[k] = true;
            continue;
        }
        s[k] = sigma[j];
        for (std::size_t r = 0; r < p; ++r) uw.col(k)[r] = w.col(j)[r] / sigma[j];
    }
    complete_basis(uw, missing);

    // map back: tall case u = uw (m x q), v = vw; wide case u = vw (m x q), v = uw
    const colmat & uf = wide ? vw : uw;
    const colmat & vf = wide ? uw : vw;

    svd_result out;
    out.rank = q;
    out.u  = tensor({m, q});
    out.s  = tensor({q});
    out.vt = tensor({q, n});
    for (std::size_t k = 0; k < q; ++k) {
        const double * uc = uf.col(k);
        std::size_t imax = 0;
        for (std::size_t r = 1; r < m; ++r) {
            if (std::fabs(uc[r]) > std::fabs(uc[imax])) imax = r;
        }
        const double sign = uc[imax] < 0 ? -1.0 : 1.0;
        for (std::size_t r = 0; r < m; ++r) out.u(r, k) = static_cast<float>(sign * uc[r]);
        const double * vc = vf.col(k);
        for (std::size_t c = 0; c < n; ++c) out.vt(k, c) = static_cast<float>(sign * vc[c]);
        out.s[k] = static_cast<float>(s[k]);
    }
    return out;
}

svd_result truncate(const svd_result & d, std::size_t k) {
    if (k < 1 || k > d.rank) {
        throw range_error("truncate: k = " + std::to_string(k) + " outside [1, " + std::to_string(d.rank) + "]");
    }
    const std::size_t m = d.u.rows(), n = d.vt.cols();
    svd_result out;
    out.rank = k;
    out.u  = tensor({m, k});
    out.s  = tensor({k});
    out.vt = tensor({k, n});
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < k; ++c) out.u(r, c) = d.u(r, c);
    }
    for (std::size_t c = 0; c < k; ++c) {
        out.s[c] = d.s[c];
        for (std::size_t j = 0; j < n; ++j) out.vt(c, j) = d.vt(c, j);
    }
    return out;
}

tensor reconstruct(const svd_result & d) {
    const std::size_t m = d.u.rows(), n = d.vt.cols();
    tensor out({m, n});
    std::vector<double> row(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t k = 0; k < d.rank; ++k) {
            const double c = static_cast<double>(d.u(i, k)) * d.s[k];
            if (c == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) row[j] += c * d.vt(k, j);
        }
        for (std::size_t j = 0; j < n; ++j) out(i, j) = static_cast<float>(row[j]);
    }
    return out;
}

std::size_t numerical_rank(const svd_result & d) {
    if (d.rank == 0 || d.s[0] == 0.0f) {
        return 0;
    }
    const double m = static_cast<double>(std::max(d.u.rows(), d.vt.cols()));
    const double tol = m * std::ldexp(1.0, -23) * d.s[0];
    std::size_t r = 0;
    while (r < d.rank && d.s[r] > tol) ++r;
    return r;
}

} // namespace frism
