#pragma once

#include "frism/tensor.hpp"

#include <cstddef>

namespace frism {

struct svd_result {
    tensor u;            // m x r
    tensor s;            // r, descending, nonnegative
    tensor vt;           // r x n
    std::size_t rank = 0;
};

// One-sided Jacobi (Hestenes) in double precision with cyclic row-by-row pair order.
// Sign convention: the largest-magnitude entry of every u column is nonnegative
// (first index wins ties), v is flipped along with it. Left vectors belonging to
// zero singular values are completed to an orthonormal set.
svd_result svd(const tensor & a);

// keeps the top-k triplets; 1 <= k <= d.rank, otherwise range_error
svd_result truncate(const svd_result & d, std::size_t k);

// u * diag(s) * vt, accumulated in double
tensor reconstruct(const svd_result & d);

// count of singular values above max(m, n) * 2^-23 * s_max
std::size_t numerical_rank(const svd_result & d);

} // namespace frism
