#include "frism/tensor.hpp"

#include "frism/error.hpp"

#include <cmath>
#include <cstring>

namespace frism {

const char * error_kind_name(error_kind kind) {
    switch (kind) {
        case error_kind::shape:        return "shape";
        case error_kind::domain:       return "domain";
        case error_kind::range:        return "range";
        case error_kind::format:       return "format";
        case error_kind::config:       return "config";
        case error_kind::incompatible: return "incompatible";
        case error_kind::degenerate:   return "degenerate";
        case error_kind::io:           return "io";
    }
    return "unknown";
}

static std::size_t checked_count(const std::vector<std::size_t> & shape) {
    if (shape.empty() || shape.size() > 2) {
        throw shape_error("tensor must have 1 or 2 dimensions, got " + shape_str(shape));
    }
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) {
            throw shape_error("tensor dimensions must be positive, got " + shape_str(shape));
        }
        n *= d;
    }
    return n;
}

tensor::tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_count(shape_), 0.0f);
}

tensor::tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    const std::size_t n = checked_count(shape_);
    if (n != data_.size()) {
        throw shape_error("shape " + shape_str(shape_) + " needs " + std::to_string(n) +
                          " values, got " + std::to_string(data_.size()));
    }
}

tensor tensor::zeros(std::size_t rows, std::size_t cols) {
    return tensor({rows, cols});
}

tensor tensor::identity(std::size_t n) {
    tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0f;
    }
    return t;
}

tensor tensor::from_vector(std::vector<float> values) {
    const std::size_t n = values.size();
    return tensor({n}, std::move(values));
}

tensor tensor::from_rows(const std::vector<std::vector<float>> & rows) {
    if (rows.empty()) {
        throw shape_error("from_rows: no rows");
    }
    const std::size_t c = rows[0].size();
    std::vector<float> data;
    data.reserve(rows.size() * c);
    for (const auto & r : rows) {
        if (r.size() != c) {
            throw shape_error("from_rows: ragged rows");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return tensor({rows.size(), c}, std::move(data));
}

std::string shape_str(const std::vector<std::size_t> & shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

bool bitwise_equal(const tensor & a, const tensor & b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    return a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

void require_finite(const tensor & t, const std::string & what) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw domain_error(what + ": non-finite entry at index " + std::to_string(i));
        }
    }
}

} // namespace frism
