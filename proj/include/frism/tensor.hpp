#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace frism {

// dense rank-1 or rank-2 float32 array, row-major
class tensor {
public:
    tensor() = default;
    explicit tensor(std::vector<std::size_t> shape);                       // zero filled
    tensor(std::vector<std::size_t> shape, std::vector<float> data);

    static tensor zeros(std::size_t rows, std::size_t cols);
    static tensor identity(std::size_t n);
    static tensor from_vector(std::vector<float> values);
    static tensor from_rows(const std::vector<std::vector<float>> & rows);

    const std::vector<std::size_t> & shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // rank-2 accessors; a rank-1 tensor reads as a single row
    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    float & operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
    float   operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
    float & operator[](std::size_t i) { return data_[i]; }
    float   operator[](std::size_t i) const { return data_[i]; }

    std::span<float>       data() { return data_; }
    std::span<const float> data() const { return data_; }
    const std::vector<float> & values() const { return data_; }

    bool same_shape(const tensor & other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<float>       data_;
};

std::string shape_str(const std::vector<std::size_t> & shape);

// same shape and identical bit patterns (distinguishes -0.0 and +0.0)
bool bitwise_equal(const tensor & a, const tensor & b);

// throws domain_error naming `what` if any entry is NaN or Inf
void require_finite(const tensor & t, const std::string & what);

} // namespace frism
