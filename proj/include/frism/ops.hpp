#pragma once

#include "frism/tensor.hpp"

#include <functional>
#include <span>
#include <vector>

namespace frism {

// all reductions below accumulate in double even though storage is float

double sigmoid(double x);
double sigmoid_grad(double x);   // sigma(x) * (1 - sigma(x))
tensor sigmoid(const tensor & x);

// max-subtracted softmax
std::vector<double> softmax(std::span<const double> x);
tensor softmax(const tensor & x);   // 1-D input

tensor matmul(const tensor & a, const tensor & b);
tensor transpose(const tensor & a);
tensor add(const tensor & a, const tensor & b);
tensor sub(const tensor & a, const tensor & b);
tensor scale(const tensor & a, double s);
tensor elementwise_mul(const tensor & a, const tensor & b);

double frobenius_norm_sq(const tensor & a);
double frobenius_norm(const tensor & a);
double frobenius_dot(const tensor & a, const tensor & b);
double max_abs_diff(const tensor & a, const tensor & b);

// (f(x+h) - f(x-h)) / 2h; throws domain_error when f is not finite at either point
double central_difference(const std::function<double(double)> & f, double x, double h);

} // namespace frism
