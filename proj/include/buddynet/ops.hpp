#pragma once

#include <cstddef>
#include <span>

#include "buddynet/tensor.hpp"

// Differentiable operations. Each op records a backward rule on the active
// Graph when any input requires a gradient; otherwise it is a plain
// computation. Binary elementwise ops broadcast over trailing dimensions.
namespace buddynet {

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// a^b elementwise; a must be strictly positive.
Tensor pow(const Tensor& a, const Tensor& b);
Tensor pow(const Tensor& a, double exponent);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);
// max(a, floor) elementwise; gradient passes where a > floor.
Tensor maximum(const Tensor& a, double floor);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

// [M x K] . [K x N] -> [M x N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

// softmax(a / temperature) along `axis`, computed with max subtraction.
Tensor softmax(const Tensor& a, std::size_t axis, double temperature = 1.0);
Tensor log_softmax(const Tensor& a, std::size_t axis, double temperature = 1.0);
// a / ||a|| along `axis`; slices with norm below epsilon map to zero.
Tensor l2_normalize(const Tensor& a, std::size_t axis, double epsilon = 1e-12);
// Normalizes over the last axis, then applies gamma * x + beta.
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  double epsilon = 1e-6);

}  // namespace buddynet
