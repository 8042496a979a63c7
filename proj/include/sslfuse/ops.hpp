#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "sslfuse/tensor.hpp"

// Differentiable operations. Each op checks shapes at its boundary, and when
// an active tape exists and any input requires grad, records its backward
// rule on the tape.
namespace sslfuse {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a[m x n] + bias[n], broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
// Splits the last axis in halves (a, b) and returns a * sigmoid(b).
Tensor glu(const Tensor& x);

// Negative axis counts from the end.
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// x[C_in, H, W], kernels[C_out, C_in, kh, kw], bias[C_out] -> [C_out, H', W'].
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::array<std::size_t, 2> stride,
              std::array<std::size_t, 2> padding);
// Time-major depthwise convolution: x[T, C], kernels[C, k], bias[C], stride 1.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t padding);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// x[m x in] * weight[in x out] + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace sslfuse
