#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  // Rounds parameters and moments to binary32 after the update so that a
  // float32 checkpoint captures the optimizer exactly.
  bool round_to_f32 = false;
};

// One bias-corrected Adam update using the gradients stored on `params`.
// An empty state is initialised on first use.
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamOptions& options);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

void round_to_f32(std::span<double> values);

}  // namespace sslfuse
