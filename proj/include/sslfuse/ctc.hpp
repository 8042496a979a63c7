#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sslfuse/tensor.hpp"

namespace sslfuse {

// True when some CTC path over `num_frames` frames collapses to `labels`,
// i.e. num_frames >= |labels| + number of adjacent repeats.
bool ctc_feasible(std::span<const int> labels, std::size_t num_frames);

struct CtcResult {
  double loss = 0.0;                // -log p(labels | frames)
  std::vector<double> grad;         // d loss / d log_probs, T x V
};

// Log-space forward-backward over log_probs[T x V]. Throws LengthError when
// the labels cannot be aligned to T frames.
CtcResult ctc_forward_backward(std::span<const double> log_probs, std::size_t num_frames, std::size_t vocab,
                               std::span<const int> labels, int blank = 0, bool want_grad = true);

// Differentiable scalar loss on a T x V tensor of log-probabilities.
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> labels, int blank = 0);

// Framewise argmax, collapse repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const Tensor& scores, int blank = 0);
std::vector<int> ctc_collapse(std::span<const int> framewise, int blank = 0);

}  // namespace sslfuse
