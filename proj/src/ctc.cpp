#include "sslfuse/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sslfuse/errors.hpp"

namespace sslfuse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

bool ctc_feasible(std::span<const int> labels, std::size_t num_frames) {
  std::size_t needed = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++needed;
  return needed <= num_frames;
}

CtcResult ctc_forward_backward(std::span<const double> log_probs, std::size_t num_frames, std::size_t vocab,
                               std::span<const int> labels, int blank, bool want_grad) {
  if (log_probs.size() != num_frames * vocab) {
    throw ShapeError("ctc: " + std::to_string(log_probs.size()) + " scores for " + std::to_string(num_frames) + "x" +
                     std::to_string(vocab));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= vocab || l == blank) {
      throw InputError("ctc: label id " + std::to_string(l) + " invalid for vocabulary of " + std::to_string(vocab));
    }
  }
  if (num_frames == 0 || !ctc_feasible(labels, num_frames)) {
    throw LengthError("ctc: " + std::to_string(labels.size()) + " labels cannot align to " +
                      std::to_string(num_frames) + " frames");
  }
  // Blank-interleaved extended labels: blank l1 blank l2 ... blank.
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<int> ext(states, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto lp = [&](std::size_t t, std::size_t s) { return log_probs[t * vocab + static_cast<std::size_t>(ext[s])]; };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  // alpha includes the emission at t; beta covers emissions after t.
  std::vector<double> alpha(num_frames * states, kNegInf), beta(num_frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < num_frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (can_skip(s)) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, s);
    }
  }
  const double* last = alpha.data() + (num_frames - 1) * states;
  const double log_p = states > 1 ? log_add(last[states - 1], last[states - 2]) : last[0];
  if (!std::isfinite(log_p)) throw NumericError("ctc: total path probability underflowed");

  CtcResult result;
  result.loss = -log_p;
  if (!want_grad) return result;

  double* tail = beta.data() + (num_frames - 1) * states;
  tail[states - 1] = 0.0;
  if (states > 1) tail[states - 2] = 0.0;
  for (std::size_t t = num_frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double acc = next[s] == kNegInf ? kNegInf : next[s] + lp(t + 1, s);
      if (s + 1 < states && next[s + 1] != kNegInf) acc = log_add(acc, next[s + 1] + lp(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2) && next[s + 2] != kNegInf) acc = log_add(acc, next[s + 2] + lp(t + 1, s + 2));
      cur[s] = acc;
    }
  }
  result.grad.assign(num_frames * vocab, 0.0);
  for (std::size_t t = 0; t < num_frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      const double occ = alpha[t * states + s] + beta[t * states + s];
      if (occ == kNegInf) continue;
      result.grad[t * vocab + static_cast<std::size_t>(ext[s])] -= std::exp(occ - log_p);
    }
  return result;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> labels, int blank) {
  if (log_probs.rank() != 2) throw ShapeError("ctc_loss: expected T x V scores, got " + shape_str(log_probs.shape()));
  const std::size_t t = log_probs.dim(0), v = log_probs.dim(1);
  const bool track = active_tape() && log_probs.requires_grad();
  auto result = ctc_forward_backward(log_probs.data(), t, v, labels, blank, track);
  Tensor loss = Tensor::scalar(result.loss, track);
  if (track) {
    auto in = log_probs.impl_ptr();
    auto out = loss.impl_ptr();
    active_tape()->record(loss, [in, out, grad = std::move(result.grad)] {
      const double g = out->grad[0];
      for (std::size_t i = 0; i < grad.size(); ++i) in->grad[i] += g * grad[i];
    });
  }
  return loss;
}

std::vector<int> ctc_collapse(std::span<const int> framewise, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (int id : framewise) {
    if (id != prev && id != blank) out.push_back(id);
    prev = id;
  }
  return out;
}

std::vector<int> ctc_greedy_decode(const Tensor& scores, int blank) {
  if (scores.rank() != 2) throw ShapeError("ctc_greedy_decode: expected T x V scores, got " + shape_str(scores.shape()));
  const std::size_t t = scores.dim(0), v = scores.dim(1);
  auto data = scores.data();
  std::vector<int> best(t);
  for (std::size_t i = 0; i < t; ++i) {
    auto row = data.subspan(i * v, v);
    best[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return ctc_collapse(best, blank);
}

}  // namespace sslfuse
