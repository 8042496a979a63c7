#include "sslfuse/optim.hpp"

#include <cmath>

#include "sslfuse/errors.hpp"

namespace sslfuse {

void round_to_f32(std::span<double> values) {
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamOptions& options) {
  if (state.first_moment.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                     " slots for " + std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(options.beta1, t);
  const double correction2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != params[p].numel() || v.size() != params[p].numel()) {
      throw ShapeError("adam_step: state slot " + std::to_string(p) + " does not match parameter " +
                       shape_str(params[p].shape()));
    }
    if (!params[p].has_grad()) continue;
    auto w = params[p].mutable_data();
    auto g = params[p].grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g[i];
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double mhat = m[i] / correction1;
      const double vhat = v[i] / correction2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + options.eps);
    }
    if (options.round_to_f32) {
      round_to_f32(w);
      round_to_f32(m);
      round_to_f32(v);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) total += g * g;
  const double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

}  // namespace sslfuse
