#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sslfuse/rng.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Ordered registry of trainable tensors. Registration order is the
// initialisation order, so it fixes the RNG stream for a given seed.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);
  Tensor uniform(const std::string& name, Shape shape, double bound);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  const Tensor& get(const std::string& name) const;
  std::size_t count() const;
  // Sum of element counts over names starting with `prefix`.
  std::size_t count(const std::string& prefix) const;
  void zero_grad();

 private:
  Tensor add(const std::string& name, Tensor t);
  std::vector<NamedTensor> entries_;
  Rng rng_;
};

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  static Linear make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
  static std::size_t param_count(std::size_t in, std::size_t out) { return in * out + out; }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNorm make(ParamStore& store, const std::string& name, std::size_t d);
  Tensor operator()(const Tensor& x) const;
  static std::size_t param_count(std::size_t d) { return 2 * d; }
};

// Position-wise feed-forward: linear -> activation -> linear.
struct FeedForward {
  Linear up;
  Linear down;
  bool use_swish = true;

  static FeedForward make(ParamStore& store, const std::string& name, std::size_t d, std::size_t hidden, bool swish);
  Tensor operator()(const Tensor& x) const;
  static std::size_t param_count(std::size_t d, std::size_t hidden) {
    return Linear::param_count(d, hidden) + Linear::param_count(hidden, d);
  }
};

struct AttentionResult {
  Tensor output;     // Lq x d
  Tensor attention;  // Lq x Lk head-averaged weights, no grad; empty unless requested
};

// Scaled dot-product multi-head attention with Q/K/V/O projections.
struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParamStore& store, const std::string& name, std::size_t d, std::size_t heads);
  // `mask`, when defined, is added to the Lq x Lk scores of every head.
  AttentionResult operator()(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask = {},
                             bool export_weights = false) const;
  static std::size_t param_count(std::size_t d) { return 4 * Linear::param_count(d, d); }
};

// Sinusoidal absolute position table, length x d.
Tensor sinusoid_positions(std::size_t length, std::size_t d);

// Additive causal mask: 0 on and below the diagonal, a large negative above.
Tensor causal_mask(std::size_t length);

}  // namespace sslfuse
