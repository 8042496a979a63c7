#include "sslfuse/layers.hpp"

#include <cmath>

#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"

namespace sslfuse {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& e : entries_)
    if (e.name == name) throw ConfigError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.push_back({name, t});
  return t;
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) { return add(name, Tensor::zeros(std::move(shape))); }

Tensor ParamStore::ones(const std::string& name, Shape shape) { return add(name, Tensor::full(std::move(shape), 1.0)); }

Tensor ParamStore::uniform(const std::string& name, Shape shape, double bound) {
  std::vector<double> values(shape_numel(shape));
  // Initial values are binary32-representable so float checkpoints are exact.
  for (auto& v : values) v = static_cast<double>(static_cast<float>(rng_.uniform(-bound, bound)));
  return add(name, Tensor::from(std::move(shape), std::move(values)));
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw ConfigError("unknown parameter " + name);
}

std::size_t ParamStore::count() const { return count(""); }

std::size_t ParamStore::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.name.compare(0, prefix.size(), prefix) == 0) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

Linear Linear::make(ParamStore& store, const std::string& name, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {store.uniform(name + ".weight", {in, out}, bound), store.zeros(name + ".bias", {out})};
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm LayerNorm::make(ParamStore& store, const std::string& name, std::size_t d) {
  return {store.ones(name + ".gain", {d}), store.zeros(name + ".bias", {d})};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

FeedForward FeedForward::make(ParamStore& store, const std::string& name, std::size_t d, std::size_t hidden,
                              bool swish_activation) {
  return {Linear::make(store, name + ".up", d, hidden), Linear::make(store, name + ".down", hidden, d),
          swish_activation};
}

Tensor FeedForward::operator()(const Tensor& x) const {
  Tensor hidden = up(x);
  hidden = use_swish ? swish(hidden) : relu(hidden);
  return down(hidden);
}

MultiHeadAttention MultiHeadAttention::make(ParamStore& store, const std::string& name, std::size_t d,
                                            std::size_t heads) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  MultiHeadAttention mha;
  mha.query = Linear::make(store, name + ".query", d, d);
  mha.key = Linear::make(store, name + ".key", d, d);
  mha.value = Linear::make(store, name + ".value", d, d);
  mha.output = Linear::make(store, name + ".output", d, d);
  mha.heads = heads;
  return mha;
}

AttentionResult MultiHeadAttention::operator()(const Tensor& q_in, const Tensor& kv_in, const Tensor& mask,
                                               bool export_weights) const {
  const std::size_t d = query.weight.dim(0);
  if (q_in.rank() != 2 || kv_in.rank() != 2 || q_in.dim(1) != d || kv_in.dim(1) != d) {
    throw ShapeError("attention: query " + shape_str(q_in.shape()) + " / memory " + shape_str(kv_in.shape()) +
                     " do not match width " + std::to_string(d));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads));
  }
  const std::size_t lq = q_in.dim(0), lk = kv_in.dim(0), dk = d / heads;
  if (mask.defined() && mask.shape() != Shape{lq, lk}) {
    throw ShapeError("attention: mask " + shape_str(mask.shape()) + " does not match scores " +
                     shape_str(Shape{lq, lk}));
  }
  const Tensor q = query(q_in), k = key(kv_in), v = value(kv_in);
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  std::vector<double> averaged(export_weights ? lq * lk : 0, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
    const Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
    const Tensor vh = slice_cols(v, h * dk, (h + 1) * dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    if (mask.defined()) scores = add(scores, mask);
    const Tensor weights = softmax(scores, -1);
    if (export_weights) {
      auto w = weights.data();
      for (std::size_t i = 0; i < averaged.size(); ++i) averaged[i] += w[i] / static_cast<double>(heads);
    }
    per_head.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads == 1 ? per_head.front() : concat_cols(per_head);
  AttentionResult result{output(merged), {}};
  if (export_weights) result.attention = Tensor::from({lq, lk}, std::move(averaged));
  return result;
}

Tensor sinusoid_positions(std::size_t length, std::size_t d) {
  std::vector<double> table(length * d);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * rate;
      table[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from({length, d}, std::move(table));
}

Tensor causal_mask(std::size_t length) {
  std::vector<double> mask(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) mask[i * length + j] = -1e30;
  return Tensor::from({length, length}, std::move(mask));
}

}  // namespace sslfuse
