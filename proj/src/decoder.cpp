#include "sslfuse/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"

namespace sslfuse {

AttentionDecoder AttentionDecoder::make(ParamStore& store, const std::string& name, const std::string& output_name,
                                        const DecoderConfig& cfg) {
  const std::size_t d = cfg.d;
  AttentionDecoder dec;
  dec.embedding = store.uniform(name + ".embedding", {cfg.vocab, d}, 1.0 / std::sqrt(static_cast<double>(d)));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = name + ".layers." + std::to_string(i);
    DecoderLayer layer;
    layer.self_norm = LayerNorm::make(store, p + ".self_norm", d);
    layer.self_attn = MultiHeadAttention::make(store, p + ".self_attn", d, cfg.heads);
    layer.src_norm = LayerNorm::make(store, p + ".src_norm", d);
    layer.src_attn = MultiHeadAttention::make(store, p + ".src_attn", d, cfg.heads);
    layer.ffn_norm = LayerNorm::make(store, p + ".ffn_norm", d);
    layer.ffn = FeedForward::make(store, p + ".ffn", d, d * cfg.ffn_expansion, false);
    dec.layers.push_back(std::move(layer));
  }
  dec.final_norm = LayerNorm::make(store, name + ".final_norm", d);
  dec.output = Linear::make(store, output_name, d, cfg.vocab);
  return dec;
}

std::size_t AttentionDecoder::param_count(const DecoderConfig& cfg) {
  const std::size_t d = cfg.d;
  const std::size_t per_layer = 3 * LayerNorm::param_count(d) + 2 * MultiHeadAttention::param_count(d) +
                                FeedForward::param_count(d, d * cfg.ffn_expansion);
  return cfg.vocab * d + cfg.layers * per_layer + LayerNorm::param_count(d);
}

Tensor decoder_logits(const AttentionDecoder& dec, const Tensor& encoded, std::span<const int> inputs) {
  if (inputs.empty()) throw InputError("decoder needs at least one input token");
  const std::size_t d = dec.embedding.dim(1), vocab = dec.embedding.dim(0);
  std::vector<std::size_t> rows;
  rows.reserve(inputs.size());
  for (int id : inputs) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw InputError("decoder input id out of range: " + std::to_string(id));
    rows.push_back(static_cast<std::size_t>(id));
  }
  Tensor x = gather_rows(dec.embedding, rows);
  x = add(scale(x, std::sqrt(static_cast<double>(d))), sinusoid_positions(rows.size(), d));
  const Tensor mask = causal_mask(rows.size());
  for (const auto& layer : dec.layers) {
    const Tensor n1 = layer.self_norm(x);
    x = add(x, layer.self_attn(n1, n1, mask).output);
    x = add(x, layer.src_attn(layer.src_norm(x), encoded).output);
    x = add(x, layer.ffn(layer.ffn_norm(x)));
  }
  return dec.output(dec.final_norm(x));
}

Tensor smoothed_cross_entropy(const Tensor& log_probs, std::span<const int> targets, double smoothing) {
  if (log_probs.rank() != 2 || log_probs.dim(0) != targets.size()) {
    throw ShapeError("smoothed_cross_entropy: " + shape_str(log_probs.shape()) + " scores for " +
                     std::to_string(targets.size()) + " targets");
  }
  const std::size_t n = log_probs.dim(0), v = log_probs.dim(1);
  if (v < 2) throw ShapeError("smoothed_cross_entropy: vocabulary too small");
  const double off = smoothing / static_cast<double>(v - 1), on = 1.0 - smoothing;
  // Target distribution q, row-major n x v.
  std::vector<double> q(n * v, off);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v) throw InputError("target id out of range");
    q[i * v + static_cast<std::size_t>(targets[i])] = on;
  }
  auto lp = log_probs.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) loss -= q[i] * lp[i];
  const bool track = active_tape() && log_probs.requires_grad();
  Tensor out = Tensor::scalar(loss, track);
  if (track) {
    auto in = log_probs.impl_ptr();
    auto o = out.impl_ptr();
    active_tape()->record(out, [in, o, q = std::move(q)] {
      const double g = o->grad[0];
      for (std::size_t i = 0; i < q.size(); ++i) in->grad[i] -= g * q[i];
    });
  }
  return out;
}

Tensor att_decoder_loss(const AttentionDecoder& dec, const Tensor& encoded, std::span<const int> labels, int sos_eos,
                        double smoothing) {
  if (labels.empty()) throw InputError("attention decoder loss needs a non-empty label sequence");
  std::vector<int> inputs{sos_eos}, targets(labels.begin(), labels.end());
  inputs.insert(inputs.end(), labels.begin(), labels.end());
  targets.push_back(sos_eos);
  return smoothed_cross_entropy(log_softmax(decoder_logits(dec, encoded, inputs)), targets, smoothing);
}

std::vector<int> att_greedy_decode(const AttentionDecoder& dec, const Tensor& encoded, std::size_t max_len,
                                   int sos_eos) {
  if (max_len == 0) throw InputError("att_greedy_decode: max_len must be >= 1");
  std::vector<int> prefix{sos_eos};
  std::vector<int> out;
  while (out.size() < max_len) {
    const Tensor logits = decoder_logits(dec, encoded, prefix);
    const std::size_t v = logits.dim(1);
    auto last = logits.data().subspan((logits.dim(0) - 1) * v, v);
    const int best = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    if (best == sos_eos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

Tensor joint_loss(const Tensor& ctc, const Tensor& att, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ctc weight must lie in [0, 1], got " + std::to_string(lambda));
  return add(scale(ctc, lambda), scale(att, 1.0 - lambda));
}

}  // namespace sslfuse
