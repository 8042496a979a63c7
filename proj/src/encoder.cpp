#include "sslfuse/encoder.hpp"

#include <cmath>

#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"

namespace sslfuse {

void EncoderConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("model width " + std::to_string(d) + " must be a positive multiple of heads (" +
                      std::to_string(heads) + ")");
  }
  if (depthwise_kernel % 2 == 0) throw ConfigError("depthwise kernel must be odd, got " + std::to_string(depthwise_kernel));
  if (ffn_expansion == 0 || subsample_channels == 0 || input_dim == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
}

ConvSubsample ConvSubsample::make(ParamStore& store, const std::string& name, const EncoderConfig& cfg) {
  ConvSubsample sub;
  sub.kernels = store.uniform(name + ".conv.kernels", {cfg.subsample_channels, 1, 3, 3}, 1.0 / 3.0);
  sub.bias = store.zeros(name + ".conv.bias", {cfg.subsample_channels});
  sub.project = Linear::make(store, name + ".project", cfg.subsample_channels * cfg.subsampled_freq(), cfg.d);
  return sub;
}

std::size_t ConvSubsample::param_count(const EncoderConfig& cfg) {
  return cfg.subsample_channels * 9 + cfg.subsample_channels +
         Linear::param_count(cfg.subsample_channels * cfg.subsampled_freq(), cfg.d);
}

std::size_t subsampled_length(std::size_t num_frames) { return num_frames / 2; }

Tensor conv_subsample(const ConvSubsample& sub, const Tensor& fbank) {
  if (fbank.rank() != 2) throw ShapeError("conv_subsample: expected T x F fbank, got " + shape_str(fbank.shape()));
  const std::size_t t = fbank.dim(0), f = fbank.dim(1);
  if (t < 4) throw InputError("conv_subsample: need at least 4 frames, got " + std::to_string(t));
  const std::size_t channels = sub.kernels.dim(0);
  if (channels * ((f - 1) / 2 + 1) != sub.project.weight.dim(0)) {
    throw ShapeError("conv_subsample: fbank width " + std::to_string(f) + " does not match the subsampling layer");
  }
  Tensor x = reshape(fbank, {1, t, f});
  x = relu(conv2d(x, sub.kernels, sub.bias, {2, 2}, {1, 1}));  // C x ceil(T/2) x F'
  const std::size_t keep = subsampled_length(t);
  const std::size_t fr = x.dim(2);
  x = permute(x, {1, 0, 2});                 // T' x C x F'
  x = reshape(x, {x.dim(0), channels * fr});  // T' x (C*F')
  if (x.dim(0) != keep) x = slice_rows(x, 0, keep);
  return sub.project(x);
}

ConformerBlock ConformerBlock::make(ParamStore& store, const std::string& name, const EncoderConfig& cfg) {
  const std::size_t d = cfg.d, hidden = cfg.d * cfg.ffn_expansion, k = cfg.depthwise_kernel;
  ConformerBlock b;
  b.ffn1_norm = LayerNorm::make(store, name + ".ffn1_norm", d);
  b.ffn1 = FeedForward::make(store, name + ".ffn1", d, hidden, true);
  b.attn_norm = LayerNorm::make(store, name + ".attn_norm", d);
  b.self_attn = MultiHeadAttention::make(store, name + ".self_attn", d, cfg.heads);
  b.conv.norm = LayerNorm::make(store, name + ".conv.norm", d);
  b.conv.pointwise_in = Linear::make(store, name + ".conv.pointwise_in", d, 2 * d);
  b.conv.depthwise_kernels = store.uniform(name + ".conv.depthwise.kernels", {d, k}, 1.0 / std::sqrt(static_cast<double>(k)));
  b.conv.depthwise_bias = store.zeros(name + ".conv.depthwise.bias", {d});
  b.conv.depthwise_norm = LayerNorm::make(store, name + ".conv.depthwise_norm", d);
  b.conv.pointwise_out = Linear::make(store, name + ".conv.pointwise_out", d, d);
  b.ffn2_norm = LayerNorm::make(store, name + ".ffn2_norm", d);
  b.ffn2 = FeedForward::make(store, name + ".ffn2", d, hidden, true);
  b.final_norm = LayerNorm::make(store, name + ".final_norm", d);
  return b;
}

std::size_t ConformerBlock::param_count(const EncoderConfig& cfg) {
  const std::size_t d = cfg.d, hidden = cfg.d * cfg.ffn_expansion;
  const std::size_t ffn = LayerNorm::param_count(d) + FeedForward::param_count(d, hidden);
  const std::size_t attn = LayerNorm::param_count(d) + MultiHeadAttention::param_count(d);
  const std::size_t conv = LayerNorm::param_count(d) + Linear::param_count(d, 2 * d) + d * cfg.depthwise_kernel + d +
                           LayerNorm::param_count(d) + Linear::param_count(d, d);
  return 2 * ffn + attn + conv + LayerNorm::param_count(d);
}

Tensor conformer_block(const ConformerBlock& b, const Tensor& x_in) {
  Tensor x = x_in;
  x = add(x, scale(b.ffn1(b.ffn1_norm(x)), 0.5));
  {
    const Tensor n = b.attn_norm(x);
    x = add(x, b.self_attn(n, n).output);
  }
  {
    Tensor c = b.conv.pointwise_in(b.conv.norm(x));
    c = glu(c);
    c = depthwise_conv1d(c, b.conv.depthwise_kernels, b.conv.depthwise_bias, b.conv.depthwise_kernels.dim(1) / 2);
    c = swish(b.conv.depthwise_norm(c));
    x = add(x, b.conv.pointwise_out(c));
  }
  x = add(x, scale(b.ffn2(b.ffn2_norm(x)), 0.5));
  return b.final_norm(x);
}

ConformerStack ConformerStack::make(ParamStore& store, const std::string& name, const EncoderConfig& cfg) {
  ConformerStack stack;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    stack.blocks.push_back(ConformerBlock::make(store, name + "." + std::to_string(i), cfg));
  }
  return stack;
}

Tensor run_conformer_stack(const ConformerStack& stack, const Tensor& h0) {
  const std::size_t d = h0.dim(1);
  Tensor h = add(scale(h0, std::sqrt(static_cast<double>(d))), sinusoid_positions(h0.dim(0), d));
  for (const auto& block : stack.blocks) h = conformer_block(block, h);
  return h;
}

}  // namespace sslfuse
