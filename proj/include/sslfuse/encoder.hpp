#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sslfuse/layers.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct EncoderConfig {
  std::size_t layers = 12;
  std::size_t d = 256;
  std::size_t heads = 4;
  std::size_t ffn_expansion = 4;
  std::size_t depthwise_kernel = 15;
  std::size_t subsample_channels = 256;
  std::size_t input_dim = 80;  // fbank bins

  void validate() const;
  // Flattened width after the stride-2 frequency axis.
  std::size_t subsampled_freq() const { return (input_dim - 1) / 2 + 1; }
};

// Single stride-2 conv stage (kernel 3, pad 1) over time and frequency, ReLU,
// then a linear flatten of channels x frequency to d.
struct ConvSubsample {
  Tensor kernels;  // C x 1 x 3 x 3
  Tensor bias;     // C
  Linear project;

  static ConvSubsample make(ParamStore& store, const std::string& name, const EncoderConfig& cfg);
  static std::size_t param_count(const EncoderConfig& cfg);
};

// Output length floor(T / 2); a trailing frame is dropped when T is odd.
std::size_t subsampled_length(std::size_t num_frames);

// u[T x F] -> u_hat[floor(T/2) x d]. Throws InputError when T < 4.
Tensor conv_subsample(const ConvSubsample& sub, const Tensor& fbank);

struct ConvModule {
  LayerNorm norm;
  Linear pointwise_in;  // d -> 2d, then GLU
  Tensor depthwise_kernels;
  Tensor depthwise_bias;
  LayerNorm depthwise_norm;
  Linear pointwise_out;
};

// Macaron conformer layer: half FFN, self-attention, convolution module,
// half FFN, final layer norm. Every sub-block is pre-norm with a residual.
struct ConformerBlock {
  LayerNorm ffn1_norm;
  FeedForward ffn1;
  LayerNorm attn_norm;
  MultiHeadAttention self_attn;
  ConvModule conv;
  LayerNorm ffn2_norm;
  FeedForward ffn2;
  LayerNorm final_norm;

  static ConformerBlock make(ParamStore& store, const std::string& name, const EncoderConfig& cfg);
  static std::size_t param_count(const EncoderConfig& cfg);
};

Tensor conformer_block(const ConformerBlock& block, const Tensor& x);

struct ConformerStack {
  std::vector<ConformerBlock> blocks;

  static ConformerStack make(ParamStore& store, const std::string& name, const EncoderConfig& cfg);
};

// Adds sinusoidal positions (after scaling by sqrt(d)) and runs every block.
Tensor run_conformer_stack(const ConformerStack& stack, const Tensor& h0);

}  // namespace sslfuse
