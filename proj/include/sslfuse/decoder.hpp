#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sslfuse/layers.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct DecoderConfig {
  std::size_t layers = 6;
  std::size_t d = 256;
  std::size_t heads = 4;
  std::size_t ffn_expansion = 4;
  std::size_t vocab = 30;
};

// Pre-norm transformer decoder layer: causal self-attention, attention over
// the encoder output, feed-forward.
struct DecoderLayer {
  LayerNorm self_norm;
  MultiHeadAttention self_attn;
  LayerNorm src_norm;
  MultiHeadAttention src_attn;
  LayerNorm ffn_norm;
  FeedForward ffn;
};

struct AttentionDecoder {
  Tensor embedding;  // V x d
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;
  Linear output;  // d x V, registered under the heads component

  static AttentionDecoder make(ParamStore& store, const std::string& name, const std::string& output_name,
                               const DecoderConfig& cfg);
  // Excludes the output projection.
  static std::size_t param_count(const DecoderConfig& cfg);
};

// Logits (M x V) for teacher-forced inputs (typically sos + y).
Tensor decoder_logits(const AttentionDecoder& dec, const Tensor& encoded, std::span<const int> inputs);

// Sum over rows of -(sum_k q_k log p_k) with q = 1 - eps on the target and
// eps / (V - 1) elsewhere.
Tensor smoothed_cross_entropy(const Tensor& log_probs, std::span<const int> targets, double smoothing);

// Teacher forcing on sos + y against y + eos; label-smoothed cross entropy
// summed over the M + 1 positions.
Tensor att_decoder_loss(const AttentionDecoder& dec, const Tensor& encoded, std::span<const int> labels,
                        int sos_eos, double smoothing);

// Autoregressive argmax from sos until eos or max_len tokens.
std::vector<int> att_greedy_decode(const AttentionDecoder& dec, const Tensor& encoded, std::size_t max_len,
                                   int sos_eos);

// lambda * ctc + (1 - lambda) * att. Throws ConfigError outside [0, 1].
Tensor joint_loss(const Tensor& ctc, const Tensor& att, double lambda);

}  // namespace sslfuse
