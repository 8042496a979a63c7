#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslfuse/config.hpp"
#include "sslfuse/decoder.hpp"
#include "sslfuse/encoder.hpp"
#include "sslfuse/fusion.hpp"
#include "sslfuse/layers.hpp"
#include "sslfuse/vocab.hpp"

namespace sslfuse {

struct ParamReport {
  std::size_t frontend_subsample = 0;
  std::size_t fusion = 0;
  std::size_t encoder_blocks = 0;
  std::size_t decoder = 0;
  std::size_t heads = 0;

  std::size_t total() const { return frontend_subsample + fusion + encoder_blocks + decoder + heads; }
  bool operator==(const ParamReport&) const = default;
};

// Closed-form parameter counts per component.
ParamReport param_count(const ModelConfig& cfg);
// Fusion-path parameters of one source: projection (+ cross attention).
std::size_t fusion_param_count(FusionMode mode, std::size_t ssl_dim, std::size_t d, std::size_t heads);

struct EncoderOutput {
  Tensor u_hat;
  Tensor h;
  std::vector<Tensor> attention;  // fusion attention maps (cross attention modes)
};

struct LossBreakdown {
  Tensor joint;
  Tensor ctc;
  Tensor att;
};

// Parameter names are prefixed by component: "subsample.", "fusion.",
// "encoder.", "decoder.", "head.".
class AsrModel {
 public:
  AsrModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  ParamReport registered_report() const;

  // `ssl` holds one T' x d' matrix per configured source; only the first
  // fused_sources() entries are read.
  EncoderOutput encode(const Tensor& fbank, std::span<const Tensor> ssl) const;
  // The conformer without any fusion code path.
  Tensor encode_baseline(const Tensor& fbank) const;

  Tensor ctc_log_probs(const Tensor& h) const;
  LossBreakdown loss(const Tensor& fbank, std::span<const Tensor> ssl, std::span<const int> labels) const;

  std::vector<int> decode_attention(const Tensor& h, std::size_t max_len) const;
  std::vector<int> decode_ctc(const Tensor& h) const;

  const AttentionDecoder& decoder() const { return decoder_; }
  const std::vector<SslProjection>& projections() const { return projections_; }
  const std::vector<MultiHeadAttention>& cross_attention() const { return cross_attention_; }
  const ConformerStack& encoder_stack() const { return stack_; }
  const ConvSubsample& subsample() const { return subsample_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  ConvSubsample subsample_;
  ConformerStack stack_;
  AttentionDecoder decoder_;
  Linear ctc_head_;
  std::vector<SslProjection> projections_;
  std::vector<MultiHeadAttention> cross_attention_;
};

EncoderConfig encoder_config(const ModelConfig& cfg);
DecoderConfig decoder_config(const ModelConfig& cfg);

}  // namespace sslfuse
