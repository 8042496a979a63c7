#include "sslfuse/model.hpp"

#include "sslfuse/ctc.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"

namespace sslfuse {

EncoderConfig encoder_config(const ModelConfig& cfg) {
  EncoderConfig e;
  e.layers = cfg.encoder_layers;
  e.d = cfg.d;
  e.heads = cfg.heads;
  e.ffn_expansion = cfg.ffn_expansion;
  e.depthwise_kernel = cfg.depthwise_kernel;
  e.subsample_channels = cfg.subsample_channels;
  e.input_dim = cfg.input_dim;
  return e;
}

DecoderConfig decoder_config(const ModelConfig& cfg) {
  return {cfg.decoder_layers, cfg.d, cfg.heads, cfg.ffn_expansion, cfg.vocab};
}

std::size_t fusion_param_count(FusionMode mode, std::size_t ssl_dim, std::size_t d, std::size_t) {
  switch (mode) {
    case FusionMode::kNone: return 0;
    case FusionMode::kSfa: return SslProjection::param_count(ssl_dim, d);
    case FusionMode::kCa:
    case FusionMode::kMultiCa: return SslProjection::param_count(ssl_dim, d) + MultiHeadAttention::param_count(d);
  }
  return 0;
}

ParamReport param_count(const ModelConfig& cfg) {
  const auto enc = encoder_config(cfg);
  ParamReport r;
  r.frontend_subsample = ConvSubsample::param_count(enc);
  for (std::size_t s = 0; s < cfg.fused_sources(); ++s) r.fusion += fusion_param_count(cfg.mode, cfg.ssl_dims.at(s), cfg.d, cfg.heads);
  r.encoder_blocks = cfg.encoder_layers * ConformerBlock::param_count(enc);
  r.decoder = AttentionDecoder::param_count(decoder_config(cfg));
  r.heads = 2 * Linear::param_count(cfg.d, cfg.vocab);
  return r;
}

AsrModel::AsrModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const auto enc = encoder_config(cfg_);
  enc.validate();
  // Fusion parameters are registered last so every mode shares the same
  // initial encoder and decoder weights for a given seed.
  subsample_ = ConvSubsample::make(store_, "subsample", enc);
  stack_ = ConformerStack::make(store_, "encoder", enc);
  decoder_ = AttentionDecoder::make(store_, "decoder", "head.att", decoder_config(cfg_));
  ctc_head_ = Linear::make(store_, "head.ctc", cfg_.d, cfg_.vocab);
  for (std::size_t s = 0; s < cfg_.fused_sources(); ++s) {
    const std::string name = "fusion." + std::to_string(s);
    projections_.push_back(SslProjection::make(store_, name + ".project", cfg_.ssl_dims.at(s), cfg_.d));
    if (cfg_.mode == FusionMode::kCa || cfg_.mode == FusionMode::kMultiCa) {
      cross_attention_.push_back(MultiHeadAttention::make(store_, name + ".cross_attn", cfg_.d, cfg_.heads));
    }
  }
}

ParamReport AsrModel::registered_report() const {
  ParamReport r;
  r.frontend_subsample = store_.count("subsample.");
  r.fusion = store_.count("fusion.");
  r.encoder_blocks = store_.count("encoder.");
  r.decoder = store_.count("decoder.");
  r.heads = store_.count("head.");
  return r;
}

EncoderOutput AsrModel::encode(const Tensor& fbank, std::span<const Tensor> ssl) const {
  EncoderOutput out;
  out.u_hat = conv_subsample(subsample_, fbank);
  const std::size_t sources = cfg_.fused_sources();
  if (ssl.size() < sources) {
    throw InputError("model fuses " + std::to_string(sources) + " SSL sources, got " + std::to_string(ssl.size()));
  }
  Tensor h0 = out.u_hat;
  if (sources > 0) {
    std::vector<Tensor> v_hat;
    for (std::size_t s = 0; s < sources; ++s) v_hat.push_back(project_ssl(projections_[s], ssl[s]));
    FusedSequence fused;
    switch (cfg_.mode) {
      case FusionMode::kSfa: fused = fuse_sfa(out.u_hat, v_hat[0], cfg_.ssl_subsample); break;
      case FusionMode::kCa: fused = fuse_ca(out.u_hat, v_hat[0], cross_attention_[0]); break;
      case FusionMode::kMultiCa: fused = fuse_multi_ca(out.u_hat, v_hat, cross_attention_); break;
      case FusionMode::kNone: break;
    }
    h0 = fused.frames;
    out.attention = std::move(fused.attention);
  }
  out.h = run_conformer_stack(stack_, h0);
  return out;
}

Tensor AsrModel::encode_baseline(const Tensor& fbank) const {
  return run_conformer_stack(stack_, conv_subsample(subsample_, fbank));
}

Tensor AsrModel::ctc_log_probs(const Tensor& h) const { return log_softmax(ctc_head_(h)); }

LossBreakdown AsrModel::loss(const Tensor& fbank, std::span<const Tensor> ssl, std::span<const int> labels) const {
  const auto enc = encode(fbank, ssl);
  LossBreakdown out;
  out.ctc = ctc_loss(ctc_log_probs(enc.h), labels, 0);
  out.att = att_decoder_loss(decoder_, enc.h, labels, 1, cfg_.label_smoothing);
  out.joint = joint_loss(out.ctc, out.att, cfg_.ctc_weight);
  return out;
}

std::vector<int> AsrModel::decode_attention(const Tensor& h, std::size_t max_len) const {
  return att_greedy_decode(decoder_, h, max_len, 1);
}

std::vector<int> AsrModel::decode_ctc(const Tensor& h) const { return ctc_greedy_decode(ctc_head_(h), 0); }

}  // namespace sslfuse
