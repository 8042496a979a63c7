#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sslfuse/layers.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

enum class FusionMode { kNone, kSfa, kCa, kMultiCa };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

// Linear d' -> d followed by layer norm over d.
struct SslProjection {
  Linear linear;
  LayerNorm norm;

  static SslProjection make(ParamStore& store, const std::string& name, std::size_t ssl_dim, std::size_t d);
  static std::size_t param_count(std::size_t ssl_dim, std::size_t d) {
    return Linear::param_count(ssl_dim, d) + LayerNorm::param_count(d);
  }
};

// v[T' x d'] -> v_hat[T' x d].
Tensor project_ssl(const SslProjection& proj, const Tensor& ssl);

struct FusedSequence {
  Tensor frames;                 // L_sub x d
  std::vector<Tensor> attention; // one L_sub x T' map per source (cross attention only)
};

// 0-based SSL row paired with subsampled frame i: min(T', s_v * (i + 1)) - 1.
std::size_t sfa_source_index(std::size_t i, std::size_t ssl_len, std::size_t ssl_subsample);

// h0_i = u_hat_i + v_hat[min(T', s_v * i)] with 1-based i. Parameterless.
FusedSequence fuse_sfa(const Tensor& u_hat, const Tensor& v_hat, std::size_t ssl_subsample);

// h0 = u_hat + MultiHeadAttention(u_hat, v_hat, v_hat). No positional terms.
FusedSequence fuse_ca(const Tensor& u_hat, const Tensor& v_hat, const MultiHeadAttention& attn);

// h0 = u_hat + sum_k I^(k), one cross-attention block per source; needs at
// least two sources.
FusedSequence fuse_multi_ca(const Tensor& u_hat, std::span<const Tensor> v_hats,
                            std::span<const MultiHeadAttention> attns);

// Shared accumulation used by both cross-attention entry points; accepts a
// single source.
FusedSequence cross_attend_sum(const Tensor& u_hat, std::span<const Tensor> v_hats,
                               std::span<const MultiHeadAttention> attns);

}  // namespace sslfuse
