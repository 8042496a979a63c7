#include "sslfuse/fusion.hpp"

#include <algorithm>

#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"

namespace sslfuse {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kNone: return "none";
    case FusionMode::kSfa: return "sfa";
    case FusionMode::kCa: return "ca";
    case FusionMode::kMultiCa: return "multi-ca";
  }
  return "none";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "none") return FusionMode::kNone;
  if (text == "sfa") return FusionMode::kSfa;
  if (text == "ca") return FusionMode::kCa;
  if (text == "multi-ca" || text == "multi_ca") return FusionMode::kMultiCa;
  throw ConfigError("unknown fusion mode '" + text + "' (expected none, sfa, ca or multi-ca)");
}

SslProjection SslProjection::make(ParamStore& store, const std::string& name, std::size_t ssl_dim, std::size_t d) {
  return {Linear::make(store, name + ".linear", ssl_dim, d), LayerNorm::make(store, name + ".norm", d)};
}

Tensor project_ssl(const SslProjection& proj, const Tensor& ssl) {
  if (ssl.rank() != 2 || ssl.dim(1) != proj.linear.weight.dim(0)) {
    throw ShapeError("project_ssl: features " + (ssl.defined() ? shape_str(ssl.shape()) : std::string("undefined")) +
                     " do not have " + std::to_string(proj.linear.weight.dim(0)) + " columns");
  }
  return proj.norm(proj.linear(ssl));
}

std::size_t sfa_source_index(std::size_t i, std::size_t ssl_len, std::size_t ssl_subsample) {
  return std::min(ssl_len, ssl_subsample * (i + 1)) - 1;
}

FusedSequence fuse_sfa(const Tensor& u_hat, const Tensor& v_hat, std::size_t ssl_subsample) {
  if (!v_hat.defined() || v_hat.rank() != 2 || v_hat.dim(0) == 0) throw InputError("fuse_sfa: empty SSL sequence");
  if (ssl_subsample == 0) throw ConfigError("fuse_sfa: subsampling factor must be >= 1");
  if (u_hat.rank() != 2 || u_hat.dim(1) != v_hat.dim(1)) {
    throw ShapeError("fuse_sfa: widths differ, " + shape_str(u_hat.shape()) + " vs " + shape_str(v_hat.shape()));
  }
  std::vector<std::size_t> rows(u_hat.dim(0));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = sfa_source_index(i, v_hat.dim(0), ssl_subsample);
  return {add(u_hat, gather_rows(v_hat, rows)), {}};
}

FusedSequence cross_attend_sum(const Tensor& u_hat, std::span<const Tensor> v_hats,
                               std::span<const MultiHeadAttention> attns) {
  if (v_hats.empty() || v_hats.size() != attns.size()) {
    throw ConfigError("cross attention: " + std::to_string(v_hats.size()) + " sources for " +
                      std::to_string(attns.size()) + " attention blocks");
  }
  FusedSequence fused{u_hat, {}};
  for (std::size_t k = 0; k < v_hats.size(); ++k) {
    if (!v_hats[k].defined() || v_hats[k].rank() != 2 || v_hats[k].dim(0) == 0) {
      throw InputError("cross attention: empty SSL sequence for source " + std::to_string(k));
    }
    auto attended = attns[k](u_hat, v_hats[k], {}, true);
    fused.frames = add(fused.frames, attended.output);
    fused.attention.push_back(std::move(attended.attention));
  }
  return fused;
}

FusedSequence fuse_ca(const Tensor& u_hat, const Tensor& v_hat, const MultiHeadAttention& attn) {
  return cross_attend_sum(u_hat, std::span<const Tensor>(&v_hat, 1), std::span<const MultiHeadAttention>(&attn, 1));
}

FusedSequence fuse_multi_ca(const Tensor& u_hat, std::span<const Tensor> v_hats,
                            std::span<const MultiHeadAttention> attns) {
  if (v_hats.size() < 2) {
    throw ConfigError("multi-source cross attention needs at least 2 sources, got " + std::to_string(v_hats.size()));
  }
  return cross_attend_sum(u_hat, v_hats, attns);
}

}  // namespace sslfuse
