#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sslfuse/errors.hpp"
#include "sslfuse/fusion.hpp"
#include "sslfuse/model.hpp"
#include "test_support.hpp"

using namespace sslfuse;
using testing::grad_check;
using testing::random_tensor;

namespace {

void fill(const Tensor& t, double v) {
  auto d = Tensor(t).mutable_data();
  std::fill(d.begin(), d.end(), v);
}

void set_identity(const Linear& l) {
  fill(l.weight, 0.0);
  fill(l.bias, 0.0);
  const std::size_t in = l.weight.dim(0), out = l.weight.dim(1);
  auto d = Tensor(l.weight).mutable_data();
  for (std::size_t i = 0; i < std::min(in, out); ++i) d[i * out + i] = 1.0;
}

// Gather-then-add reference with 1-based indexing as written in the formula.
std::vector<std::vector<double>> sfa_oracle(const Tensor& u, const Tensor& v, std::size_t sv) {
  std::vector<std::vector<double>> out;
  const std::size_t tp = v.dim(0);
  for (std::size_t i = 1; i <= u.dim(0); ++i) {
    const std::size_t j = std::min(tp, sv * i);
    std::vector<double> row;
    for (std::size_t k = 0; k < u.dim(1); ++k) row.push_back(u.at(i - 1, k) + v.at(j - 1, k));
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST_CASE("project_ssl: identity weights on constant rows give zeros") {
  ParamStore store(1);
  auto proj = SslProjection::make(store, "p", 6, 4);
  set_identity(proj.linear);
  const auto v = Tensor::full({7, 6}, 2.5);
  const auto out = project_ssl(proj, v);
  CHECK(out.shape() == Shape{7, 4});
  for (double x : out.data()) CHECK(x == 0.0);
}

TEST_CASE("project_ssl: width mismatch and parameter count") {
  ParamStore store(1);
  auto proj = SslProjection::make(store, "p", 6, 4);
  CHECK_THROWS_AS(project_ssl(proj, Tensor::zeros({3, 5})), ShapeError);
  CHECK(SslProjection::param_count(768, 256) == 197376);
  CHECK(store.count("p.") == SslProjection::param_count(6, 4));
}

TEST_CASE("fuse_sfa worked example") {
  const auto u = Tensor::matrix({{1, 0}, {0, 1}, {2, 2}});
  const auto v = Tensor::matrix({{.1, .1}, {.2, .2}, {.3, .3}, {.4, .4}, {.5, .5}, {.6, .6}});
  const auto h = fuse_sfa(u, v, 2);
  const std::vector<std::vector<double>> expected = {{1.2, 0.2}, {0.4, 1.4}, {2.6, 2.6}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 2; ++k) CHECK(h.frames.at(i, k) == doctest::Approx(expected[i][k]).epsilon(1e-15));
  CHECK(h.attention.empty());
}

TEST_CASE("fuse_sfa: zero v_hat is the identity, clamp to the last frame") {
  Rng rng(2);
  const auto u = random_tensor(rng, {4, 3}, -1, 1, false);
  CHECK(testing::bitwise_equal(fuse_sfa(u, Tensor::zeros({9, 3}), 2).frames, u));
  CHECK(sfa_source_index(2, 5, 2) == 4);
  CHECK(sfa_source_index(0, 5, 2) == 1);
  const auto v = random_tensor(rng, {5, 3}, -1, 1, false);
  const auto h = fuse_sfa(slice_rows(u, 0, 3), v, 2);
  for (std::size_t k = 0; k < 3; ++k) CHECK(h.frames.at(2, k) == u.at(2, k) + v.at(4, k));
}

TEST_CASE("fuse_sfa matches the brute-force gather-add oracle on all small shapes") {
  Rng rng(17);
  for (std::size_t l = 1; l <= 8; ++l)
    for (std::size_t tp = 1; tp <= 8; ++tp)
      for (std::size_t sv = 1; sv <= 3; ++sv) {
        const auto u = random_tensor(rng, {l, 3}, -1, 1, false);
        const auto v = random_tensor(rng, {tp, 3}, -1, 1, false);
        CHECK(fuse_sfa(u, v, sv).frames.to_rows() == sfa_oracle(u, v, sv));
      }
}

TEST_CASE("fuse_sfa errors") {
  CHECK_THROWS_AS(fuse_sfa(Tensor::zeros({2, 2}), Tensor::zeros({0, 2}), 2), InputError);
  CHECK_THROWS_AS(fuse_sfa(Tensor::zeros({2, 2}), Tensor::zeros({3, 2}), 0), ConfigError);
}

TEST_CASE("SFA adds no parameters beyond the projection") {
  ModelConfig none;
  ModelConfig sfa = none;
  sfa.mode = FusionMode::kSfa;
  sfa.ssl_sources = {"hubert-base"};
  sfa.ssl_dims = {768};
  CHECK(param_count(sfa).total() - param_count(none).total() == 197376);
  CHECK(fusion_param_count(FusionMode::kSfa, 768, 256, 4) == SslProjection::param_count(768, 256));
}

TEST_CASE("fuse_ca: uniform attention under a zero query") {
  ParamStore store(1);
  auto attn = MultiHeadAttention::make(store, "ca", 1, 1);
  for (const Linear* l : {&attn.query, &attn.key, &attn.value, &attn.output}) set_identity(*l);
  const auto h = fuse_ca(Tensor::matrix({{0}}), Tensor::matrix({{1}, {3}}), attn);
  CHECK(h.frames.item() == doctest::Approx(2.0).epsilon(1e-15));
  REQUIRE(h.attention.size() == 1);
  CHECK(h.attention[0].at(0, 0) == doctest::Approx(0.5));
  CHECK(h.attention[0].at(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("fuse_ca: rows sum to one and key/value permutation invariance") {
  ParamStore store(5);
  auto attn = MultiHeadAttention::make(store, "ca", 8, 2);
  Rng rng(6);
  const auto u = random_tensor(rng, {5, 8}, -2, 2, false);
  const auto v = random_tensor(rng, {4, 8}, -2, 2, false);
  const auto base = fuse_ca(u, v, attn);
  REQUIRE(base.attention.size() == 1);
  CHECK(base.attention[0].shape() == Shape{5, 4});
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += base.attention[0].at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  const std::size_t perm[] = {2, 0, 3, 1};
  const auto permuted = fuse_ca(u, gather_rows(v, perm), attn);
  CHECK(testing::max_abs_diff(base.frames, permuted.frames) < 1e-9);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(permuted.attention[0].at(i, j) - base.attention[0].at(i, perm[j])) < 1e-12);
}

TEST_CASE("fuse_ca: parameter counts and head divisibility") {
  CHECK(MultiHeadAttention::param_count(256) == 263168);
  CHECK(fusion_param_count(FusionMode::kCa, 768, 256, 4) == 460544);
  ParamStore store(1);
  CHECK_THROWS_AS(MultiHeadAttention::make(store, "bad", 10, 4), ConfigError);
}

TEST_CASE("fuse_multi_ca properties") {
  ParamStore store(9);
  std::vector<MultiHeadAttention> attns = {MultiHeadAttention::make(store, "a", 6, 2),
                                          MultiHeadAttention::make(store, "b", 6, 2)};
  Rng rng(10);
  const auto u = random_tensor(rng, {4, 6}, -1, 1, false);
  const std::vector<Tensor> vs = {random_tensor(rng, {5, 6}, -1, 1, false), random_tensor(rng, {3, 6}, -1, 1, false)};
  const auto h = fuse_multi_ca(u, vs, attns);
  CHECK(h.attention.size() == 2);
  CHECK(h.attention[1].shape() == Shape{4, 3});

  const std::vector<Tensor> vs_swapped = {vs[1], vs[0]};
  const std::vector<MultiHeadAttention> attns_swapped = {attns[1], attns[0]};
  CHECK(testing::max_abs_diff(h.frames, fuse_multi_ca(u, vs_swapped, attns_swapped).frames) < 1e-12);

  CHECK(testing::bitwise_equal(cross_attend_sum(u, std::span(vs).first(1), std::span(attns).first(1)).frames,
                               fuse_ca(u, vs[0], attns[0]).frames));

  CHECK_THROWS_AS(fuse_multi_ca(u, std::span(vs).first(1), std::span(attns).first(1)), ConfigError);

  for (const auto& a : attns) {
    fill(a.value.weight, 0.0);
    fill(a.value.bias, 0.0);
  }
  CHECK(testing::max_abs_diff(fuse_multi_ca(u, vs, attns).frames, u) == 0.0);
}

TEST_CASE("fusion outputs keep the subsampled length") {
  ParamStore store(2);
  auto attn = MultiHeadAttention::make(store, "ca", 4, 2);
  Rng rng(3);
  for (std::size_t l : {1u, 3u, 7u}) {
    const auto u = random_tensor(rng, {l, 4}, -1, 1, false);
    const auto v = random_tensor(rng, {5, 4}, -1, 1, false);
    CHECK(fuse_sfa(u, v, 2).frames.dim(0) == l);
    CHECK(fuse_ca(u, v, attn).frames.dim(0) == l);
  }
}

TEST_CASE("gradients through both fusion modes") {
  ParamStore store(4);
  auto proj = SslProjection::make(store, "p", 5, 4);
  auto attn = MultiHeadAttention::make(store, "ca", 4, 2);
  Rng rng(12);
  auto u = random_tensor(rng, {3, 4});
  auto v = random_tensor(rng, {6, 5});
  auto w = random_tensor(rng, {3, 4}, -1, 1, false);
  std::vector<Tensor> params = {u, v};
  for (const auto& e : store.entries()) params.push_back(e.value);
  CHECK(grad_check([&] { return sum(mul(fuse_sfa(u, project_ssl(proj, v), 2).frames, w)); }, params).worst() < 1e-4);
  CHECK(grad_check([&] { return sum(mul(fuse_ca(u, project_ssl(proj, v), attn).frames, w)); }, params).worst() < 1e-4);
}

TEST_CASE("fusion mode parsing") {
  CHECK(parse_fusion_mode("none") == FusionMode::kNone);
  CHECK(parse_fusion_mode("sfa") == FusionMode::kSfa);
  CHECK(parse_fusion_mode("ca") == FusionMode::kCa);
  CHECK(parse_fusion_mode("multi-ca") == FusionMode::kMultiCa);
  CHECK(to_string(FusionMode::kMultiCa) == "multi-ca");
  CHECK_THROWS(parse_fusion_mode("concat"));
}
