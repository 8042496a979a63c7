#include <doctest.h>

#include <algorithm>

#include "sslfuse/config.hpp"
#include "sslfuse/encoder.hpp"
#include "sslfuse/errors.hpp"
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

EncoderConfig mini(std::size_t layers = 1) {
  EncoderConfig c;
  c.layers = layers;
  c.d = 8;
  c.heads = 2;
  c.ffn_expansion = 2;
  c.depthwise_kernel = 3;
  c.subsample_channels = 2;
  c.input_dim = 6;
  return c;
}

ModelConfig mini_model(FusionMode mode) {
  ModelConfig m;
  m.mode = mode;
  m.d = 8;
  m.heads = 2;
  m.encoder_layers = 2;
  m.decoder_layers = 1;
  m.ffn_expansion = 2;
  m.depthwise_kernel = 3;
  m.subsample_channels = 2;
  m.input_dim = 6;
  if (mode != FusionMode::kNone) {
    m.ssl_sources = {"synthetic-a", "synthetic-b"};
    m.ssl_dims = {5, 7};
  }
  return m;
}

}  // namespace

TEST_CASE("subsampled length formula") {
  CHECK(subsampled_length(10) == 5);
  CHECK(subsampled_length(9) == 4);
  ParamStore store(1);
  const auto cfg = mini();
  const auto sub = ConvSubsample::make(store, "s", cfg);
  Rng rng(1);
  CHECK(conv_subsample(sub, random_tensor(rng, {10, 6}, -1, 1, false)).shape() == Shape{5, 8});
  CHECK(conv_subsample(sub, random_tensor(rng, {9, 6}, -1, 1, false)).shape() == Shape{4, 8});
  CHECK_THROWS_AS(conv_subsample(sub, Tensor::zeros({3, 6})), InputError);
  CHECK_THROWS_AS(conv_subsample(sub, Tensor::zeros({8, 7})), ShapeError);
}

TEST_CASE("default subsampling produces 256-wide frames") {
  EncoderConfig cfg;
  ParamStore store(2);
  const auto sub = ConvSubsample::make(store, "s", cfg);
  Rng rng(2);
  CHECK(conv_subsample(sub, random_tensor(rng, {12, 80}, -1, 1, false)).shape() == Shape{6, 256});
  CHECK(store.count() == ConvSubsample::param_count(cfg));
}

TEST_CASE("zeroed conformer block reduces to the final layer norm") {
  ParamStore store(3);
  const auto cfg = mini();
  const auto block = ConformerBlock::make(store, "b", cfg);
  for (const auto& e : store.entries()) fill(e.value, 0.0);
  fill(block.final_norm.gain, 1.0);
  Rng rng(4);
  const auto x = random_tensor(rng, {7, 8}, -1, 1, false);
  const auto expected = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), block.final_norm.eps);
  CHECK(testing::max_abs_diff(conformer_block(block, x), expected) < 1e-12);
}

TEST_CASE("conformer block preserves shape at default width") {
  EncoderConfig cfg;
  cfg.layers = 1;
  ParamStore store(5);
  const auto block = ConformerBlock::make(store, "b", cfg);
  Rng rng(6);
  CHECK(conformer_block(block, random_tensor(rng, {7, 256}, -1, 1, false)).shape() == Shape{7, 256});
  CHECK(store.count() == ConformerBlock::param_count(cfg));
}

TEST_CASE("conformer block gradient check on a miniature") {
  ParamStore store(7);
  const auto block = ConformerBlock::make(store, "b", mini());
  Rng rng(8);
  auto x = random_tensor(rng, {5, 8});
  auto w = random_tensor(rng, {5, 8}, -1, 1, false);
  std::vector<Tensor> params = {x};
  for (const auto& e : store.entries()) params.push_back(e.value);
  const auto r = grad_check([&] { return sum(mul(conformer_block(block, x), w)); }, params);
  CHECK(r.worst() < 1e-4);
}

TEST_CASE("whole encoder gradient check on a 2-layer miniature") {
  const auto cfg = mini(2);
  ParamStore store(9);
  const auto sub = ConvSubsample::make(store, "s", cfg);
  const auto stack = ConformerStack::make(store, "e", cfg);
  Rng rng(10);
  auto u = random_tensor(rng, {9, 6});
  auto w = random_tensor(rng, {4, 8}, -1, 1, false);
  std::vector<Tensor> params;
  for (const auto& e : store.entries()) params.push_back(e.value);
  const auto r = grad_check([&] { return sum(mul(run_conformer_stack(stack, conv_subsample(sub, u)), w)); }, params);
  CHECK(r.worst() < 1e-4);
}

TEST_CASE("mode NONE encode equals the baseline conformer bitwise") {
  AsrModel model(mini_model(FusionMode::kNone), 11);
  Rng rng(12);
  for (int k = 0; k < 5; ++k) {
    const auto u = random_tensor(rng, {8 + 3 * static_cast<std::size_t>(k), 6}, -1, 1, false);
    CHECK(testing::bitwise_equal(model.encode(u, {}).h, model.encode_baseline(u)));
  }
}

TEST_CASE("SFA with a zero projection equals the baseline") {
  auto cfg = mini_model(FusionMode::kSfa);
  AsrModel model(cfg, 13);
  fill(model.projections()[0].norm.gain, 0.0);
  fill(model.projections()[0].norm.bias, 0.0);
  Rng rng(14);
  const auto u = random_tensor(rng, {12, 6}, -1, 1, false);
  const std::vector<Tensor> ssl = {random_tensor(rng, {6, 5}, -1, 1, false)};
  CHECK(testing::max_abs_diff(model.encode(u, ssl).h, model.encode_baseline(u)) == 0.0);
}

TEST_CASE("encoder output length is floor(T/2) in every mode") {
  Rng rng(15);
  for (auto mode : {FusionMode::kNone, FusionMode::kSfa, FusionMode::kCa, FusionMode::kMultiCa}) {
    AsrModel model(mini_model(mode), 16);
    for (std::size_t t : {8u, 11u}) {
      const auto u = random_tensor(rng, {t, 6}, -1, 1, false);
      const std::vector<Tensor> ssl = {random_tensor(rng, {4, 5}, -1, 1, false),
                                       random_tensor(rng, {6, 7}, -1, 1, false)};
      CHECK(model.encode(u, ssl).h.shape() == Shape{t / 2, 8});
    }
  }
}

TEST_CASE("closed-form parameter counts match the registered tensors") {
  for (auto mode : {FusionMode::kNone, FusionMode::kSfa, FusionMode::kCa, FusionMode::kMultiCa}) {
    const auto cfg = mini_model(mode);
    AsrModel model(cfg, 1);
    CHECK(model.registered_report() == param_count(cfg));
    CHECK(model.params().count() == param_count(cfg).total());
  }
  RunConfig full;
  full.model.mode = FusionMode::kCa;
  full.model.ssl_sources = {"hubert-base"};
  finalize(full);
  AsrModel big(full.model, 1);
  CHECK(big.registered_report() == param_count(full.model));
}

TEST_CASE("parameter accounting relations") {
  ModelConfig none;
  ModelConfig ca = none;
  ca.mode = FusionMode::kCa;
  ca.ssl_sources = {"hubert-base"};
  ca.ssl_dims = {768};
  CHECK(param_count(none).total() < param_count(ca).total());
  CHECK(param_count(ca).total() - param_count(none).total() == 460544);
  ModelConfig shallow = none;
  shallow.encoder_layers = 2;
  EncoderConfig enc;
  CHECK(param_count(none).total() - param_count(shallow).total() == 10 * ConformerBlock::param_count(enc));
  const auto r = param_count(ca);
  CHECK(r.total() == r.frontend_subsample + r.fusion + r.encoder_blocks + r.decoder + r.heads);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.depthwise_kernel = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
