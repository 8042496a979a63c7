#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sslfuse/audio.hpp"
#include "sslfuse/fusion.hpp"

namespace sslfuse {

struct ModelConfig {
  FusionMode mode = FusionMode::kNone;
  std::vector<std::string> ssl_sources;  // one tag per feature column
  std::vector<std::size_t> ssl_dims;     // resolved widths, parallel to ssl_sources
  std::size_t ssl_subsample = 2;         // s_v for SFA
  std::size_t d = 256;
  std::size_t heads = 4;
  std::size_t encoder_layers = 12;
  std::size_t decoder_layers = 6;
  std::size_t ffn_expansion = 4;
  std::size_t depthwise_kernel = 15;
  std::size_t subsample_channels = 256;
  std::size_t input_dim = 80;
  std::size_t vocab = 30;
  double ctc_weight = 0.3;
  double label_smoothing = 0.1;

  // Number of SSL streams the fusion layer consumes for this mode.
  std::size_t fused_sources() const;
  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  std::size_t grad_accum = 4;
  double noam_scale = 1.0;
  std::size_t warmup_steps = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
  std::size_t max_decode_len = 200;
  // Stop once training WER reaches zero (toy overfit runs).
  bool stop_at_zero_train_wer = false;
  // Decode the training set after each epoch (needed for stop_at_zero_train_wer).
  bool track_train_wer = false;

  void validate() const;
};

struct RunConfig {
  FrontendConfig frontend;
  ModelConfig model;
  TrainConfig train;

  // Canonical key=value text; parse(to_text()) reproduces the config.
  std::string to_text() const;
  // Hash over every key that shapes the model or its inputs.
  std::uint64_t fingerprint() const;
};

// key=value lines; '#' starts a comment. Unknown keys are errors.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Fills ssl_dims from the source registry (or keeps explicit widths for
// synthetic sources) and validates everything.
void finalize(RunConfig& cfg);

// Small configuration used by the toy corpus acceptance runs.
RunConfig toy_run_config(FusionMode mode);

}  // namespace sslfuse
