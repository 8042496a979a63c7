#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslfuse/checkpoint.hpp"
#include "sslfuse/config.hpp"
#include "sslfuse/model.hpp"
#include "sslfuse/optim.hpp"
#include "sslfuse/ssl_cache.hpp"
#include "sslfuse/wer.hpp"

namespace sslfuse {

// Inverse square-root schedule with linear warmup. Throws UsageError for step 0.
double lr_at(std::uint64_t step, double noam_scale, std::size_t d, std::size_t warmup);

struct Utterance {
  std::string id;
  std::string transcript;
  std::vector<int> labels;
  Tensor fbank;              // T x n_mels
  std::vector<Tensor> ssl;   // one T' x d' matrix per fused source
};

// Computes fbanks and reads cached SSL features for the sources the model
// fuses. Feature columns map positionally onto cfg.model.ssl_sources.
// A missing or unreadable feature file raises InputError naming the utterance.
std::vector<Utterance> load_dataset(const Manifest& manifest, const RunConfig& cfg);

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_wer = 0.0;
  double seconds = 0.0;
  std::optional<double> train_wer;
  std::size_t skipped = 0;  // utterances too short for their transcript

  // Tab-separated run-log line: epoch, train loss, validation loss,
  // validation WER, seconds.
  std::string log_line() const;
};

// Fixed batch composition for one epoch: seeded shuffle, then length
// bucketing by T within windows, then a seeded shuffle of batch order.
std::vector<std::vector<std::size_t>> plan_batches(const std::vector<Utterance>& data, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch);

struct TrainOutputs {
  std::optional<std::filesystem::path> out_dir;  // best.ckpt, last.ckpt, train.log
  std::function<void(const EpochReport&)> on_epoch;
  bool verbose = false;
};

struct TrainSummary {
  std::vector<EpochReport> epochs;
  double best_valid_loss = 0.0;
  std::size_t best_epoch = 0;
  bool reached_zero_train_wer = false;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::vector<Utterance> train, std::vector<Utterance> valid);

  const RunConfig& config() const { return cfg_; }
  AsrModel& model() { return model_; }
  const AsrModel& model() const { return model_; }
  const AdamState& optimizer() const { return adam_; }
  std::size_t epochs_done() const { return epoch_; }
  std::uint64_t optimizer_steps() const { return adam_.step; }

  // Accumulates gradients of one micro-batch; performs an optimizer step when
  // the accumulation window is full (or `flush` is set). Returns whether
  // parameters were updated and adds the summed loss and counts to the outputs.
  bool train_micro_batch(std::span<const std::size_t> indices, bool flush, double* loss_sum = nullptr,
                         std::size_t* used = nullptr, std::size_t* skipped = nullptr);

  EpochReport run_epoch();
  TrainSummary train(const TrainOutputs& outputs = {});

  double mean_loss(const std::vector<Utterance>& data) const;
  std::vector<std::string> decode(const std::vector<Utterance>& data) const;
  double corpus_error(const std::vector<Utterance>& data) const;

  Checkpoint snapshot() const;
  // Refuses a checkpoint whose fingerprint differs from this trainer's config.
  void restore(const Checkpoint& ckpt);

  double best_valid_loss() const { return best_valid_loss_; }

 private:
  void optimizer_step();

  RunConfig cfg_;
  std::vector<Utterance> train_;
  std::vector<Utterance> valid_;
  AsrModel model_;
  AdamState adam_;
  std::size_t epoch_ = 0;
  std::size_t pending_micro_batches_ = 0;
  double best_valid_loss_;
};

// Parameter and moment blobs named "param/<name>", "adam.m/<name>",
// "adam.v/<name>".
Checkpoint capture_checkpoint(const RunConfig& cfg, const AsrModel& model, const AdamState& adam, std::uint32_t epoch,
                              double best_valid_loss);
// Rebuilds config and model from a checkpoint; the stored config text must
// hash to the stored fingerprint.
RunConfig checkpoint_config(const Checkpoint& ckpt);
void load_parameters(const Checkpoint& ckpt, AsrModel& model);

struct UtteranceResult {
  std::string id;
  std::string reference;
  std::string hypothesis;
  WerBreakdown wer;
};

struct EvalResult {
  std::vector<UtteranceResult> utterances;
  WerBreakdown corpus;
};

// Attention-greedy decoding of every manifest utterance, scored against the
// transcripts. When `expected` is given its fingerprint must match.
EvalResult evaluate(const Checkpoint& ckpt, const Manifest& manifest, const RunConfig* expected = nullptr);

// "id<TAB>text" per line.
void write_hypotheses(const std::vector<std::pair<std::string, std::string>>& rows, const std::filesystem::path& path);
std::vector<std::pair<std::string, std::string>> read_hypotheses(const std::filesystem::path& path);

}  // namespace sslfuse
