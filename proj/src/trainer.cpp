#include "sslfuse/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "sslfuse/errors.hpp"
#include "sslfuse/ops.hpp"
#include "sslfuse/rng.hpp"
#include "sslfuse/vocab.hpp"

namespace sslfuse {

double lr_at(std::uint64_t step, double noam_scale, std::size_t d, std::size_t warmup) {
  if (step == 0) throw UsageError("lr_at: step must be >= 1");
  if (d == 0 || warmup == 0) throw ConfigError("lr_at: d and warmup must be positive");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return noam_scale * std::pow(static_cast<double>(d), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

std::vector<Utterance> load_dataset(const Manifest& manifest, const RunConfig& cfg) {
  const auto vocab = Vocabulary::characters();
  const std::size_t sources = cfg.model.fused_sources();
  std::vector<Utterance> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    Utterance u;
    u.id = rec.id;
    u.transcript = normalize_text(rec.transcript);
    try {
      u.labels = vocab.encode(rec.transcript);
    } catch (const InputError& e) {
      throw InputError("utterance " + rec.id + ": " + e.what());
    }
    u.fbank = fbank(read_wav(manifest.resolve(rec.audio_path)), cfg.frontend).frames;
    for (std::size_t s = 0; s < sources; ++s) {
      const auto& tag = cfg.model.ssl_sources[s];
      if (s >= rec.feature_paths.size()) {
        throw InputError("utterance " + rec.id + ": missing features for source " + tag);
      }
      const auto path = manifest.resolve(rec.feature_paths[s]);
      if (!std::filesystem::exists(path)) {
        throw InputError("utterance " + rec.id + ": missing features for source " + tag + " (" + path.string() + ")");
      }
      SslSequence seq;
      try {
        seq = read_features(path);
      } catch (const Error& e) {
        throw InputError("utterance " + rec.id + ": " + e.what());
      }
      if (seq.dim != cfg.model.ssl_dims[s]) {
        throw InputError("utterance " + rec.id + ": dimension mismatch (expected " +
                         std::to_string(cfg.model.ssl_dims[s]) + ", found " + std::to_string(seq.dim) + ") in " +
                         path.string());
      }
      u.ssl.push_back(seq.to_tensor());
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::string EpochReport::log_line() const {
  std::ostringstream os;
  os << epoch << '\t' << std::setprecision(9) << train_loss << '\t' << valid_loss << '\t' << valid_wer << '\t'
     << std::setprecision(4) << std::fixed << seconds;
  return os.str();
}

std::vector<std::vector<std::size_t>> plan_batches(const std::vector<Utterance>& data, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(splitmix64(seed ^ splitmix64(epoch + 1)));
  seeded_shuffle(order, rng);
  const std::size_t window = batch_size * 4;
  for (std::size_t start = 0; start < order.size(); start += window) {
    const auto end = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + window));
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), end, [&](std::size_t a, std::size_t b) {
      return data[a].fbank.dim(0) < data[b].fbank.dim(0);
    });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  }
  seeded_shuffle(batches, rng);
  return batches;
}

Trainer::Trainer(RunConfig cfg, std::vector<Utterance> train, std::vector<Utterance> valid)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      valid_(std::move(valid)),
      model_(cfg_.model, cfg_.train.seed),
      best_valid_loss_(std::numeric_limits<double>::infinity()) {
  cfg_.train.validate();
  if (train_.empty()) throw InputError("training set is empty");
}

bool Trainer::train_micro_batch(std::span<const std::size_t> indices, bool flush, double* loss_sum,
                                std::size_t* used, std::size_t* skipped) {
  const double weight = 1.0 / static_cast<double>(std::max<std::size_t>(1, indices.size()) * cfg_.train.grad_accum);
  for (auto idx : indices) {
    const auto& u = train_.at(idx);
    Tape tape;
    TapeScope scope(tape);
    LossBreakdown loss;
    try {
      loss = model_.loss(u.fbank, u.ssl, u.labels);
    } catch (const LengthError&) {
      if (skipped) ++*skipped;
      continue;
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(adam_.step + 1) + " (utterance " + u.id + "): " + e.what());
    }
    const double value = loss.joint.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(adam_.step + 1) + " (utterance " + u.id + ")");
    }
    backward(scale(loss.joint, weight));
    if (loss_sum) *loss_sum += value;
    if (used) ++*used;
  }
  ++pending_micro_batches_;
  if (pending_micro_batches_ >= cfg_.train.grad_accum || flush) {
    optimizer_step();
    return true;
  }
  return false;
}

void Trainer::optimizer_step() {
  auto params = model_.params().tensors();
  if (cfg_.train.grad_clip > 0.0) clip_grad_norm(params, cfg_.train.grad_clip);
  const double lr = lr_at(adam_.step + 1, cfg_.train.noam_scale, cfg_.model.d, cfg_.train.warmup_steps);
  AdamOptions opts;
  opts.beta1 = cfg_.train.adam_beta1;
  opts.beta2 = cfg_.train.adam_beta2;
  opts.eps = cfg_.train.adam_eps;
  opts.round_to_f32 = true;
  adam_step(params, adam_, lr, opts);
  model_.params().zero_grad();
  pending_micro_batches_ = 0;
}

double Trainer::mean_loss(const std::vector<Utterance>& data) const {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& u : data) {
    try {
      total += model_.loss(u.fbank, u.ssl, u.labels).joint.item();
      ++n;
    } catch (const LengthError&) {
    }
  }
  return n ? total / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::vector<std::string> Trainer::decode(const std::vector<Utterance>& data) const {
  const auto vocab = Vocabulary::characters();
  std::vector<std::string> out;
  out.reserve(data.size());
  for (const auto& u : data) {
    const auto enc = model_.encode(u.fbank, u.ssl);
    out.push_back(vocab.decode(model_.decode_attention(enc.h, cfg_.train.max_decode_len)));
  }
  return out;
}

double Trainer::corpus_error(const std::vector<Utterance>& data) const {
  const auto hyps = decode(data);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) pairs.emplace_back(data[i].transcript, hyps[i]);
  return corpus_wer(pairs).rate;
}

EpochReport Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  EpochReport report;
  report.epoch = epoch_ + 1;
  const auto batches = plan_batches(train_, cfg_.train.batch_size, cfg_.train.seed, epoch_);
  double loss_sum = 0.0;
  std::size_t used = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    train_micro_batch(batches[b], b + 1 == batches.size(), &loss_sum, &used, &report.skipped);
  }
  ++epoch_;
  report.train_loss = used ? loss_sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
  if (!valid_.empty()) {
    report.valid_loss = mean_loss(valid_);
    report.valid_wer = corpus_error(valid_);
  }
  if (cfg_.train.track_train_wer || cfg_.train.stop_at_zero_train_wer) report.train_wer = corpus_error(train_);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainSummary Trainer::train(const TrainOutputs& outputs) {
  TrainSummary summary;
  std::ofstream log;
  if (outputs.out_dir) {
    std::filesystem::create_directories(*outputs.out_dir);
    const auto mode = epoch_ == 0 ? std::ios::trunc : std::ios::app;
    log.open(*outputs.out_dir / "train.log", std::ios::out | mode);
    if (!log) throw StorageError("cannot open run log in " + outputs.out_dir->string());
  }
  while (epoch_ < cfg_.train.epochs) {
    auto report = run_epoch();
    if (!std::isfinite(report.valid_loss) && !valid_.empty()) {
      throw NumericError("non-finite validation loss after epoch " + std::to_string(report.epoch));
    }
    const bool improved = report.valid_loss < best_valid_loss_;
    if (improved) {
      best_valid_loss_ = report.valid_loss;
      summary.best_epoch = report.epoch;
    }
    if (outputs.out_dir) {
      log << report.log_line() << '\n' << std::flush;
      const auto ckpt = snapshot();
      if (improved) save_checkpoint(ckpt, *outputs.out_dir / "best.ckpt");
      save_checkpoint(ckpt, *outputs.out_dir / "last.ckpt");
    }
    if (outputs.verbose) {
      std::cerr << "epoch " << report.epoch << " train_loss " << report.train_loss << " valid_loss " << report.valid_loss
                << " valid_wer " << report.valid_wer;
      if (report.train_wer) std::cerr << " train_wer " << *report.train_wer;
      std::cerr << '\n';
    }
    if (outputs.on_epoch) outputs.on_epoch(report);
    summary.epochs.push_back(report);
    if (report.train_wer && *report.train_wer == 0.0) {
      summary.reached_zero_train_wer = true;
      if (cfg_.train.stop_at_zero_train_wer) break;
    }
  }
  summary.best_valid_loss = best_valid_loss_;
  return summary;
}

Checkpoint Trainer::snapshot() const {
  return capture_checkpoint(cfg_, model_, adam_, static_cast<std::uint32_t>(epoch_), best_valid_loss_);
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.fingerprint != cfg_.fingerprint()) {
    throw ConfigError("checkpoint fingerprint mismatch: checkpoint was written for a different model configuration");
  }
  load_parameters(ckpt, model_);
  const auto& entries = model_.params().entries();
  AdamState state;
  state.step = ckpt.step;
  if (ckpt.step > 0) {
    for (const auto& e : entries) {
      const auto* m = ckpt.find("adam.m/" + e.name);
      const auto* v = ckpt.find("adam.v/" + e.name);
      if (!m || !v) throw FormatError("checkpoint lacks optimizer state for " + e.name);
      if (m->values.size() != e.value.numel() || v->values.size() != e.value.numel()) {
        throw ShapeError("checkpoint optimizer state for " + e.name + " has the wrong size");
      }
      state.first_moment.emplace_back(m->values.begin(), m->values.end());
      state.second_moment.emplace_back(v->values.begin(), v->values.end());
    }
  }
  adam_ = std::move(state);
  epoch_ = ckpt.epoch;
  best_valid_loss_ = ckpt.best_valid_loss;
  pending_micro_batches_ = 0;
  model_.params().zero_grad();
}

Checkpoint capture_checkpoint(const RunConfig& cfg, const AsrModel& model, const AdamState& adam,
                              std::uint32_t epoch, double best_valid_loss) {
  Checkpoint ckpt;
  ckpt.config_text = cfg.to_text();
  ckpt.fingerprint = cfg.fingerprint();
  ckpt.epoch = epoch;
  ckpt.step = adam.step;
  ckpt.best_valid_loss = best_valid_loss;
  const auto& entries = model.params().entries();
  auto blob = [](const std::string& name, const Shape& shape, std::span<const double> values) {
    NamedBlob b{name, shape, {}};
    b.values.reserve(values.size());
    for (double v : values) b.values.push_back(static_cast<float>(v));
    return b;
  };
  for (const auto& e : entries) ckpt.blobs.push_back(blob("param/" + e.name, e.value.shape(), e.value.data()));
  if (!adam.first_moment.empty()) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ckpt.blobs.push_back(blob("adam.m/" + entries[i].name, entries[i].value.shape(), adam.first_moment.at(i)));
      ckpt.blobs.push_back(blob("adam.v/" + entries[i].name, entries[i].value.shape(), adam.second_moment.at(i)));
    }
  }
  return ckpt;
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  auto cfg = parse_run_config(ckpt.config_text);
  finalize(cfg);
  if (cfg.fingerprint() != ckpt.fingerprint) throw FormatError("checkpoint config text does not match its fingerprint");
  return cfg;
}

void load_parameters(const Checkpoint& ckpt, AsrModel& model) {
  std::size_t expected = 0;
  for (const auto& e : model.params().entries()) {
    const auto* b = ckpt.find("param/" + e.name);
    if (!b) throw FormatError("checkpoint lacks parameter " + e.name);
    if (b->shape != e.value.shape()) {
      throw ShapeError("checkpoint parameter " + e.name + " has shape " + shape_str(b->shape) + ", model expects " +
                       shape_str(e.value.shape()));
    }
    auto dst = Tensor(e.value).mutable_data();
    std::copy(b->values.begin(), b->values.end(), dst.begin());
    ++expected;
  }
  const auto stored = std::count_if(ckpt.blobs.begin(), ckpt.blobs.end(),
                                    [](const NamedBlob& b) { return b.name.rfind("param/", 0) == 0; });
  if (static_cast<std::size_t>(stored) != expected) throw FormatError("checkpoint holds parameters the model does not have");
}

EvalResult evaluate(const Checkpoint& ckpt, const Manifest& manifest, const RunConfig* expected) {
  if (expected && expected->fingerprint() != ckpt.fingerprint) {
    throw ConfigError("checkpoint fingerprint mismatch: refusing to evaluate with a different configuration");
  }
  const auto cfg = checkpoint_config(ckpt);
  AsrModel model(cfg.model, cfg.train.seed);
  load_parameters(ckpt, model);
  const auto data = load_dataset(manifest, cfg);
  const auto vocab = Vocabulary::characters();
  EvalResult result;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& u : data) {
    const auto enc = model.encode(u.fbank, u.ssl);
    UtteranceResult r;
    r.id = u.id;
    r.reference = u.transcript;
    r.hypothesis = vocab.decode(model.decode_attention(enc.h, cfg.train.max_decode_len));
    r.wer = wer(r.reference, r.hypothesis);
    pairs.emplace_back(r.reference, r.hypothesis);
    result.utterances.push_back(std::move(r));
  }
  result.corpus = corpus_wer(pairs);
  return result;
}

void write_hypotheses(const std::vector<std::pair<std::string, std::string>>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  for (const auto& [id, text] : rows) {
    if (id.find('\t') != std::string::npos || text.find('\n') != std::string::npos) {
      throw InputError("hypothesis row for " + id + " contains a tab or newline");
    }
    out << id << '\t' << text << '\n';
  }
  if (!out) throw StorageError("failed writing " + path.string());
}

std::vector<std::pair<std::string, std::string>> read_hypotheses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>text");
    }
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

}  // namespace sslfuse
