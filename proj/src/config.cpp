#include "sslfuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "sslfuse/errors.hpp"
#include "sslfuse/rng.hpp"
#include "sslfuse/ssl_cache.hpp"

namespace sslfuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
  return os.str();
}

// Keys whose values change the model or the features it consumes.
const std::set<std::string>& model_keys() {
  static const std::set<std::string> keys = {
      "sample_rate",     "frame_length_ms", "frame_shift_ms", "n_mels",          "preemphasis",
      "log_floor",       "mode",            "ssl_sources",    "ssl_dims",        "ssl_subsample",
      "d_model",         "heads",           "encoder_layers", "decoder_layers",  "ffn_expansion",
      "depthwise_kernel", "subsample_channels"};
  return keys;
}

}  // namespace

std::size_t ModelConfig::fused_sources() const {
  switch (mode) {
    case FusionMode::kNone: return 0;
    case FusionMode::kSfa:
    case FusionMode::kCa: return 1;
    case FusionMode::kMultiCa: return ssl_sources.size();
  }
  return 0;
}

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d) + " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (depthwise_kernel % 2 == 0) throw ConfigError("depthwise_kernel must be odd");
  if (ssl_subsample == 0) throw ConfigError("ssl_subsample must be >= 1");
  if (!(ctc_weight >= 0.0 && ctc_weight <= 1.0)) throw ConfigError("ctc_weight must lie in [0, 1]");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (ssl_dims.size() != ssl_sources.size()) throw ConfigError("ssl_dims must list one width per SSL source");
  if ((mode == FusionMode::kSfa || mode == FusionMode::kCa) && ssl_sources.empty()) {
    throw ConfigError("mode " + to_string(mode) + " needs an SSL source");
  }
  if (mode == FusionMode::kMultiCa && ssl_sources.size() < 2) {
    throw ConfigError("mode multi-ca needs at least 2 SSL sources");
  }
  if (encoder_layers == 0 && decoder_layers == 0) throw ConfigError("model has no layers");
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || grad_accum == 0 || warmup_steps == 0) {
    throw ConfigError("epochs, batch_size, grad_accum and warmup_steps must be positive");
  }
  if (!(noam_scale > 0)) throw ConfigError("noam_scale must be positive");
  if (max_decode_len == 0) throw ConfigError("max_decode_len must be positive");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto& f = cfg.frontend;
  auto& m = cfg.model;
  auto& t = cfg.train;
  if (key == "sample_rate") f.sample_rate = static_cast<int>(to_size(key, value));
  else if (key == "frame_length_ms") f.frame_length_ms = to_double(key, value);
  else if (key == "frame_shift_ms") f.frame_shift_ms = to_double(key, value);
  else if (key == "n_mels") f.n_mels = m.input_dim = to_size(key, value);
  else if (key == "preemphasis") f.preemphasis = to_double(key, value);
  else if (key == "log_floor") f.log_floor = to_double(key, value);
  else if (key == "mode") m.mode = parse_fusion_mode(value);
  else if (key == "ssl_sources") m.ssl_sources = split_list(value);
  else if (key == "ssl_dims") {
    m.ssl_dims.clear();
    for (const auto& item : split_list(value)) m.ssl_dims.push_back(to_size(key, item));
  }
  else if (key == "ssl_subsample") m.ssl_subsample = to_size(key, value);
  else if (key == "d_model") m.d = to_size(key, value);
  else if (key == "heads") m.heads = to_size(key, value);
  else if (key == "encoder_layers") m.encoder_layers = to_size(key, value);
  else if (key == "decoder_layers") m.decoder_layers = to_size(key, value);
  else if (key == "ffn_expansion") m.ffn_expansion = to_size(key, value);
  else if (key == "depthwise_kernel") m.depthwise_kernel = to_size(key, value);
  else if (key == "subsample_channels") m.subsample_channels = to_size(key, value);
  else if (key == "ctc_weight") m.ctc_weight = to_double(key, value);
  else if (key == "label_smoothing") m.label_smoothing = to_double(key, value);
  else if (key == "epochs") t.epochs = to_size(key, value);
  else if (key == "batch_size") t.batch_size = to_size(key, value);
  else if (key == "grad_accum") t.grad_accum = to_size(key, value);
  else if (key == "noam_scale") t.noam_scale = to_double(key, value);
  else if (key == "warmup_steps") t.warmup_steps = to_size(key, value);
  else if (key == "adam_beta1") t.adam_beta1 = to_double(key, value);
  else if (key == "adam_beta2") t.adam_beta2 = to_double(key, value);
  else if (key == "adam_eps") t.adam_eps = to_double(key, value);
  else if (key == "grad_clip") t.grad_clip = to_double(key, value);
  else if (key == "seed") t.seed = to_size(key, value);
  else if (key == "max_decode_len") t.max_decode_len = to_size(key, value);
  else if (key == "stop_at_zero_train_wer") t.stop_at_zero_train_wer = to_bool(key, value);
  else if (key == "track_train_wer") t.track_train_wer = to_bool(key, value);
  else throw ConfigError("unknown configuration key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), std::move(base));
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "sample_rate=" << frontend.sample_rate << '\n'
     << "frame_length_ms=" << fmt_double(frontend.frame_length_ms) << '\n'
     << "frame_shift_ms=" << fmt_double(frontend.frame_shift_ms) << '\n'
     << "n_mels=" << frontend.n_mels << '\n'
     << "preemphasis=" << fmt_double(frontend.preemphasis) << '\n'
     << "log_floor=" << fmt_double(frontend.log_floor) << '\n'
     << "mode=" << to_string(model.mode) << '\n'
     << "ssl_sources=" << join(model.ssl_sources) << '\n'
     << "ssl_dims=" << join(model.ssl_dims) << '\n'
     << "ssl_subsample=" << model.ssl_subsample << '\n'
     << "d_model=" << model.d << '\n'
     << "heads=" << model.heads << '\n'
     << "encoder_layers=" << model.encoder_layers << '\n'
     << "decoder_layers=" << model.decoder_layers << '\n'
     << "ffn_expansion=" << model.ffn_expansion << '\n'
     << "depthwise_kernel=" << model.depthwise_kernel << '\n'
     << "subsample_channels=" << model.subsample_channels << '\n'
     << "ctc_weight=" << fmt_double(model.ctc_weight) << '\n'
     << "label_smoothing=" << fmt_double(model.label_smoothing) << '\n'
     << "epochs=" << train.epochs << '\n'
     << "batch_size=" << train.batch_size << '\n'
     << "grad_accum=" << train.grad_accum << '\n'
     << "noam_scale=" << fmt_double(train.noam_scale) << '\n'
     << "warmup_steps=" << train.warmup_steps << '\n'
     << "adam_beta1=" << fmt_double(train.adam_beta1) << '\n'
     << "adam_beta2=" << fmt_double(train.adam_beta2) << '\n'
     << "adam_eps=" << fmt_double(train.adam_eps) << '\n'
     << "grad_clip=" << fmt_double(train.grad_clip) << '\n'
     << "seed=" << train.seed << '\n'
     << "max_decode_len=" << train.max_decode_len << '\n'
     << "stop_at_zero_train_wer=" << (train.stop_at_zero_train_wer ? 1 : 0) << '\n'
     << "track_train_wer=" << (train.track_train_wer ? 1 : 0) << '\n';
  return os.str();
}

std::uint64_t RunConfig::fingerprint() const {
  std::istringstream in(to_text());
  std::string line, canonical;
  while (std::getline(in, line)) {
    const auto key = line.substr(0, line.find('='));
    if (model_keys().count(key)) canonical += line + '\n';
  }
  return fnv1a64(canonical);
}

void finalize(RunConfig& cfg) {
  auto& m = cfg.model;
  m.input_dim = cfg.frontend.n_mels;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < m.ssl_sources.size(); ++i) {
    const auto fixed = registered_dim(m.ssl_sources[i]);
    const bool explicit_dim = i < m.ssl_dims.size();
    if (fixed && explicit_dim && m.ssl_dims[i] != *fixed) {
      throw ConfigError("ssl source " + m.ssl_sources[i] + " has width " + std::to_string(*fixed) + ", config says " +
                        std::to_string(m.ssl_dims[i]));
    }
    if (!fixed && !explicit_dim) throw ConfigError("ssl source " + m.ssl_sources[i] + " needs an explicit width in ssl_dims");
    dims.push_back(fixed ? *fixed : m.ssl_dims[i]);
  }
  m.ssl_dims = std::move(dims);
  m.validate();
  cfg.train.validate();
}

RunConfig toy_run_config(FusionMode mode) {
  RunConfig cfg;
  cfg.model.mode = mode;
  if (mode == FusionMode::kMultiCa) {
    cfg.model.ssl_sources = {"hubert-base", "w2v-base"};
  } else {
    cfg.model.ssl_sources = {"hubert-base"};
  }
  cfg.model.ssl_subsample = 1;  // 20 ms SSL stride already matches the subsampled rate
  cfg.model.d = 32;
  cfg.model.heads = 2;
  cfg.model.encoder_layers = 2;
  cfg.model.decoder_layers = 1;
  cfg.model.ffn_expansion = 2;
  cfg.model.depthwise_kernel = 7;
  cfg.model.subsample_channels = 4;
  cfg.train.epochs = 300;
  cfg.train.batch_size = 4;
  cfg.train.grad_accum = 1;
  cfg.train.noam_scale = 0.25;
  cfg.train.warmup_steps = 100;
  cfg.train.seed = 7;
  cfg.train.max_decode_len = 20;
  cfg.train.stop_at_zero_train_wer = true;
  cfg.train.track_train_wer = true;
  finalize(cfg);
  return cfg;
}

}  // namespace sslfuse
