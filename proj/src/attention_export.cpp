#include "sslfuse/attention_export.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sslfuse/errors.hpp"
#include "sslfuse/model.hpp"
#include "sslfuse/trainer.hpp"

namespace sslfuse {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::size_t parse_count(const std::string& s, std::size_t lineno) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
    throw FormatError("attention csv line " + std::to_string(lineno) + ": bad extent '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_attention_csv(const std::vector<AttentionMap>& maps) {
  std::string out;
  char buf[32];
  for (const auto& m : maps) {
    if (m.weights.rank() != 2) throw ShapeError("attention map must be a matrix, got " + shape_str(m.weights.shape()));
    if (m.utterance_id.find_first_of(",\n") != std::string::npos || m.source_tag.find_first_of(",\n") != std::string::npos) {
      throw InputError("attention csv: id and source tag may not contain commas");
    }
    const std::size_t rows = m.weights.dim(0), cols = m.weights.dim(1);
    out += m.utterance_id + "," + std::to_string(rows) + "," + std::to_string(cols) + "," + m.source_tag + "\n";
    const auto data = m.weights.data();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(data[i * cols + j])));
        if (j) out += ',';
        out += buf;
      }
      out += '\n';
    }
  }
  return out;
}

std::vector<AttentionMap> parse_attention_csv(const std::string& text) {
  std::istringstream in(text);
  std::vector<AttentionMap> maps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto head = split_commas(line);
    if (head.size() != 4) throw FormatError("attention csv line " + std::to_string(lineno) + ": expected a 4-field header");
    AttentionMap m;
    m.utterance_id = head[0];
    m.source_tag = head[3];
    const std::size_t rows = parse_count(head[1], lineno), cols = parse_count(head[2], lineno);
    std::vector<double> values;
    values.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!std::getline(in, line)) throw FormatError("attention csv: block for " + m.utterance_id + " is truncated");
      ++lineno;
      const auto cells = split_commas(line);
      if (cells.size() != cols) {
        throw FormatError("attention csv line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                          " values, found " + std::to_string(cells.size()));
      }
      for (const auto& c : cells) {
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
        if (ec != std::errc() || ptr != c.data() + c.size()) {
          throw FormatError("attention csv line " + std::to_string(lineno) + ": bad number '" + c + "'");
        }
        values.push_back(v);
      }
    }
    m.weights = Tensor::from({rows, cols}, std::move(values));
    maps.push_back(std::move(m));
  }
  return maps;
}

void write_attention_csv(const std::vector<AttentionMap>& maps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StorageError("cannot open " + path.string() + " for writing");
  out << format_attention_csv(maps);
  if (!out) throw StorageError("failed writing " + path.string());
}

std::vector<AttentionMap> read_attention_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_attention_csv(ss.str());
}

std::vector<AttentionMap> attention_maps(const Checkpoint& ckpt, const Manifest& manifest,
                                         const std::string& utterance_id) {
  const auto cfg = checkpoint_config(ckpt);
  if (cfg.model.mode == FusionMode::kSfa) throw ConfigError("no attention in SFA mode");
  if (cfg.model.mode == FusionMode::kNone) throw ConfigError("no attention in NONE mode");
  const auto* rec = manifest.find(utterance_id);
  if (!rec) throw InputError("utterance " + utterance_id + " is not in the manifest");
  Manifest single;
  single.base_dir = manifest.base_dir;
  single.records.push_back(*rec);
  const auto data = load_dataset(single, cfg);
  AsrModel model(cfg.model, cfg.train.seed);
  load_parameters(ckpt, model);
  const auto enc = model.encode(data[0].fbank, data[0].ssl);
  std::vector<AttentionMap> maps;
  for (std::size_t s = 0; s < enc.attention.size(); ++s) {
    maps.push_back({utterance_id, cfg.model.ssl_sources.at(s), enc.attention[s]});
  }
  return maps;
}

std::vector<AttentionMap> attn_dump(const Checkpoint& ckpt, const Manifest& manifest, const std::string& utterance_id,
                                    const std::filesystem::path& out_path) {
  auto maps = attention_maps(ckpt, manifest, utterance_id);
  write_attention_csv(maps, out_path);
  return maps;
}

double monotone_row_fraction(const Tensor& weights) {
  if (weights.rank() != 2) throw ShapeError("monotone_row_fraction: expected a matrix");
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  if (rows < 2) return 1.0;
  const auto data = weights.data();
  auto argmax = [&](std::size_t i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (data[i * cols + j] > data[i * cols + best]) best = j;
    return best;
  };
  std::size_t ok = 0;
  std::size_t prev = argmax(0);
  for (std::size_t i = 1; i < rows; ++i) {
    const auto cur = argmax(i);
    if (cur >= prev) ++ok;
    prev = cur;
  }
  return static_cast<double>(ok) / static_cast<double>(rows - 1);
}

}  // namespace sslfuse
