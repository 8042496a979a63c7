#include "sslfuse/ssl_cache.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "sslfuse/errors.hpp"
#include "sslfuse/rng.hpp"

namespace sslfuse {

namespace {

void put_u16(std::vector<unsigned char>& out, std::size_t at, std::uint16_t v) {
  out[at] = static_cast<unsigned char>(v & 0xff);
  out[at + 1] = static_cast<unsigned char>(v >> 8);
}

void put_u32(std::vector<unsigned char>& out, std::size_t at, std::uint32_t v) {
  for (std::size_t i = 0; i < 4; ++i) out[at + i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
}

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::uint64_t stream_key(const std::string& tag, std::uint64_t seed) { return fnv1a64(tag) ^ splitmix64(seed); }

}  // namespace

Tensor SslSequence::to_tensor() const {
  std::vector<double> data(values.begin(), values.end());
  return Tensor::from({frames, dim}, std::move(data));
}

std::optional<std::size_t> registered_dim(const std::string& source_tag) {
  if (source_tag == "w2v-base" || source_tag == "hubert-base") return 768;
  if (source_tag == "hubert-large") return 1024;
  return std::nullopt;
}

std::vector<unsigned char> encode_features(const SslSequence& seq) {
  if (seq.frames == 0 || seq.dim == 0) {
    throw InputError("refusing to encode an empty feature matrix (" + std::to_string(seq.frames) + "x" +
                     std::to_string(seq.dim) + ")");
  }
  if (seq.values.size() != seq.frames * seq.dim) {
    throw ShapeError("feature matrix holds " + std::to_string(seq.values.size()) + " values, header declares " +
                     std::to_string(seq.frames) + "x" + std::to_string(seq.dim));
  }
  if (seq.frames > UINT32_MAX || seq.dim > UINT32_MAX) throw InputError("feature matrix too large for SSF1");
  std::vector<unsigned char> out(kSsfHeaderBytes + 4 * seq.values.size(), 0);
  std::memcpy(out.data(), "SSF1", 4);
  put_u16(out, 4, kSsfVersion);
  put_u32(out, 8, static_cast<std::uint32_t>(seq.frames));
  put_u32(out, 12, static_cast<std::uint32_t>(seq.dim));
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    if (!std::isfinite(seq.values[i])) throw InputError("non-finite feature value at index " + std::to_string(i));
    put_u32(out, kSsfHeaderBytes + 4 * i, std::bit_cast<std::uint32_t>(seq.values[i]));
  }
  return out;
}

SslSequence decode_features(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < kSsfHeaderBytes) throw FormatError(origin + ": truncated header");
  if (std::memcmp(bytes.data(), "SSF1", 4) != 0) throw FormatError(origin + ": bad magic");
  const auto version = static_cast<std::uint16_t>(bytes[4] | bytes[5] << 8);
  if (version != kSsfVersion) throw FormatError(origin + ": unsupported version " + std::to_string(version));
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError(origin + ": reserved bytes 6-7 not zero");
  for (std::size_t i = 16; i < kSsfHeaderBytes; ++i) {
    if (bytes[i] != 0) throw FormatError(origin + ": reserved bytes 16-31 not zero");
  }
  const std::uint64_t frames = load_u32(bytes.data() + 8);
  const std::uint64_t dim = load_u32(bytes.data() + 12);
  if (frames == 0) throw FormatError(origin + ": T' is zero");
  if (dim == 0) throw FormatError(origin + ": d' is zero");
  const std::uint64_t payload = bytes.size() - kSsfHeaderBytes;
  if (payload != 4 * frames * dim) {
    throw FormatError(origin + ": payload length mismatch (header declares " + std::to_string(frames) + "x" +
                      std::to_string(dim) + " = " + std::to_string(4 * frames * dim) + " bytes, file has " +
                      std::to_string(payload) + ")");
  }
  SslSequence seq;
  seq.frames = frames;
  seq.dim = dim;
  seq.values.resize(frames * dim);
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    seq.values[i] = std::bit_cast<float>(load_u32(bytes.data() + kSsfHeaderBytes + 4 * i));
    if (!std::isfinite(seq.values[i])) {
      throw FormatError(origin + ": non-finite value at frame " + std::to_string(i / dim) + ", column " +
                        std::to_string(i % dim));
    }
  }
  return seq;
}

void write_features(const SslSequence& seq, const std::filesystem::path& path) {
  const auto bytes = encode_features(seq);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw StorageError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

SslSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open feature file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto seq = decode_features(bytes, path.string());
  seq.utterance_id = path.stem().string();
  return seq;
}

SslSequence synth_features(const std::string& utterance_id, std::size_t waveform_len, const SynthConfig& cfg) {
  if (cfg.stride == 0) throw ConfigError("synthetic feature stride must be positive");
  if (cfg.dim == 0) throw ConfigError("synthetic feature width must be positive");
  if (auto fixed = registered_dim(cfg.source_tag); fixed && *fixed != cfg.dim) {
    throw ConfigError("source " + cfg.source_tag + " has width " + std::to_string(*fixed) + ", not " +
                      std::to_string(cfg.dim));
  }
  SslSequence seq;
  seq.frames = waveform_len / cfg.stride;
  seq.dim = cfg.dim;
  seq.source_tag = cfg.source_tag;
  seq.utterance_id = utterance_id;
  seq.values.resize(seq.frames * seq.dim);
  const std::uint64_t key = fnv1a64(utterance_id) ^ stream_key(cfg.source_tag, cfg.seed);
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.dim; ++k) seq.values[t * seq.dim + k] = static_cast<float>(hashed_uniform(key, t, k));
  return seq;
}

SslSequence synth_features(const std::string& utterance_id, const Waveform& wave, const SynthConfig& cfg) {
  SslSequence seq = synth_features(utterance_id, wave.samples.size(), cfg);
  if (cfg.content_mix == 0.0 || seq.frames == 0) return seq;
  const std::size_t n_mels = cfg.frontend.n_mels;
  std::vector<std::size_t> offsets(seq.frames);
  for (std::size_t t = 0; t < seq.frames; ++t) offsets[t] = t * cfg.stride;
  auto content = log_mel_frames(wave.samples, offsets, cfg.frontend);
  // Standardise with one utterance-level mean and deviation so relative
  // energy between frames survives.
  double mu = 0.0;
  for (double v : content) mu += v;
  mu /= static_cast<double>(content.size());
  double var = 0.0;
  for (double v : content) var += (v - mu) * (v - mu);
  const double inv_sd = 1.0 / std::sqrt(var / static_cast<double>(content.size()) + 1e-12);
  for (auto& v : content) v = (v - mu) * inv_sd;

  const std::uint64_t proj_key = stream_key(cfg.source_tag, cfg.seed) ^ 0x70726f6a65637431ULL;
  const double proj_scale = std::sqrt(3.0 / static_cast<double>(n_mels));
  std::vector<double> projection(n_mels * seq.dim);
  for (std::size_t m = 0; m < n_mels; ++m)
    for (std::size_t k = 0; k < seq.dim; ++k) projection[m * seq.dim + k] = proj_scale * hashed_uniform(proj_key, m, k);

  const double mix = cfg.content_mix;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t k = 0; k < seq.dim; ++k) {
      double c = 0.0;
      for (std::size_t m = 0; m < n_mels; ++m) c += content[t * n_mels + m] * projection[m * seq.dim + k];
      auto& v = seq.values[t * seq.dim + k];
      v = static_cast<float>((1.0 - mix) * static_cast<double>(v) + mix * c);
    }
  return seq;
}

std::filesystem::path Manifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

const UtteranceRecord* Manifest::find(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected at least 3 tab-separated fields");
    }
    UtteranceRecord r{fields[0], fields[1], fields[2], {fields.begin() + 3, fields.end()}};
    m.records.push_back(std::move(r));
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

std::string format_manifest(const Manifest& manifest) {
  std::ostringstream os;
  for (const auto& r : manifest.records) {
    os << r.id << '\t' << r.audio_path << '\t' << r.transcript;
    for (const auto& f : r.feature_paths) os << '\t' << f;
    os << '\n';
  }
  return os.str();
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write manifest " + path.string());
  out << format_manifest(manifest);
  if (!out) throw StorageError("failed writing manifest " + path.string());
}

ValidationReport validate_manifest(const Manifest& manifest, const std::vector<std::string>& source_tags) {
  ValidationReport report;
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    ++report.records_checked;
    auto flag = [&](std::string msg) { report.issues.push_back({r.id, std::move(msg)}); };
    if (r.id.empty()) flag("empty utterance id");
    if (!seen.insert(r.id).second) flag("duplicate utterance id");
    if (r.transcript.find_first_not_of(" \t") == std::string::npos) flag("empty transcript");
    if (!std::filesystem::exists(manifest.resolve(r.audio_path))) flag("audio file absent: " + r.audio_path);
    if (!source_tags.empty() && r.feature_paths.size() < source_tags.size()) {
      flag("expected at least " + std::to_string(source_tags.size()) + " feature paths, found " +
           std::to_string(r.feature_paths.size()));
    }
    for (std::size_t s = 0; s < r.feature_paths.size(); ++s) {
      const auto path = manifest.resolve(r.feature_paths[s]);
      if (!std::filesystem::exists(path)) {
        flag("feature file absent: " + r.feature_paths[s]);
        continue;
      }
      try {
        auto seq = read_features(path);
        if (s < source_tags.size()) {
          if (auto expected = registered_dim(source_tags[s]); expected && *expected != seq.dim) {
            flag("dimension mismatch (expected " + std::to_string(*expected) + ", found " + std::to_string(seq.dim) +
                 ") in " + r.feature_paths[s]);
          }
        }
      } catch (const Error& e) {
        flag(e.what());
      }
    }
  }
  return report;
}

}  // namespace sslfuse
