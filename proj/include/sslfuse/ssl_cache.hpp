#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sslfuse/audio.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

// A cached self-supervised representation for one utterance: T' frames of
// d' binary32 values, frame-major.
struct SslSequence {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::string source_tag;
  std::string utterance_id;

  Tensor to_tensor() const;
};

// Published feature widths: w2v-base and hubert-base 768, hubert-large 1024.
// Tags starting with "synthetic" have no fixed width.
std::optional<std::size_t> registered_dim(const std::string& source_tag);

// SSF1 layout (little-endian):
//   0..3   magic "SSF1"
//   4..5   version (u16) = 1
//   6..7   reserved, zero
//   8..11  T' (u32)
//   12..15 d' (u32)
//   16..31 reserved, zero
//   32..   T' * d' IEEE-754 binary32 values, row-major
inline constexpr std::size_t kSsfHeaderBytes = 32;
inline constexpr std::uint16_t kSsfVersion = 1;

// Writes via a temporary sibling and an atomic rename.
void write_features(const SslSequence& seq, const std::filesystem::path& path);
SslSequence read_features(const std::filesystem::path& path);
// Serialises to an in-memory SSF1 image / parses one. The parser validates
// magic, version, reserved bytes and payload length, and never reads past
// the declared payload.
std::vector<unsigned char> encode_features(const SslSequence& seq);
SslSequence decode_features(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");

struct SynthConfig {
  std::string source_tag = "synthetic";
  std::size_t dim = 64;
  std::size_t stride = 320;  // samples per frame
  std::uint64_t seed = 0;
  // Weight of the content channel (log-mel of the aligned window projected to
  // d' by a fixed random matrix). 0 gives pure seeded noise.
  double content_mix = 0.0;
  FrontendConfig frontend;
};

// Pure function of (id, waveform length, cfg). T' = waveform_len / stride.
SslSequence synth_features(const std::string& utterance_id, std::size_t waveform_len, const SynthConfig& cfg);
// Content-mixed variant; identical to the length-only form when content_mix is 0.
SslSequence synth_features(const std::string& utterance_id, const Waveform& wave, const SynthConfig& cfg);

struct UtteranceRecord {
  std::string id;
  std::string audio_path;
  std::string transcript;
  std::vector<std::string> feature_paths;  // one per configured SSL source
};

// Tab-separated: id, audio_path, transcript, feature_path... Relative paths
// resolve against base_dir (the manifest's directory when read from disk).
struct Manifest {
  std::vector<UtteranceRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& path) const;
  const UtteranceRecord* find(const std::string& id) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);

struct ValidationIssue {
  std::string utterance_id;
  std::string message;
};

struct ValidationReport {
  std::size_t records_checked = 0;
  std::vector<ValidationIssue> issues;
  bool ok() const { return issues.empty(); }
};

// Checks id uniqueness, transcripts, file existence and readability, and
// feature header widths against `source_tags` (one per feature column).
ValidationReport validate_manifest(const Manifest& manifest, const std::vector<std::string>& source_tags);

}  // namespace sslfuse
