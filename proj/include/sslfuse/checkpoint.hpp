#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Single-file checkpoint (see docs/FORMATS.md):
//   "SFCK" | u16 version=1 | u16 0 | u64 config fingerprint | u32 epoch |
//   u32 0 | u64 optimizer step | f64 best validation loss |
//   u32 config length | config text (key=value lines) |
//   u32 blob count | per blob: u32 name length | name | u32 rank |
//   u32 extents[rank] | binary32 values
// All integers and floats little-endian.
struct Checkpoint {
  std::string config_text;
  std::uint64_t fingerprint = 0;
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;
  double best_valid_loss = 0.0;
  std::vector<NamedBlob> blobs;

  const NamedBlob* find(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>");
// Writes through a temporary file and an atomic rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sslfuse
