#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sslfuse/checkpoint.hpp"
#include "sslfuse/ssl_cache.hpp"
#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct AttentionMap {
  std::string utterance_id;
  std::string source_tag;
  Tensor weights;  // L_sub x T'
};

// One block per map: a line "utterance_id,L_sub,T_prime,source_tag" followed
// by L_sub rows of T' comma-separated weights.
std::string format_attention_csv(const std::vector<AttentionMap>& maps);
std::vector<AttentionMap> parse_attention_csv(const std::string& text);
void write_attention_csv(const std::vector<AttentionMap>& maps, const std::filesystem::path& path);
std::vector<AttentionMap> read_attention_csv(const std::filesystem::path& path);

// Fusion attention of one manifest utterance under a cross-attention
// checkpoint. SFA and baseline checkpoints raise ConfigError.
std::vector<AttentionMap> attention_maps(const Checkpoint& ckpt, const Manifest& manifest,
                                         const std::string& utterance_id);
std::vector<AttentionMap> attn_dump(const Checkpoint& ckpt, const Manifest& manifest, const std::string& utterance_id,
                                    const std::filesystem::path& out_path);

// Share of rows (after the first) whose argmax column is not left of the
// previous row's argmax.
double monotone_row_fraction(const Tensor& weights);

}  // namespace sslfuse
