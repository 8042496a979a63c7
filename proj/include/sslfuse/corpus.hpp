#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sslfuse/ssl_cache.hpp"

namespace sslfuse {

struct ToyCorpusOptions {
  std::uint64_t seed = 7;
  std::size_t utterances = 20;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  double segment_seconds = 0.1;
  int sample_rate = 16000;
  // SSL sources written per utterance, in manifest column order.
  std::vector<std::string> sources = {"hubert-base", "w2v-base"};
  std::size_t ssl_stride = 320;
  double content_mix = 0.5;
};

// Letter tokens "a".."h", one sinusoid frequency each.
const std::vector<double>& toy_token_frequencies();

// Writes wav/<id>.wav, feats/<source>/<id>.ssf and manifest.tsv under
// out_dir; returns the manifest. Same options give byte-identical files.
Manifest gen_toy_corpus(const ToyCorpusOptions& options, const std::filesystem::path& out_dir);

}  // namespace sslfuse
