#include "sslfuse/corpus.hpp"

#include <cmath>
#include <numbers>

#include "sslfuse/audio.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/rng.hpp"

namespace sslfuse {

const std::vector<double>& toy_token_frequencies() {
  static const std::vector<double> freqs = {300.0, 450.0, 650.0, 900.0, 1250.0, 1700.0, 2300.0, 3100.0};
  return freqs;
}

namespace {

std::vector<double> render(const std::vector<std::size_t>& tokens, const ToyCorpusOptions& opt) {
  const auto seg = static_cast<std::size_t>(std::llround(opt.segment_seconds * static_cast<double>(opt.sample_rate)));
  const std::size_t fade = std::min<std::size_t>(seg / 2, static_cast<std::size_t>(opt.sample_rate / 200));
  std::vector<double> out;
  out.reserve(seg * tokens.size());
  for (auto tok : tokens) {
    const double f = toy_token_frequencies().at(tok);
    for (std::size_t n = 0; n < seg; ++n) {
      double gain = 0.5;
      if (n < fade) gain *= static_cast<double>(n) / static_cast<double>(fade);
      if (seg - 1 - n < fade) gain *= static_cast<double>(seg - 1 - n) / static_cast<double>(fade);
      out.push_back(gain * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(n) / static_cast<double>(opt.sample_rate)));
    }
  }
  return out;
}

}  // namespace

Manifest gen_toy_corpus(const ToyCorpusOptions& opt, const std::filesystem::path& out_dir) {
  if (opt.min_words == 0 || opt.max_words < opt.min_words) throw ConfigError("toy corpus: bad word-count range");
  const std::size_t letters = toy_token_frequencies().size();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  for (const auto& src : opt.sources) std::filesystem::create_directories(out_dir / "feats" / src, ec);
  if (ec) throw StorageError("cannot create corpus directories under " + out_dir.string() + ": " + ec.message());

  Rng rng(opt.seed);
  Manifest manifest;
  manifest.base_dir = out_dir;
  for (std::size_t u = 0; u < opt.utterances; ++u) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "utt%02zu", u);
    const std::string id = idbuf;
    const std::size_t words = opt.min_words + rng.below(opt.max_words - opt.min_words + 1);
    std::vector<std::size_t> tokens;
    std::string transcript;
    while (tokens.size() < words) {
      const std::size_t tok = rng.below(letters);
      if (!tokens.empty() && tokens.back() == tok) continue;
      tokens.push_back(tok);
      if (!transcript.empty()) transcript += ' ';
      transcript += static_cast<char>('a' + tok);
    }
    const std::string wav_rel = "wav/" + id + ".wav";
    write_wav(out_dir / wav_rel, Waveform{render(tokens, opt), opt.sample_rate});
    // Features derive from the quantised waveform exactly as stored.
    const auto wave = read_wav(out_dir / wav_rel);
    UtteranceRecord rec{id, wav_rel, transcript, {}};
    for (const auto& src : opt.sources) {
      SynthConfig sc;
      sc.source_tag = src;
      sc.dim = registered_dim(src).value_or(64);
      sc.stride = opt.ssl_stride;
      sc.seed = opt.seed;
      sc.content_mix = opt.content_mix;
      sc.frontend.sample_rate = opt.sample_rate;
      const std::string rel = "feats/" + src + "/" + id + ".ssf";
      write_features(synth_features(id, wave, sc), out_dir / rel);
      rec.feature_paths.push_back(rel);
    }
    manifest.records.push_back(std::move(rec));
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace sslfuse
