#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "sslfuse/tensor.hpp"

namespace sslfuse {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

struct FrontendConfig {
  int sample_rate = 16000;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  std::size_t n_mels = 80;
  double preemphasis = 0.97;
  double log_floor = 1e-10;
  double low_freq = 0.0;
  double high_freq = 0.0;  // <= 0 means Nyquist

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_size() const;  // smallest power of two >= window
};

struct FbankSequence {
  Tensor frames;  // T x n_mels log-mel energies
  double frame_shift_ms = 0.0;
  double frame_length_ms = 0.0;

  std::size_t num_frames() const { return frames.dim(0); }
};

// 1 + (num_samples - window) / hop, or 0 when shorter than one window.
std::size_t num_fbank_frames(std::size_t num_samples, const FrontendConfig& cfg);

// Pre-emphasis, Hann window, magnitude spectrum, triangular mel filters and
// floored log. Throws InputError for audio shorter than one window.
FbankSequence fbank(const Waveform& wave, const FrontendConfig& cfg);

// Log-mel vectors (row-major, offsets.size() x n_mels) of analysis windows
// starting at each offset; samples past the end of the waveform read as zero.
std::vector<double> log_mel_frames(std::span<const double> samples, std::span<const std::size_t> offsets,
                                   const FrontendConfig& cfg);

// Centre frequency in Hz of each mel filter (HTK mel scale).
std::vector<double> mel_center_frequencies(const FrontendConfig& cfg);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Linear-interpolation resampling; output length round(len / factor).
Waveform speed_perturb(const Waveform& wave, double factor);

// Single-channel 16-bit little-endian PCM only.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

}  // namespace sslfuse
