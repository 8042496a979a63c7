#include "sslfuse/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <string>

#include "sslfuse/errors.hpp"

namespace sslfuse {

namespace {

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Per-call analysis state: filterbank weights, window and an FFTW plan.
class MelAnalyzer {
 public:
  explicit MelAnalyzer(const FrontendConfig& cfg)
      : cfg_(cfg), window_len_(cfg.window_samples()), fft_len_(cfg.fft_size()) {
    if (cfg.sample_rate <= 0) throw InputError("sample rate must be positive");
    if (cfg.n_mels == 0) throw InputError("n_mels must be positive");
    window_.resize(window_len_);
    for (std::size_t n = 0; n < window_len_; ++n) {
      window_[n] = window_len_ > 1
                       ? 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                              static_cast<double>(window_len_ - 1))
                       : 1.0;
    }
    build_filters();
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * fft_len_));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (fft_len_ / 2 + 1)));
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(fft_len_), in_, out_, FFTW_ESTIMATE);
  }

  ~MelAnalyzer() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  MelAnalyzer(const MelAnalyzer&) = delete;
  MelAnalyzer& operator=(const MelAnalyzer&) = delete;

  void analyze(std::span<const double> samples, std::size_t offset, double* out) {
    std::fill_n(in_, fft_len_, 0.0);
    for (std::size_t n = 0; n < window_len_; ++n) {
      const std::size_t idx = offset + n;
      in_[n] = idx < samples.size() ? samples[idx] : 0.0;
    }
    for (std::size_t n = window_len_; n-- > 1;) in_[n] -= cfg_.preemphasis * in_[n - 1];
    in_[0] -= cfg_.preemphasis * in_[0];
    for (std::size_t n = 0; n < window_len_; ++n) in_[n] *= window_[n];
    fftw_execute(plan_);
    const std::size_t bins = fft_len_ / 2 + 1;
    magnitude_.resize(bins);
    for (std::size_t k = 0; k < bins; ++k) magnitude_[k] = std::hypot(out_[k][0], out_[k][1]);
    const double floor_log = std::log(cfg_.log_floor);
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      double energy = 0.0;
      for (std::size_t k = first_bin_[m]; k < first_bin_[m] + weights_[m].size(); ++k)
        energy += weights_[m][k - first_bin_[m]] * magnitude_[k];
      out[m] = energy > cfg_.log_floor ? std::log(energy) : floor_log;
    }
  }

 private:
  void build_filters() {
    const auto centers = mel_center_frequencies(cfg_);
    const double high = cfg_.high_freq > 0 ? cfg_.high_freq : cfg_.sample_rate / 2.0;
    std::vector<double> edges;
    edges.push_back(cfg_.low_freq);
    edges.insert(edges.end(), centers.begin(), centers.end());
    edges.push_back(high);
    const std::size_t bins = fft_len_ / 2 + 1;
    const double bin_hz = static_cast<double>(cfg_.sample_rate) / static_cast<double>(fft_len_);
    first_bin_.assign(cfg_.n_mels, 0);
    weights_.assign(cfg_.n_mels, {});
    for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
      const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
      bool started = false;
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * bin_hz;
        double w = 0.0;
        if (f > left && f <= center) {
          w = (f - left) / (center - left);
        } else if (f > center && f < right) {
          w = (right - f) / (right - center);
        }
        if (w > 0.0) {
          if (!started) {
            first_bin_[m] = k;
            started = true;
          }
          weights_[m].resize(k - first_bin_[m] + 1, 0.0);
          weights_[m].back() = w;
        }
      }
    }
  }

  FrontendConfig cfg_;
  std::size_t window_len_;
  std::size_t fft_len_;
  std::vector<double> window_;
  std::vector<std::size_t> first_bin_;
  std::vector<std::vector<double>> weights_;
  std::vector<double> magnitude_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

template <class T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

std::size_t FrontendConfig::window_samples() const {
  return static_cast<std::size_t>(std::lround(frame_length_ms * sample_rate / 1000.0));
}

std::size_t FrontendConfig::hop_samples() const {
  return static_cast<std::size_t>(std::lround(frame_shift_ms * sample_rate / 1000.0));
}

std::size_t FrontendConfig::fft_size() const {
  std::size_t n = 1;
  while (n < window_samples()) n <<= 1;
  return n;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_center_frequencies(const FrontendConfig& cfg) {
  const double high = cfg.high_freq > 0 ? cfg.high_freq : cfg.sample_rate / 2.0;
  const double lo = hz_to_mel(cfg.low_freq), hi = hz_to_mel(high);
  const double step = (hi - lo) / static_cast<double>(cfg.n_mels + 1);
  std::vector<double> centers(cfg.n_mels);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) centers[m] = mel_to_hz(lo + step * static_cast<double>(m + 1));
  return centers;
}

std::size_t num_fbank_frames(std::size_t num_samples, const FrontendConfig& cfg) {
  const std::size_t window = cfg.window_samples(), hop = cfg.hop_samples();
  if (num_samples < window || hop == 0) return 0;
  return 1 + (num_samples - window) / hop;
}

FbankSequence fbank(const Waveform& wave, const FrontendConfig& cfg) {
  if (wave.sample_rate != cfg.sample_rate) {
    throw InputError("waveform sample rate " + std::to_string(wave.sample_rate) + " differs from configured " +
                     std::to_string(cfg.sample_rate));
  }
  const std::size_t frames = num_fbank_frames(wave.samples.size(), cfg);
  if (frames == 0) {
    throw InputError("waveform of " + std::to_string(wave.samples.size()) +
                     " samples is shorter than one analysis window (" + std::to_string(cfg.window_samples()) + ")");
  }
  MelAnalyzer analyzer(cfg);
  std::vector<double> out(frames * cfg.n_mels);
  for (std::size_t t = 0; t < frames; ++t) analyzer.analyze(wave.samples, t * cfg.hop_samples(), out.data() + t * cfg.n_mels);
  return {Tensor::from({frames, cfg.n_mels}, std::move(out)), cfg.frame_shift_ms, cfg.frame_length_ms};
}

std::vector<double> log_mel_frames(std::span<const double> samples, std::span<const std::size_t> offsets,
                                   const FrontendConfig& cfg) {
  MelAnalyzer analyzer(cfg);
  std::vector<double> out(offsets.size() * cfg.n_mels);
  for (std::size_t i = 0; i < offsets.size(); ++i) analyzer.analyze(samples, offsets[i], out.data() + i * cfg.n_mels);
  return out;
}

Waveform speed_perturb(const Waveform& wave, double factor) {
  if (!(factor > 0.0)) throw InputError("speed perturbation factor must be positive");
  if (factor == 1.0) return wave;
  const std::size_t n = wave.samples.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / factor));
  Waveform out{std::vector<double>(out_len), wave.sample_rate};
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto left = static_cast<std::size_t>(pos);
    if (left + 1 >= n) {
      out.samples[i] = n ? wave.samples[n - 1] : 0.0;
      continue;
    }
    const double frac = pos - static_cast<double>(left);
    out.samples[i] = (1.0 - frac) * wave.samples[left] + frac * wave.samples[left + 1];
  }
  return out;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open WAV file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(path.string() + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform wave;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = get_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw FormatError(path.string() + ": truncated WAV chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(path.string() + ": short fmt chunk");
      const auto format = get_u16(body), channels = get_u16(body + 2), bits = get_u16(body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(path.string() + ": only mono 16-bit PCM WAV is supported");
      }
      wave.sample_rate = static_cast<int>(get_u32(body + 4));
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt chunk");
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(get_u16(body + 2 * i));
        wave.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      if (wave.samples.empty()) throw FormatError(path.string() + ": empty data chunk");
      return wave;
    }
    pos += 8 + size + (size & 1);
  }
  throw FormatError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot write WAV file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  put_le<std::uint32_t>(out, data_bytes);
  for (double s : wave.samples) {
    const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clamped * 32768.0))));
  }
  if (!out) throw StorageError("failed writing WAV file " + path.string());
}

}  // namespace sslfuse
