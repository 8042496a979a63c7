#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "sslfuse/audio.hpp"
#include "sslfuse/errors.hpp"

using namespace sslfuse;

namespace {

Waveform tone(double hz, std::size_t n, int sr = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = sr;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * i / sr));
  return w;
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < t.dim(1); ++j)
    if (t.at(row, j) > t.at(row, best)) best = j;
  return best;
}

// Naive DFT peak search over integer-bin frequencies.
double dominant_frequency(const std::vector<double>& x, int sr, double& bin_hz) {
  const std::size_t n = x.size();
  bin_hz = static_cast<double>(sr) / static_cast<double>(n);
  double best_mag = -1.0, best_f = 0.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best_f = k * bin_hz;
    }
  }
  return best_f;
}

}  // namespace

TEST_CASE("silence hits the log floor everywhere") {
  FrontendConfig cfg;
  const auto fb = fbank(Waveform{std::vector<double>(4000, 0.0), 16000}, cfg);
  for (double v : fb.frames.data()) CHECK(v == std::log(cfg.log_floor));
}

TEST_CASE("frame count for one second") {
  FrontendConfig cfg;
  CHECK(num_fbank_frames(16000, cfg) == 98);
  const auto fb = fbank(tone(300, 16000), cfg);
  CHECK(fb.num_frames() == 98);
  CHECK(fb.frames.dim(1) == 80);
  CHECK(fb.frame_shift_ms == 10.0);
  CHECK(fb.frame_length_ms == 25.0);
}

TEST_CASE("440 Hz tone peaks in the filter centred nearest 440 Hz") {
  FrontendConfig cfg;
  const auto centers = mel_center_frequencies(cfg);
  std::size_t nearest = 0;
  for (std::size_t m = 1; m < centers.size(); ++m)
    if (std::abs(centers[m] - 440.0) < std::abs(centers[nearest] - 440.0)) nearest = m;
  // HTK mel scale, 80 filters between 0 Hz and 8 kHz: filter 15 (0-based) is centred near 451.5 Hz.
  CHECK(nearest == 15);
  CHECK(centers[15] == doctest::Approx(451.5425976443087).epsilon(1e-12));
  const auto fb = fbank(tone(440, 16000), cfg);
  for (std::size_t t = 0; t < fb.num_frames(); ++t) CHECK(argmax_row(fb.frames, t) == nearest);
}

TEST_CASE("mel scale round trip and centre spacing") {
  for (double hz : {0.0, 100.0, 440.0, 1000.0, 8000.0}) CHECK(mel_to_hz(hz_to_mel(hz)) == doctest::Approx(hz));
  CHECK(hz_to_mel(1000.0) == doctest::Approx(2595.0 * std::log10(1.0 + 1000.0 / 700.0)));
  const auto c = mel_center_frequencies(FrontendConfig{});
  CHECK(c.size() == 80);
  for (std::size_t i = 1; i < c.size(); ++i) CHECK(c[i] > c[i - 1]);
}

TEST_CASE("fbank is pure, floored and monotone in length") {
  FrontendConfig cfg;
  const auto w = tone(1234, 8000);
  const auto a = fbank(w, cfg), b = fbank(w, cfg);
  CHECK(std::equal(a.frames.data().begin(), a.frames.data().end(), b.frames.data().begin()));
  for (double v : a.frames.data()) {
    CHECK(std::isfinite(v));
    CHECK(v >= std::log(cfg.log_floor));
  }
  std::size_t prev = 0;
  for (std::size_t n = 400; n < 2000; n += 37) {
    const auto t = num_fbank_frames(n, cfg);
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("fbank input errors") {
  FrontendConfig cfg;
  CHECK_THROWS_AS(fbank(Waveform{std::vector<double>(399, 0.1), 16000}, cfg), InputError);
  CHECK_THROWS_AS(fbank(Waveform{std::vector<double>(800, 0.1), 8000}, cfg), InputError);
}

TEST_CASE("speed perturbation") {
  const auto w = tone(440, 900);
  const auto same = speed_perturb(w, 1.0);
  CHECK(same.samples == w.samples);
  CHECK(speed_perturb(w, 0.9).samples.size() == 1000);
  CHECK(speed_perturb(w, 1.1).samples.size() == 818);
  CHECK_THROWS_AS(speed_perturb(w, 0.0), InputError);
  CHECK_THROWS_AS(speed_perturb(w, -1.0), InputError);
}

TEST_CASE("speed perturbation shifts pitch by the factor") {
  const auto w = tone(440, 4400);
  const auto fast = speed_perturb(w, 1.1);
  double bin_hz = 0.0;
  const double f = dominant_frequency(fast.samples, fast.sample_rate, bin_hz);
  CHECK(std::abs(f - 484.0) <= bin_hz);
}

TEST_CASE("wav round trip and format errors") {
  const auto dir = std::filesystem::temp_directory_path() / "sslfuse_audio_test";
  std::filesystem::create_directories(dir);
  Waveform w = tone(700, 1600);
  write_wav(dir / "a.wav", w);
  const auto r = read_wav(dir / "a.wav");
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) <= 0.5 / 32768.0 + 1e-12);
  {
    std::ofstream bad(dir / "bad.wav", std::ios::binary);
    bad << "RIFF0000WAVEjunk";
  }
  CHECK_THROWS_AS(read_wav(dir / "bad.wav"), FormatError);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), StorageError);
  std::filesystem::remove_all(dir);
}
