#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>

#include "sslfuse/audio.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/ssl_cache.hpp"

using namespace sslfuse;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = SSLFUSE_FIXTURE_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SslSequence matrix(std::size_t t, std::size_t d, std::vector<float> v) {
  SslSequence s;
  s.frames = t;
  s.dim = d;
  s.values = std::move(v);
  return s;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("2x3 matrix round-trips bitwise including -0 and subnormals") {
  TempDir dir("sslfuse_ssf_rt");
  const auto seq = matrix(2, 3, {1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), -2.25f,
                                 std::numeric_limits<float>::max(), 0.1f});
  write_features(seq, dir.path / "x.ssf");
  const auto back = read_features(dir.path / "x.ssf");
  CHECK(back.frames == 2);
  CHECK(back.dim == 3);
  CHECK(same_bits(back.values, seq.values));
  CHECK(back.utterance_id == "x");
  CHECK(fs::file_size(dir.path / "x.ssf") == 32 + 4 * 2 * 3);
  CHECK_FALSE(fs::exists(dir.path / "x.ssf.tmp"));
}

TEST_CASE("golden fixture written by an independent encoder") {
  const auto seq = read_features(kFixtures / "sample_2x3.ssf");
  CHECK(same_bits(seq.values, {1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), -2.25f,
                               std::numeric_limits<float>::max(), 0.1f}));
  std::ifstream in(kFixtures / "sample_2x3.ssf", std::ios::binary);
  std::vector<unsigned char> golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(encode_features(seq) == golden);
}

TEST_CASE("empty and non-finite matrices are rejected") {
  CHECK_THROWS_AS(encode_features(matrix(0, 3, {})), InputError);
  CHECK_THROWS_AS(encode_features(matrix(1, 1, {std::numeric_limits<float>::quiet_NaN()})), InputError);
}

TEST_CASE("file size is header plus payload") {
  for (std::size_t t : {1u, 3u, 17u})
    for (std::size_t d : {1u, 5u, 768u}) {
      CHECK(encode_features(matrix(t, d, std::vector<float>(t * d, 0.5f))).size() == 32 + 4 * t * d);
    }
}

TEST_CASE("reader errors name the offending field") {
  const auto good = encode_features(matrix(2, 3, std::vector<float>(6, 1.0f)));
  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  CHECK(error_of([&] { decode_features(truncated); }).find("payload length mismatch") != std::string::npos);
  CHECK(error_of([&] { read_features(kFixtures / "truncated_2x3.ssf"); }).find("payload length mismatch") !=
        std::string::npos);
  auto magic = good;
  magic[0] = 'X';
  CHECK(error_of([&] { decode_features(magic); }).find("bad magic") != std::string::npos);
  auto version = good;
  version[4] = 2;
  CHECK(error_of([&] { decode_features(version); }).find("version") != std::string::npos);
  auto reserved = good;
  reserved[20] = 1;
  CHECK(error_of([&] { decode_features(reserved); }).find("reserved") != std::string::npos);
  auto zero = good;
  std::memset(zero.data() + 8, 0, 4);
  CHECK(error_of([&] { decode_features(zero); }).find("T' is zero") != std::string::npos);
  std::vector<unsigned char> header(good.begin(), good.begin() + 10);
  CHECK(error_of([&] { decode_features(header); }).find("truncated header") != std::string::npos);
  auto nan = good;
  const auto bits = std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN());
  std::memcpy(nan.data() + 32, &bits, 4);
  CHECK(error_of([&] { decode_features(nan); }).find("non-finite") != std::string::npos);
  // An extent product that overflows 32 bits must not be mistaken for a short payload.
  auto huge = good;
  const std::uint32_t big = 0x40000000;
  std::memcpy(huge.data() + 8, &big, 4);
  std::memcpy(huge.data() + 12, &big, 4);
  CHECK(error_of([&] { decode_features(huge); }).find("payload length mismatch") != std::string::npos);
}

TEST_CASE("synthetic features: stride arithmetic and determinism") {
  SynthConfig cfg;
  cfg.source_tag = "hubert-base";
  cfg.dim = 768;
  cfg.stride = 320;
  cfg.seed = 3;
  const auto a = synth_features("utt1", 16000, cfg);
  CHECK(a.frames == 50);
  CHECK(a.dim == 768);
  CHECK(same_bits(a.values, synth_features("utt1", 16000, cfg).values));
  CHECK_FALSE(same_bits(a.values, synth_features("utt2", 16000, cfg).values));
  cfg.seed = 4;
  CHECK_FALSE(same_bits(a.values, synth_features("utt1", 16000, cfg).values));
  CHECK(synth_features("x", 16639, cfg).frames == 51);
  cfg.dim = 512;
  CHECK_THROWS_AS(synth_features("utt1", 16000, cfg), ConfigError);
}

TEST_CASE("content-mixed synthetic features") {
  Waveform w;
  for (int i = 0; i < 8000; ++i) w.samples.push_back(0.3 * std::sin(0.2 * i));
  SynthConfig cfg;
  cfg.dim = 16;
  const auto noise = synth_features("u", w, cfg);
  CHECK(same_bits(noise.values, synth_features("u", w.samples.size(), cfg).values));
  cfg.content_mix = 0.5;
  const auto mixed = synth_features("u", w, cfg);
  CHECK(mixed.frames == 25);
  CHECK(same_bits(mixed.values, synth_features("u", w, cfg).values));
  CHECK_FALSE(same_bits(mixed.values, noise.values));
  for (float v : mixed.values) CHECK(std::isfinite(v));
}

TEST_CASE("registered widths") {
  CHECK(registered_dim("w2v-base") == 768u);
  CHECK(registered_dim("hubert-base") == 768u);
  CHECK(registered_dim("hubert-large") == 1024u);
  CHECK_FALSE(registered_dim("synthetic").has_value());
}

TEST_CASE("manifest round trip and validation") {
  TempDir dir("sslfuse_manifest");
  write_wav(dir.path / "a.wav", Waveform{std::vector<double>(1600, 0.1), 16000});
  write_features(matrix(5, 768, std::vector<float>(5 * 768, 0.0f)), dir.path / "a.ssf");
  fs::copy_file(kFixtures / "dim512_1x512.ssf", dir.path / "b.ssf");
  Manifest m;
  m.base_dir = dir.path;
  m.records.push_back({"a", "a.wav", "hello world", {"a.ssf"}});
  write_manifest(m, dir.path / "m.tsv");
  const auto back = read_manifest(dir.path / "m.tsv");
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0].transcript == "hello world");
  CHECK(back.records[0].feature_paths == std::vector<std::string>{"a.ssf"});
  CHECK(validate_manifest(back, {"hubert-base"}).ok());

  auto missing = back;
  missing.records[0].feature_paths = {"nope.ssf"};
  auto r = validate_manifest(missing, {"hubert-base"});
  REQUIRE(r.issues.size() == 1);
  CHECK(r.issues[0].message.find("feature file absent") != std::string::npos);

  auto narrow = back;
  narrow.records[0].feature_paths = {"b.ssf"};
  r = validate_manifest(narrow, {"hubert-base"});
  REQUIRE(r.issues.size() == 1);
  CHECK(r.issues[0].message.find("dimension mismatch (expected 768") != std::string::npos);

  auto dup = back;
  dup.records.push_back(dup.records[0]);
  dup.records[1].transcript = " ";
  r = validate_manifest(dup, {"hubert-base"});
  CHECK(r.issues.size() == 2);
}

TEST_CASE("manifest parse errors") {
  CHECK_THROWS_AS(parse_manifest("only\ttwo\n", "."), FormatError);
}
