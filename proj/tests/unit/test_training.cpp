#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "sslfuse/corpus.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/trainer.hpp"
#include "test_support.hpp"

using namespace sslfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small corpus and configuration shared by the harness tests.
struct Fixture {
  TempDir dir{"sslfuse_training"};
  Manifest manifest;
  RunConfig cfg;

  explicit Fixture(FusionMode mode = FusionMode::kCa, std::size_t utterances = 6) {
    ToyCorpusOptions opt;
    opt.utterances = utterances;
    opt.max_words = 4;
    manifest = gen_toy_corpus(opt, dir.path / "corpus");
    cfg = toy_run_config(mode);
    cfg.model.d = 8;
    cfg.model.heads = 2;
    cfg.model.encoder_layers = 1;
    cfg.model.ffn_expansion = 2;
    cfg.model.depthwise_kernel = 3;
    cfg.model.subsample_channels = 2;
    cfg.train.batch_size = 2;
    cfg.train.epochs = 3;
    cfg.train.max_decode_len = 6;
    cfg.train.track_train_wer = false;
    cfg.train.stop_at_zero_train_wer = false;
    finalize(cfg);
  }

  Trainer trainer() const {
    auto data = load_dataset(manifest, cfg);
    return Trainer(cfg, data, data);
  }
};

std::vector<double> flat_params(const AsrModel& m) {
  std::vector<double> out;
  for (const auto& e : m.params().entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
  return out;
}

}  // namespace

TEST_CASE("Noam schedule") {
  CHECK(lr_at(25000, 1.0, 256, 25000) == doctest::Approx(std::pow(256.0, -0.5) * std::pow(25000.0, -0.5)).epsilon(1e-15));
  CHECK(std::abs(lr_at(25000, 1.0, 256, 25000) - 3.952847075210474e-4) < 1e-15);
  double prev = 0.0;
  for (std::uint64_t s = 1; s <= 500; ++s) {
    const double r = lr_at(s, 1.0, 256, 500);
    CHECK(r > prev);
    prev = r;
  }
  for (std::uint64_t s = 501; s <= 2000; s += 7) {
    const double r = lr_at(s, 1.0, 256, 500);
    CHECK(r < prev);
    prev = r;
  }
  CHECK(lr_at(10, 2.0, 64, 100) == doctest::Approx(2.0 * lr_at(10, 1.0, 64, 100)));
  CHECK_THROWS_AS(lr_at(0, 1.0, 256, 500), UsageError);
}

TEST_CASE("toy corpus: determinism, validity and stride arithmetic") {
  TempDir dir("sslfuse_toy");
  ToyCorpusOptions opt;
  opt.utterances = 4;
  gen_toy_corpus(opt, dir.path / "a");
  gen_toy_corpus(opt, dir.path / "b");
  for (const auto& entry : fs::recursive_directory_iterator(dir.path / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir.path / "a");
    CHECK(slurp(entry.path()) == slurp(dir.path / "b" / rel));
  }
  const auto m = read_manifest(dir.path / "a" / "manifest.tsv");
  CHECK(m.records.size() == 4);
  CHECK(validate_manifest(m, opt.sources).ok());
  for (const auto& r : m.records) {
    const auto wave = read_wav(m.resolve(r.audio_path));
    for (const auto& f : r.feature_paths) CHECK(read_features(m.resolve(f)).frames == wave.samples.size() / opt.ssl_stride);
    const auto words = split_words(r.transcript);
    CHECK(words.size() >= opt.min_words);
    CHECK(words.size() <= opt.max_words);
    for (std::size_t i = 1; i < words.size(); ++i) CHECK(words[i] != words[i - 1]);
  }
  opt.seed = 8;
  gen_toy_corpus(opt, dir.path / "c");
  CHECK(slurp(dir.path / "a" / "manifest.tsv") != slurp(dir.path / "c" / "manifest.tsv"));
}

TEST_CASE("batch plan is a seeded permutation") {
  Fixture fx;
  const auto data = load_dataset(fx.manifest, fx.cfg);
  const auto plan = plan_batches(data, 2, 1, 0);
  std::multiset<std::size_t> seen;
  for (const auto& b : plan) {
    CHECK(b.size() <= 2);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == data.size());
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == data.size());
  CHECK(plan == plan_batches(data, 2, 1, 0));
  CHECK(plan != plan_batches(data, 2, 1, 1));
}

TEST_CASE("parameters change only once per accumulation window") {
  Fixture fx;
  fx.cfg.train.grad_accum = 4;
  auto trainer = fx.trainer();
  const std::vector<std::size_t> batch = {0, 1};
  auto before = flat_params(trainer.model());
  for (int k = 1; k <= 8; ++k) {
    const bool stepped = trainer.train_micro_batch(batch, false);
    const auto after = flat_params(trainer.model());
    CHECK(stepped == (k % 4 == 0));
    CHECK((after != before) == (k % 4 == 0));
    before = after;
  }
  CHECK(trainer.optimizer_steps() == 2);
}

TEST_CASE("two runs with the same seed end bitwise identical") {
  Fixture fx;
  auto a = fx.trainer();
  auto b = fx.trainer();
  const auto ra = a.train();
  const auto rb = b.train();
  CHECK(flat_params(a.model()) == flat_params(b.model()));
  REQUIRE(ra.epochs.size() == rb.epochs.size());
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    CHECK(ra.epochs[i].train_loss == rb.epochs[i].train_loss);
    CHECK(ra.epochs[i].valid_loss == rb.epochs[i].valid_loss);
    CHECK(ra.epochs[i].valid_wer == rb.epochs[i].valid_wer);
  }
}

TEST_CASE("checkpoint save, load, save is bitwise idempotent") {
  Fixture fx;
  auto trainer = fx.trainer();
  trainer.run_epoch();
  const auto p1 = fx.dir.path / "a.ckpt", p2 = fx.dir.path / "b.ckpt";
  save_checkpoint(trainer.snapshot(), p1);
  save_checkpoint(load_checkpoint(p1), p2);
  CHECK(slurp(p1) == slurp(p2));
  auto fresh = fx.trainer();
  fresh.restore(load_checkpoint(p1));
  CHECK(encode_checkpoint(fresh.snapshot()) == slurp(p1));
}

TEST_CASE("resuming from a checkpoint reproduces later steps bitwise") {
  Fixture fx;
  auto straight = fx.trainer();
  straight.run_epoch();
  const auto ckpt = decode_checkpoint(encode_checkpoint(straight.snapshot()));
  straight.run_epoch();
  straight.run_epoch();
  auto resumed = fx.trainer();
  resumed.restore(ckpt);
  CHECK(resumed.epochs_done() == 1);
  resumed.run_epoch();
  resumed.run_epoch();
  CHECK(flat_params(resumed.model()) == flat_params(straight.model()));
  CHECK(resumed.optimizer().first_moment == straight.optimizer().first_moment);
  CHECK(resumed.optimizer().step == straight.optimizer().step);
}

TEST_CASE("checkpoint fingerprint mismatch is refused") {
  Fixture fx;
  auto trainer = fx.trainer();
  const auto ckpt = trainer.snapshot();
  Fixture other(FusionMode::kSfa);
  auto wrong = other.trainer();
  CHECK_THROWS_AS(wrong.restore(ckpt), ConfigError);
  CHECK_THROWS_AS(evaluate(ckpt, fx.manifest, &other.cfg), ConfigError);
  auto tampered = ckpt;
  tampered.fingerprint ^= 1;
  CHECK_THROWS_AS(checkpoint_config(tampered), FormatError);
}

TEST_CASE("checkpoint decoding errors") {
  Fixture fx;
  const auto bytes = encode_checkpoint(fx.trainer().snapshot());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::vector<unsigned char>(bytes.begin(), bytes.begin() + cut)), FormatError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);
}

TEST_CASE("training aborts on missing features with the utterance id") {
  Fixture fx;
  fs::remove(fx.manifest.resolve(fx.manifest.records[2].feature_paths[0]));
  try {
    load_dataset(fx.manifest, fx.cfg);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find(fx.manifest.records[2].id) != std::string::npos);
  }
}

TEST_CASE("training aborts on a NaN loss with the step index") {
  Fixture fx;
  auto trainer = fx.trainer();
  trainer.run_epoch();
  const auto steps = trainer.optimizer_steps();
  for (const auto& e : trainer.model().params().entries()) {
    Tensor t = e.value;
    t.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    trainer.run_epoch();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step " + std::to_string(steps + 1)) != std::string::npos);
  }
}

TEST_CASE("utterances too short for their transcript are skipped") {
  Fixture fx;
  auto data = load_dataset(fx.manifest, fx.cfg);
  data[0].labels.resize(200, 3);
  Trainer trainer(fx.cfg, data, data);
  const auto report = trainer.run_epoch();
  CHECK(report.skipped == 1);
  CHECK(std::isfinite(report.train_loss));
}

TEST_CASE("train writes a run log and the best checkpoint") {
  Fixture fx;
  auto trainer = fx.trainer();
  TrainOutputs out;
  out.out_dir = fx.dir.path / "run";
  const auto summary = trainer.train(out);
  CHECK(summary.epochs.size() == 3);
  std::ifstream log(fx.dir.path / "run" / "train.log");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), '\t') == 4);
    CHECK(line.rfind(std::to_string(lines) + "\t", 0) == 0);
  }
  CHECK(lines == 3);
  const auto best = load_checkpoint(fx.dir.path / "run" / "best.ckpt");
  CHECK(best.epoch == summary.best_epoch);
  CHECK(best.best_valid_loss == summary.best_valid_loss);
  CHECK(fs::exists(fx.dir.path / "run" / "last.ckpt"));
}

TEST_CASE("toy loss decreases between the first and second ten epochs") {
  Fixture fx(FusionMode::kCa, 8);
  fx.cfg.train.epochs = 20;
  auto trainer = fx.trainer();
  const auto summary = trainer.train();
  std::vector<double> first, second;
  for (const auto& e : summary.epochs) (e.epoch <= 10 ? first : second).push_back(e.train_loss);
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };
  CHECK(median(second) < median(first));
}

TEST_CASE("evaluation aggregates per-utterance edits") {
  Fixture fx;
  auto trainer = fx.trainer();
  trainer.run_epoch();
  const auto result = evaluate(trainer.snapshot(), fx.manifest, &fx.cfg);
  CHECK(result.utterances.size() == fx.manifest.records.size());
  std::size_t edits = 0, words = 0;
  for (const auto& u : result.utterances) {
    edits += u.wer.distance();
    words += u.wer.reference_words;
  }
  CHECK(result.corpus.distance() == edits);
  CHECK(result.corpus.reference_words == words);
  CHECK(result.corpus.rate == static_cast<double>(edits) / static_cast<double>(words));
}

TEST_CASE("hypothesis files round trip") {
  TempDir dir("sslfuse_hyp");
  const std::vector<std::pair<std::string, std::string>> rows = {{"u1", "a b"}, {"u2", ""}, {"u3", "c"}};
  write_hypotheses(rows, dir.path / "h.txt");
  CHECK(read_hypotheses(dir.path / "h.txt") == rows);
  {
    std::ofstream bad(dir.path / "bad.txt");
    bad << "no tab here\n";
  }
  CHECK_THROWS_AS(read_hypotheses(dir.path / "bad.txt"), FormatError);
}

TEST_CASE("run config text round trip and fingerprint scope") {
  auto cfg = toy_run_config(FusionMode::kMultiCa);
  auto back = parse_run_config(cfg.to_text());
  finalize(back);
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.fingerprint() == cfg.fingerprint());
  back.train.epochs = 1;
  CHECK(back.fingerprint() == cfg.fingerprint());
  back.model.d = 16;
  CHECK(back.fingerprint() != cfg.fingerprint());
  CHECK_THROWS_AS(parse_run_config("not_a_key=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("d_model=abc\n"), ConfigError);
}
