#include "sslfuse/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

#include "sslfuse/attention_export.hpp"
#include "sslfuse/audio.hpp"
#include "sslfuse/checkpoint.hpp"
#include "sslfuse/config.hpp"
#include "sslfuse/corpus.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/model.hpp"
#include "sslfuse/ssl_cache.hpp"
#include "sslfuse/trainer.hpp"
#include "sslfuse/wer.hpp"

namespace sslfuse {

namespace {

std::string fmt(double v, const char* spec = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Options shared by the subcommands that build a run configuration.
struct ConfigFlags {
  std::string config_path;
  std::string preset;
  std::string mode;
  std::vector<std::string> sources;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value configuration file");
    app->add_option("--preset", preset, "start from a named configuration (toy)");
    app->add_option("--mode", mode, "fusion mode: none, sfa, ca, multi-ca");
    app->add_option("--ssl-source", sources, "SSL source tag, repeatable, in manifest column order");
    app->add_option("--seed", seed, "seed for all randomness");
  }

  RunConfig build() const {
    RunConfig cfg;
    std::optional<FusionMode> m;
    if (!mode.empty()) {
      try {
        m = parse_fusion_mode(mode);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
    }
    if (preset == "toy") {
      cfg = toy_run_config(m.value_or(FusionMode::kCa));
    } else if (!preset.empty()) {
      throw UsageError("unknown preset '" + preset + "'");
    }
    if (!config_path.empty()) cfg = load_run_config(config_path, cfg);
    if (m) cfg.model.mode = *m;
    if (!sources.empty()) {
      cfg.model.ssl_sources = sources;
      cfg.model.ssl_dims.clear();
    }
    if (cfg.model.mode != FusionMode::kNone && cfg.model.ssl_sources.empty()) {
      cfg.model.ssl_sources = {"hubert-base"};
      cfg.model.ssl_dims.clear();
    }
    if (cfg.model.mode == FusionMode::kMultiCa && cfg.model.ssl_sources.size() < 2) {
      throw UsageError("multi-ca needs at least two --ssl-source values");
    }
    if (seed) cfg.train.seed = *seed;
    finalize(cfg);
    return cfg;
  }
};

int run_features_synth(const std::string& manifest_path, const std::vector<std::string>& sources, std::size_t dim,
                       std::size_t stride, double mix, std::uint64_t seed, const std::string& out_dir,
                       std::ostream& out) {
  if (sources.empty()) throw UsageError("features synth needs at least one --ssl-source");
  auto manifest = read_manifest(manifest_path);
  const std::filesystem::path dir(out_dir);
  for (const auto& src : sources) std::filesystem::create_directories(dir / "feats" / src);
  Manifest result;
  result.base_dir = dir;
  for (const auto& rec : manifest.records) {
    const auto wave = read_wav(manifest.resolve(rec.audio_path));
    UtteranceRecord r = rec;
    r.audio_path = std::filesystem::absolute(manifest.resolve(rec.audio_path)).string();
    r.feature_paths.clear();
    for (const auto& src : sources) {
      SynthConfig sc;
      sc.source_tag = src;
      sc.dim = registered_dim(src).value_or(dim);
      sc.stride = stride;
      sc.seed = seed;
      sc.content_mix = mix;
      sc.frontend.sample_rate = wave.sample_rate;
      const std::string rel = "feats/" + src + "/" + rec.id + ".ssf";
      write_features(synth_features(rec.id, wave, sc), dir / rel);
      r.feature_paths.push_back(rel);
    }
    result.records.push_back(std::move(r));
  }
  write_manifest(result, dir / "manifest.tsv");
  out << (dir / "manifest.tsv").string() << '\n';
  return 0;
}

int run_features_validate(const std::string& manifest_path, const std::vector<std::string>& sources,
                          const std::vector<std::string>& files, std::ostream& out, std::ostream& err) {
  if (manifest_path.empty() && files.empty()) throw UsageError("features validate needs --manifest or SSF1 files");
  std::size_t problems = 0;
  for (const auto& f : files) {
    try {
      const auto seq = read_features(f);
      out << f << "\tok\t" << seq.frames << '\t' << seq.dim << '\n';
    } catch (const Error& e) {
      err << f << ": " << e.what() << '\n';
      ++problems;
    }
  }
  if (!manifest_path.empty()) {
    const auto report = validate_manifest(read_manifest(manifest_path), sources);
    for (const auto& issue : report.issues) err << issue.utterance_id << ": " << issue.message << '\n';
    problems += report.issues.size();
    out << "records\t" << report.records_checked << "\tissues\t" << report.issues.size() << '\n';
  }
  return problems ? 2 : 0;
}

int run_fbank(const std::string& wav, const ConfigFlags& flags, const std::string& out_path, std::ostream& out) {
  RunConfig cfg;
  if (!flags.config_path.empty()) cfg = load_run_config(flags.config_path);
  const auto fb = fbank(read_wav(wav), cfg.frontend);
  const std::size_t t = fb.frames.dim(0), n = fb.frames.dim(1);
  const auto data = fb.frames.data();
  if (!out_path.empty()) {
    SslSequence seq;
    seq.frames = t;
    seq.dim = n;
    seq.values.assign(data.begin(), data.end());
    write_features(seq, out_path);
    out << t << '\t' << n << '\n';
    return 0;
  }
  out << t << '\t' << n << '\n';
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < n; ++j) out << (j ? "\t" : "") << fmt(data[i * n + j]);
    out << '\n';
  }
  return 0;
}

int run_train(const ConfigFlags& flags, const std::string& manifest_path, const std::string& valid_path,
              const std::string& out_dir, const std::string& resume, std::optional<std::size_t> epochs,
              std::ostream& out, std::ostream& err) {
  if (manifest_path.empty()) throw UsageError("train needs --manifest");
  if (out_dir.empty()) throw UsageError("train needs --out");
  auto cfg = flags.build();
  if (epochs) cfg.train.epochs = *epochs;
  const auto manifest = read_manifest(manifest_path);
  const auto report = validate_manifest(manifest, cfg.model.ssl_sources);
  if (!report.ok()) {
    for (const auto& issue : report.issues) err << issue.utterance_id << ": " << issue.message << '\n';
    throw InputError("training manifest failed validation");
  }
  auto train = load_dataset(manifest, cfg);
  auto valid = valid_path.empty() ? train : load_dataset(read_manifest(valid_path), cfg);
  Trainer trainer(cfg, std::move(train), std::move(valid));
  if (!resume.empty()) trainer.restore(load_checkpoint(resume));
  TrainOutputs outputs;
  outputs.out_dir = out_dir;
  outputs.on_epoch = [&err](const EpochReport& r) { err << r.log_line() << '\n'; };
  const auto summary = trainer.train(outputs);
  out << "epochs\t" << trainer.epochs_done() << '\n'
      << "steps\t" << trainer.optimizer_steps() << '\n'
      << "best_epoch\t" << summary.best_epoch << '\n'
      << "best_valid_loss\t" << fmt(summary.best_valid_loss) << '\n';
  if (!summary.epochs.empty()) out << "final_valid_wer\t" << fmt(summary.epochs.back().valid_wer) << '\n';
  return 0;
}

int run_decode(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& manifest_path,
               const std::string& out_path, std::ostream& out) {
  if (ckpt_path.empty() || manifest_path.empty()) throw UsageError("decode needs --checkpoint and --manifest");
  const auto ckpt = load_checkpoint(ckpt_path);
  std::optional<RunConfig> expected;
  if (!flags.config_path.empty() || !flags.mode.empty() || !flags.preset.empty()) expected = flags.build();
  const auto result = evaluate(ckpt, read_manifest(manifest_path), expected ? &*expected : nullptr);
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& u : result.utterances) rows.emplace_back(u.id, u.hypothesis);
  if (!out_path.empty()) {
    write_hypotheses(rows, out_path);
  } else {
    for (const auto& [id, text] : rows) out << id << '\t' << text << '\n';
  }
  out << "WER " << fmt(result.corpus.rate, "%.4f") << " S=" << result.corpus.substitutions
      << " D=" << result.corpus.deletions << " I=" << result.corpus.insertions
      << " N=" << result.corpus.reference_words << '\n';
  return 0;
}

int run_score(const std::string& ref_path, const std::string& hyp_path, std::ostream& out) {
  const auto refs = read_hypotheses(ref_path);
  std::map<std::string, std::string> hyps;
  for (auto& [id, text] : read_hypotheses(hyp_path)) hyps[id] = text;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& [id, text] : refs) {
    const auto it = hyps.find(id);
    if (it == hyps.end()) throw InputError("hypothesis file has no entry for " + id);
    const auto w = wer(text, it->second);
    out << id << '\t' << fmt(w.rate, "%.4f") << '\n';
    pairs.emplace_back(text, it->second);
  }
  const auto total = corpus_wer(pairs);
  out << "WER " << fmt(total.rate, "%.4f") << " S=" << total.substitutions << " D=" << total.deletions
      << " I=" << total.insertions << " N=" << total.reference_words << '\n';
  return 0;
}

int run_params(const ConfigFlags& flags, std::ostream& out) {
  const auto cfg = flags.build();
  const auto r = param_count(cfg.model);
  out << "mode\t" << to_string(cfg.model.mode) << '\n'
      << "frontend_subsample\t" << r.frontend_subsample << '\n'
      << "fusion\t" << r.fusion << '\n'
      << "encoder_blocks\t" << r.encoder_blocks << '\n'
      << "decoder\t" << r.decoder << '\n'
      << "heads\t" << r.heads << '\n'
      << "total\t" << r.total() << '\n';
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SSL feature fusion for conformer speech recognition"};
  app.name("sslfuse");
  app.require_subcommand(1);

  auto* features = app.add_subcommand("features", "SSL feature cache tooling");
  features->require_subcommand(1);
  std::string manifest_path, out_path;
  std::vector<std::string> sources;
  std::size_t synth_dim = 64, stride = 320;
  double mix = 0.0;
  std::uint64_t seed = 0;
  auto* synth = features->add_subcommand("synth", "write synthetic SSF1 features for every manifest utterance");
  synth->add_option("--manifest", manifest_path)->required();
  synth->add_option("--ssl-source", sources, "source tag, repeatable");
  synth->add_option("--dim", synth_dim, "width for unregistered source tags");
  synth->add_option("--stride", stride, "waveform samples per SSL frame");
  synth->add_option("--content-mix", mix, "weight of the log-mel content channel");
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_path, "output directory")->required();
  std::vector<std::string> files;
  auto* validate = features->add_subcommand("validate", "check SSF1 files or a manifest");
  validate->add_option("--manifest", manifest_path);
  validate->add_option("--ssl-source", sources, "source tag per feature column");
  validate->add_option("files", files, "SSF1 files");

  std::string wav_path;
  ConfigFlags flags;
  auto* fb = app.add_subcommand("fbank", "log-mel filterbank of a WAV file");
  fb->add_option("--wav", wav_path)->required();
  fb->add_option("--config", flags.config_path);
  fb->add_option("--out", out_path, "write an SSF1 file instead of text");

  std::string valid_path, resume, ckpt_path;
  std::optional<std::size_t> epochs;
  auto* train = app.add_subcommand("train", "train a model");
  flags.attach(train);
  train->add_option("--manifest", manifest_path);
  train->add_option("--valid-manifest", valid_path);
  train->add_option("--out", out_path, "output directory");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--epochs", epochs);

  auto* decode = app.add_subcommand("decode", "attention-greedy decoding and scoring");
  decode->add_option("--checkpoint", ckpt_path);
  decode->add_option("--manifest", manifest_path);
  decode->add_option("--out", out_path, "hypothesis file");
  decode->add_option("--config", flags.config_path, "expected configuration");
  decode->add_option("--mode", flags.mode);
  decode->add_option("--ssl-source", flags.sources);
  decode->add_option("--preset", flags.preset);

  std::string ref_path, hyp_path;
  auto* score = app.add_subcommand("score", "word error rate of hypothesis against reference files");
  score->add_option("--ref", ref_path)->required();
  score->add_option("--hyp", hyp_path)->required();

  std::string utterance;
  auto* attn = app.add_subcommand("attn-dump", "export fusion attention as CSV");
  attn->add_option("--checkpoint", ckpt_path)->required();
  attn->add_option("--manifest", manifest_path)->required();
  attn->add_option("--utterance", utterance)->required();
  attn->add_option("--out", out_path)->required();

  auto* params = app.add_subcommand("params", "closed-form parameter counts");
  ConfigFlags param_flags;
  param_flags.attach(params);

  std::uint64_t corpus_seed = 7;
  auto* toy = app.add_subcommand("toy-corpus", "write the synthetic toy corpus");
  toy->add_option("--seed", corpus_seed);
  toy->add_option("--out", out_path)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    if (subs.empty() && !args.empty() && !args.front().starts_with("-")) {
      err << "error: unknown subcommand '" << args.front() << "'\n";
    } else {
      err << "error: " << e.what() << '\n';
    }
    err << (subs.empty() ? app.help() : subs.back()->help());
    return 1;
  }

  try {
    if (*features) {
      if (*synth) return run_features_synth(manifest_path, sources, synth_dim, stride, mix, seed, out_path, out);
      return run_features_validate(manifest_path, sources, files, out, err);
    }
    if (*fb) return run_fbank(wav_path, flags, out_path, out);
    if (*train) return run_train(flags, manifest_path, valid_path, out_path, resume, epochs, out, err);
    if (*decode) return run_decode(flags, ckpt_path, manifest_path, out_path, out);
    if (*score) return run_score(ref_path, hyp_path, out);
    if (*attn) {
      const auto maps = attn_dump(load_checkpoint(ckpt_path), read_manifest(manifest_path), utterance, out_path);
      for (const auto& m : maps) out << m.source_tag << '\t' << m.weights.dim(0) << '\t' << m.weights.dim(1) << '\n';
      return 0;
    }
    if (*params) return run_params(param_flags, out);
    if (*toy) {
      ToyCorpusOptions opt;
      opt.seed = corpus_seed;
      const auto m = gen_toy_corpus(opt, out_path);
      out << (std::filesystem::path(out_path) / "manifest.tsv").string() << '\t' << m.records.size() << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 1;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace sslfuse
