#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sslfuse/audio.hpp"
#include "sslfuse/cli.hpp"
#include "sslfuse/corpus.hpp"
#include "sslfuse/ctc.hpp"
#include "sslfuse/errors.hpp"
#include "sslfuse/fusion.hpp"
#include "sslfuse/model.hpp"
#include "sslfuse/ssl_cache.hpp"
#include "sslfuse/trainer.hpp"
#include "sslfuse/vocab.hpp"
#include "sslfuse/wer.hpp"

namespace py = pybind11;
using namespace sslfuse;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor::from({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

F64Array to_array(const Tensor& t) {
  F64Array out({t.dim(0), t.dim(1)});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict wer_dict(const WerBreakdown& w) {
  py::dict d;
  d["wer"] = w.rate;
  d["substitutions"] = w.substitutions;
  d["deletions"] = w.deletions;
  d["insertions"] = w.insertions;
  d["reference_words"] = w.reference_words;
  return d;
}

ModelConfig model_config(const std::string& mode, std::vector<std::string> sources, std::size_t d, std::size_t heads) {
  RunConfig cfg;
  cfg.model.mode = parse_fusion_mode(mode);
  cfg.model.d = d;
  cfg.model.heads = heads;
  if (sources.empty() && cfg.model.mode != FusionMode::kNone) sources = {"hubert-base"};
  cfg.model.ssl_sources = std::move(sources);
  finalize(cfg);
  return cfg.model;
}

}  // namespace

PYBIND11_MODULE(_sslfuse, m) {
  m.doc() = "SSL feature fusion for conformer speech recognition";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<InputError>(m, "InputError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<UsageError>(m, "UsageError", base);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<StorageError>(m, "StorageError", base);
  py::register_exception<LengthError>(m, "LengthError", base);

  m.def(
      "fbank",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples, int sample_rate,
         std::size_t n_mels) {
        Waveform w;
        w.samples.assign(samples.data(), samples.data() + samples.size());
        w.sample_rate = sample_rate;
        FrontendConfig cfg;
        cfg.sample_rate = sample_rate;
        cfg.n_mels = n_mels;
        return to_array(fbank(w, cfg).frames);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("n_mels") = 80,
      "Log-mel filterbank, T x n_mels.");
  m.def("mel_centers", [](std::size_t n_mels) {
    FrontendConfig cfg;
    cfg.n_mels = n_mels;
    return mel_center_frequencies(cfg);
  }, py::arg("n_mels") = 80);

  m.def(
      "read_features",
      [](const std::filesystem::path& path) {
        const auto seq = read_features(path);
        F32Array out({seq.frames, seq.dim});
        std::copy(seq.values.begin(), seq.values.end(), out.mutable_data());
        return out;
      },
      py::arg("path"), "Reads an SSF1 file as a float32 T' x d' array.");
  m.def(
      "write_features",
      [](const std::filesystem::path& path, const F32Array& values) {
        if (values.ndim() != 2) throw ShapeError("features must be a 2-D array");
        SslSequence seq;
        seq.frames = static_cast<std::size_t>(values.shape(0));
        seq.dim = static_cast<std::size_t>(values.shape(1));
        seq.values.assign(values.data(), values.data() + values.size());
        write_features(seq, path);
      },
      py::arg("path"), py::arg("values"));

  m.def(
      "fuse_sfa", [](const F64Array& u, const F64Array& v, std::size_t s) { return to_array(fuse_sfa(to_tensor(u), to_tensor(v), s).frames); },
      py::arg("u_hat"), py::arg("v_hat"), py::arg("ssl_subsample") = 2);

  m.def(
      "ctc_loss",
      [](const F64Array& log_probs, const std::vector<int>& labels, int blank) {
        const auto t = to_tensor(log_probs);
        return ctc_forward_backward(t.data(), t.dim(0), t.dim(1), labels, blank, false).loss;
      },
      py::arg("log_probs"), py::arg("labels"), py::arg("blank") = 0, "Negative log likelihood of labels.");
  m.def("ctc_feasible", [](const std::vector<int>& labels, std::size_t frames) { return ctc_feasible(labels, frames); });

  m.def("wer", [](const std::string& ref, const std::string& hyp) { return wer_dict(wer(ref, hyp)); });
  m.def("corpus_wer", [](const std::vector<std::pair<std::string, std::string>>& pairs) { return wer_dict(corpus_wer(pairs)); });

  m.def(
      "param_count",
      [](const std::string& mode, const std::vector<std::string>& sources, std::size_t d, std::size_t heads) {
        const auto r = param_count(model_config(mode, sources, d, heads));
        py::dict out;
        out["frontend_subsample"] = r.frontend_subsample;
        out["fusion"] = r.fusion;
        out["encoder_blocks"] = r.encoder_blocks;
        out["decoder"] = r.decoder;
        out["heads"] = r.heads;
        out["total"] = r.total();
        return out;
      },
      py::arg("mode") = "none", py::arg("ssl_sources") = std::vector<std::string>{}, py::arg("d") = 256,
      py::arg("heads") = 4);

  m.def("lr_at", &lr_at, py::arg("step"), py::arg("noam_scale"), py::arg("d"), py::arg("warmup"));

  m.def("encode_text", [](const std::string& text) { return Vocabulary::characters().encode(text); });
  m.def("decode_ids", [](const std::vector<int>& ids) { return Vocabulary::characters().decode(ids); });

  m.def(
      "gen_toy_corpus",
      [](const std::filesystem::path& out_dir, std::uint64_t seed, std::size_t utterances) {
        ToyCorpusOptions opt;
        opt.seed = seed;
        opt.utterances = utterances;
        gen_toy_corpus(opt, out_dir);
        return out_dir / "manifest.tsv";
      },
      py::arg("out_dir"), py::arg("seed") = 7, py::arg("utterances") = 20, "Returns the manifest path.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli_main(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand in process; returns (exit_code, stdout, stderr).");
}
