// SPDX-License-Identifier: Apache-2.0
//
// Python bindings: corpus generation, kernels, losses, training, prediction
// and length-binned evaluation.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "lister/baselines.hpp"
#include "lister/corpus.hpp"
#include "lister/harness.hpp"
#include "lister/kernels.hpp"
#include "lister/model.hpp"
#include "lister/neighbor_decoder.hpp"
#include "lister/objectives.hpp"

namespace py = pybind11;
using namespace lister;

namespace {

Matrix masked_softmax(const Matrix& logits, const std::vector<bool>& mask) {
  if (static_cast<Index>(mask.size()) != logits.cols()) throw Error("mask length must equal the number of columns");
  Mask m(mask.begin(), mask.end());
  return kernels::masked_softmax_rows<Real>(logits, m);
}

Real entropy_value(const Matrix& rollout, Index positions) {
  ad::Tape t(false);
  return objectives::entropy_loss(t.constant(rollout), positions).scalar();
}

Real eos_value(const Matrix& rollout, Index eos_column) {
  ad::Tape t(false);
  return objectives::eos_loss(t.constant(rollout), eos_column).scalar();
}

harness::TrainConfig train_config(const py::dict& kw) {
  harness::TrainConfig cfg;
  for (auto item : kw) {
    const auto key = item.first.cast<std::string>();
    const py::handle v = item.second;
    if (key == "decoder") cfg.model.decoder = parse_decoder(v.cast<std::string>());
    else if (key == "channels") cfg.model.encoder.channels = v.cast<int>();
    else if (key == "stem_channels") cfg.model.encoder.stem_channels = v.cast<int>();
    else if (key == "mid_channels") cfg.model.encoder.mid_channels = v.cast<int>();
    else if (key == "context_layers") cfg.model.encoder.context_layers = v.cast<int>();
    else if (key == "fem_iters") cfg.model.fem.iterations = v.cast<int>();
    else if (key == "fem_heads") cfg.model.fem.heads = v.cast<int>();
    else if (key == "fem_window") cfg.model.fem.window = v.cast<int>();
    else if (key == "pat_max_len") cfg.model.pat_max_len = v.cast<int>();
    else if (key == "decoder_init_std") cfg.model.decoder_init_std = v.cast<Real>();
    else if (key == "lambda_eos") cfg.model.loss.lambda_eos = v.cast<Real>();
    else if (key == "lambda_ent") cfg.model.loss.lambda_ent = v.cast<Real>();
    else if (key == "batch_size") cfg.batch_size = v.cast<int>();
    else if (key == "epochs") cfg.epochs = v.cast<int>();
    else if (key == "lr") cfg.lr = v.cast<Real>();
    else if (key == "warmup_steps") cfg.warmup_steps = v.cast<long>();
    else if (key == "lr_floor") cfg.lr_floor = v.cast<Real>();
    else if (key == "weight_decay") cfg.weight_decay = v.cast<Real>();
    else if (key == "grad_clip") cfg.grad_clip = v.cast<Real>();
    else if (key == "seed") cfg.seed = v.cast<std::uint64_t>();
    else if (key == "threads") cfg.threads = v.cast<int>();
    else if (key == "bucket") cfg.bucket = v.cast<bool>();
    else throw Error("unknown training option '" + key + "'");
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_lister, m) {
  m.doc() = "Neighbor-decoding text recognizer: corpus, kernels, training and evaluation";

  py::register_exception<Error>(m, "ListerError", PyExc_ValueError);

  // ---- corpus ----
  py::class_<corpus::GlyphAlphabet>(m, "GlyphAlphabet")
      .def_static("generate", &corpus::GlyphAlphabet::generate, py::arg("symbols"), py::arg("seed") = 0,
                  py::arg("glyph_size") = 8)
      .def_property_readonly("size", &corpus::GlyphAlphabet::size)
      .def_property_readonly("eos_class", &corpus::GlyphAlphabet::eos_class)
      .def_property_readonly("num_classes", &corpus::GlyphAlphabet::num_classes)
      .def("glyph", [](const corpus::GlyphAlphabet& a, int s) {
        const int k = a.glyph_size();
        Matrix g(k, k);
        for (int r = 0; r < k; ++r)
          for (int c = 0; c < k; ++c) g(r, c) = a.pixel(s, r, c) ? 1.0 : 0.0;
        return g;
      });

  py::class_<corpus::Sample>(m, "Sample")
      .def_readonly("image", &corpus::Sample::image)
      .def_readonly("label", &corpus::Sample::label)
      .def_readonly("valid_width", &corpus::Sample::valid_width);

  py::class_<corpus::Corpus>(m, "Corpus")
      .def_readonly("alphabet", &corpus::Corpus::alphabet)
      .def_readonly("samples", &corpus::Corpus::samples)
      .def("__len__", [](const corpus::Corpus& c) { return c.samples.size(); });

  m.def("render_sample", [](const std::vector<int>& label, const corpus::GlyphAlphabet& a, std::uint64_t seed) {
    return corpus::render_sample(label, a, seed);
  }, py::arg("label"), py::arg("alphabet"), py::arg("seed") = 0);
  m.def(
      "build_corpus",
      [](int n, const std::string& dist, int min_len, int max_len, const corpus::GlyphAlphabet& a, std::uint64_t seed,
         const std::filesystem::path& out, Real decay) {
        corpus::build_corpus(n, corpus::LengthDistribution::parse(dist, min_len, max_len, decay), a, seed, out);
      },
      py::arg("n"), py::arg("dist"), py::arg("min_len"), py::arg("max_len"), py::arg("alphabet"), py::arg("seed"),
      py::arg("out_dir"), py::arg("decay") = 0.7);
  m.def("load_corpus", &corpus::load_corpus, py::arg("dir"));

  // ---- kernels and losses ----
  m.def("masked_softmax", &masked_softmax, py::arg("logits"), py::arg("mask"));
  m.def("sharpen", &nd::sharpen, py::arg("row"), py::arg("alpha"));
  m.def("alpha_schedule", [](int j, Real lambda, Real mu) {
    nd::SharpenConfig c;
    c.lambda = lambda;
    c.mu = mu;
    return nd::alpha_schedule(j, c);
  }, py::arg("j"), py::arg("lam") = 2.0, py::arg("mu") = 16.0);
  m.def("rollout", [](const RowVector& first, const Matrix& neighbor, Index eos, bool sharpen, Real epsilon,
                      int max_steps) {
    nd::SharpenConfig c;
    c.enabled = sharpen;
    c.epsilon = epsilon;
    c.validate();
    auto r = nd::rollout(first, neighbor, eos, c, max_steps);
    return py::make_tuple(r.rows, r.terminated);
  }, py::arg("first"), py::arg("neighbor"), py::arg("eos"), py::arg("sharpen") = true, py::arg("epsilon") = 0.6,
        py::arg("max_steps") = 64);
  m.def("entropy_loss", &entropy_value, py::arg("rollout"), py::arg("positions"));
  m.def("eos_loss", &eos_value, py::arg("rollout"), py::arg("eos_column"));
  m.def("ctc_loss", &baselines::ctc_loss_value, py::arg("logits"), py::arg("target"), py::arg("blank"));
  m.def("ctc_collapse", &baselines::ctc_collapse, py::arg("path"), py::arg("blank"));

  // ---- models ----
  py::class_<Prediction>(m, "Prediction")
      .def_readonly("symbols", &Prediction::symbols)
      .def_readonly("terminated", &Prediction::terminated)
      .def_readonly("attention", &Prediction::attention);

  py::class_<Recognizer>(m, "Recognizer")
      .def_static("load", &Recognizer::load, py::arg("dir"))
      .def_property_readonly("decoder", [](const Recognizer& r) { return to_string(r.config().decoder); })
      .def_property_readonly("config", [](const Recognizer& r) { return r.config().to_json().dump(); })
      .def("save", [](const Recognizer& r, const std::filesystem::path& dir) { r.save(dir); }, py::arg("dir"))
      .def(
          "predict",
          [](const Recognizer& r, const Matrix& image, int valid_width, bool sharpen) {
            nd::SharpenConfig c;
            c.enabled = sharpen;
            py::gil_scoped_release release;
            return r.predict(image, valid_width > 0 ? valid_width : static_cast<int>(image.cols()), c);
          },
          py::arg("image"), py::arg("valid_width") = 0, py::arg("sharpen") = true);

  m.def(
      "train",
      [](const corpus::Corpus& data, py::kwargs kw) {
        harness::TrainConfig cfg = train_config(kw);
        std::ostringstream csv;
        harness::TrainResult r = [&] {
          py::gil_scoped_release release;
          return harness::train_model(cfg, data, &csv);
        }();
        return py::make_tuple(std::move(r.model), r.summary.first.total, r.summary.last.total, csv.str());
      },
      py::arg("corpus"),
      "Trains on an in-memory corpus. Keyword options mirror the command-line keys "
      "(decoder, epochs, batch_size, lr, fem_iters, ...). Returns (model, first_loss, last_loss, loss_csv).");

  m.def(
      "evaluate",
      [](const Recognizer& model, const corpus::Corpus& data, int seen_max, bool sharpen, int batch_size) {
        harness::EvalOptions eo;
        eo.sharpen.enabled = sharpen;
        eo.batch_size = batch_size;
        std::vector<Prediction> preds;
        harness::LengthReport r;
        {
          py::gil_scoped_release release;
          r = harness::evaluate_by_length(model, data, seen_max, eo, "model", &preds);
        }
        py::dict by_length;
        for (const auto& b : r.bins) by_length[py::int_(b.length)] = py::make_tuple(b.count, b.correct);
        py::dict out;
        out["seen"] = r.seen().accuracy();
        out["unseen"] = r.unseen().accuracy();
        out["total"] = r.total().accuracy();
        out["by_length"] = by_length;
        out["predictions"] = preds;
        return out;
      },
      py::arg("model"), py::arg("corpus"), py::arg("seen_max") = 8, py::arg("sharpen") = true,
      py::arg("batch_size") = 64);
}
