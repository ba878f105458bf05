#include <filesystem>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "csst/config.hpp"
#include "csst/css.hpp"
#include "csst/cst.hpp"
#include "csst/dataset.hpp"
#include "csst/eval.hpp"
#include "csst/gradcheck.hpp"
#include "csst/model.hpp"

namespace py = pybind11;
using namespace csst;

namespace {

// {"data.n_train": 300, "train.cr": "g"} -> validated RunConfig.
RunConfig make_config(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) {
    const auto key = py::str(k).cast<std::string>();
    std::string value;
    if (py::isinstance<py::bool_>(v))
      value = v.cast<bool>() ? "on" : "off";
    else
      value = py::str(v).cast<std::string>();
    cfg.set(key, value);
  }
  cfg.validate();
  cfg.eval.threads = cfg.threads;
  return cfg;
}

py::array_t<double> features(const Sample& s) {
  const std::size_t n = s.objects.size(), d = n ? s.objects.front().vector.size() : 0;
  py::array_t<double> out({n, d});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) m(i, k) = s.objects[i].vector[k];
  return out;
}

py::dict cf_dict(const CounterfactualSample& cf) {
  py::dict d;
  d["origin_id"] = cf.origin_id;
  d["kind"] = to_string(cf.kind);
  d["masked"] = cf.masked;
  d["kept"] = cf.kept;
  d["answers"] = cf.answers;
  d["fell_back"] = cf.fell_back;
  d["anchor"] = cf.scores.anchor;
  d["units"] = cf.scores.units;
  d["scores"] = cf.scores.scores;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "counterfactual synthesis and contrastive training on a synthetic VQA benchmark";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<Sample>(m, "Sample")
      .def_readonly("sample_id", &Sample::sample_id)
      .def_readonly("qtype_id", &Sample::qtype_id)
      .def_readonly("question_tokens", &Sample::question_tokens)
      .def_readonly("answers", &Sample::answers)
      .def_property_readonly("features", &features)
      .def_property_readonly("boxes",
                             [](const Sample& s) {
                               std::vector<std::tuple<double, double, double, double>> b;
                               for (const auto& o : s.objects) b.emplace_back(o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2);
                               return b;
                             })
      .def_property_readonly("categories",
                             [](const Sample& s) {
                               std::vector<std::size_t> c;
                               for (const auto& o : s.objects) c.push_back(o.category_id);
                               return c;
                             })
      .def_property_readonly("critical_objects", [](const Sample& s) { return s.meta.critical_objects; })
      .def_property_readonly("critical_word", [](const Sample& s) { return s.meta.critical_word; })
      .def("__repr__", [](const Sample& s) { return "<Sample " + std::to_string(s.sample_id) + ">"; });

  py::class_<VocabSpec>(m, "Vocab")
      .def_readonly("tokens", &VocabSpec::tokens)
      .def_readonly("answers", &VocabSpec::answers)
      .def_readonly("categories", &VocabSpec::categories)
      .def_readonly("qtype_answers", &VocabSpec::qtype_answers)
      .def_property_readonly_static("mask_id", [](py::object) { return VocabSpec::kMaskId; })
      .def("is_qtype_word", &VocabSpec::is_qtype_word)
      .def("is_content_word", &VocabSpec::is_content_word);

  py::class_<Benchmark>(m, "Benchmark")
      .def_readonly("train", &Benchmark::train)
      .def_readonly("test", &Benchmark::test)
      .def_readonly("vocab", &Benchmark::vocab)
      .def("save",
           [](const Benchmark& b, const std::filesystem::path& dir) {
             std::filesystem::create_directories(dir);
             save_split(dir / "train", b.train);
             save_split(dir / "test", b.test);
             save_vocab(dir / "vocab.json", b.vocab);
           })
      .def_static("load", [](const std::filesystem::path& dir) {
        return Benchmark{load_split(dir / "train"), load_split(dir / "test"), load_vocab(dir / "vocab.json")};
      });

  m.def(
      "generate_benchmark", [](const py::dict& config) { return generate_benchmark(make_config(config).data); },
      py::arg("config") = py::dict(), "Synthetic benchmark from dotted config overrides (data.* keys).");

  py::class_<ModelParams>(m, "Model")
      .def_property_readonly("fusion", [](const ModelParams& p) { return std::string(to_string(p.fusion_mode())); })
      .def_property_readonly("dims",
                             [](const ModelParams& p) {
                               const auto& d = p.dims();
                               py::dict out;
                               out["vocab_size"] = d.vocab_size;
                               out["n_answers"] = d.n_answers;
                               out["feature_dim"] = d.feature_dim;
                               out["hidden"] = d.hidden;
                               out["embed_dim"] = d.embed_dim;
                               out["max_tokens"] = d.max_tokens;
                               return out;
                             })
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { save_checkpoint(path, p); })
      .def_static("load", &load_checkpoint)
      .def(
          "predict",
          [](const ModelParams& p, const std::vector<Sample>& samples) {
            std::vector<ModelInput> inputs;
            for (const auto& s : samples) inputs.push_back(to_input(s));
            const auto rows = predict_logits(p, inputs);
            py::array_t<double> out({rows.size(), p.dims().n_answers});
            auto m = out.mutable_unchecked<2>();
            for (std::size_t i = 0; i < rows.size(); ++i)
              for (std::size_t a = 0; a < rows[i].size(); ++a) m(i, a) = rows[i][a];
            return out;
          },
          "VQA-head logits, one row per sample.")
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def(
      "train",
      [](const Benchmark& b, const py::dict& config) {
        const RunConfig cfg = make_config(config);
        py::gil_scoped_release release;
        Trainer t(b.train, b.vocab, cfg.train, cfg.css);
        const auto stats = t.fit();
        py::gil_scoped_acquire acquire;
        py::list epochs;
        for (const auto& s : stats) {
          py::dict d;
          d["epoch"] = s.epoch;
          d["xe_orig"] = s.xe_orig;
          d["xe_cf"] = s.xe_cf;
          d["cr"] = s.cr;
          d["total"] = s.total;
          d["train_acc"] = s.train_acc;
          epochs.append(d);
        }
        return py::make_tuple(t.params(), epochs);
      },
      py::arg("benchmark"), py::arg("config") = py::dict(),
      "Train on benchmark.train; returns (model, per-epoch stats).");

  m.def(
      "synthesize",
      [](const ModelParams& p, const Sample& s, const VocabSpec& vocab, const py::dict& config, std::uint64_t seed) {
        const RunConfig cfg = make_config(config);
        Rng rng(seed, 202);
        return cf_dict(synthesize(p, s, vocab, cfg.css, rng));
      },
      py::arg("model"), py::arg("sample"), py::arg("vocab"), py::arg("config") = py::dict(), py::arg("seed") = 0,
      "One counterfactual sample as a dict.");

  m.def(
      "evaluate_json",
      [](const ModelParams& p, const Benchmark& b, const py::dict& config) {
        const RunConfig cfg = make_config(config);
        py::gil_scoped_release release;
        return evaluate(p, b.train, b.test, b.vocab, cfg.eval).to_json();
      },
      py::arg("model"), py::arg("benchmark"), py::arg("config") = py::dict());

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int points, double tol) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed, points, tol)) {
          py::dict d;
          d["name"] = r.name;
          d["points"] = r.points;
          d["max_error"] = r.max_error;
          d["passed"] = r.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 7, py::arg("points") = 10, py::arg("tol") = 1e-4);

  m.def("consensus_group_score", &consensus_group_score, py::arg("n"), py::arg("correct"), py::arg("k"));
  m.def("iou", [](std::tuple<double, double, double, double> a, std::tuple<double, double, double, double> b) {
    const auto box = [](auto t) { return BBox{std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)}; };
    return iou(box(a), box(b));
  });
  m.def("config_keys", [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : config_keys()) out.emplace_back(k.name, k.help);
    return out;
  });
}
