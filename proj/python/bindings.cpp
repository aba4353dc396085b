// Python bindings: data files, training, evaluation and the sweep.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "defa/config.hpp"
#include "defa/data_io.hpp"
#include "defa/defa.hpp"
#include "defa/evaluation.hpp"
#include "defa/pipeline.hpp"

namespace py = pybind11;
using namespace defa;

namespace {

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["auc"] = r.auc;
  d["hm"] = r.hm_best;
  d["seen"] = r.seen_best;
  d["unseen"] = r.unseen_best;
  py::list curve;
  for (const auto& p : r.curve) curve.append(py::make_tuple(p.bias, p.seen, p.unseen));
  d["curve"] = curve;
  d["num_candidates"] = r.num_candidates;
  d["summary"] = format_summary(r);
  return d;
}

// Candidates are plain columns here: column k is unseen iff unseen[k].
EvalReport sweep(const Matrix& scores, const std::vector<bool>& unseen,
                 const std::vector<int>& labels, const std::vector<bool>& label_unseen) {
  CandidateSet cs;
  for (std::size_t k = 0; k < unseen.size(); ++k) {
    cs.pairs.push_back(Pair{0, static_cast<int>(k)});
    cs.unseen.push_back(unseen[k] ? 1 : 0);
  }
  std::vector<Pair> lp;
  for (int c : labels) lp.push_back(Pair{0, c});
  std::vector<char> lu(label_unseen.begin(), label_unseen.end());
  return calibration_sweep(scores, cs, lp, lu);
}

RunConfig make_config(const std::string& preset_name,
                      const std::map<std::string, std::string>& overrides) {
  RunConfig cfg = preset(preset_name);
  cfg.apply(overrides);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_defa, m) {
  m.doc() = "Decoupled feature augmentation for compositional zero-shot learning";

  auto base = py::register_exception<Error>(m, "DefaError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());

  m.def("preset_names", &preset_names);
  m.def(
      "preset", [](const std::string& name) { return preset(name).to_map(); }, py::arg("name"),
      "Hyperparameters of a preset as a key -> value string map.");

  m.def(
      "synthesize",
      [](const std::string& out_dir, int num_attrs, int num_objs, int d_backbone,
         double seen_fraction, int samples_per_pair, int eval_samples_per_pair,
         double tail_exponent, int total_samples, double sigma, double gamma,
         std::uint64_t seed) {
        SyntheticSpec s;
        s.num_attrs = num_attrs;
        s.num_objs = num_objs;
        s.d_backbone = d_backbone;
        s.seen_fraction = seen_fraction;
        s.samples_per_pair = samples_per_pair;
        s.eval_samples_per_pair = eval_samples_per_pair;
        s.tail_exponent = tail_exponent;
        s.total_samples = total_samples;
        s.sigma = sigma;
        s.gamma = gamma;
        s.seed = seed;
        const SyntheticData data = generate_synthetic(s);
        write_embeddings(out_dir + "/embeddings.bin", data.embeddings);
        write_manifest(out_dir + "/manifest.tsv", data.manifest);
        return data.embeddings.count();
      },
      py::arg("out_dir"), py::arg("num_attrs") = 8, py::arg("num_objs") = 10,
      py::arg("d_backbone") = 32, py::arg("seen_fraction") = 0.6,
      py::arg("samples_per_pair") = 40, py::arg("eval_samples_per_pair") = 10,
      py::arg("tail_exponent") = 0.0, py::arg("total_samples") = 0, py::arg("sigma") = 0.15,
      py::arg("gamma") = 0.3, py::arg("seed") = 0,
      "Writes embeddings.bin and manifest.tsv into out_dir; returns the sample count.");

  m.def(
      "read_embeddings",
      [](const std::string& path) {
        EmbeddingFile f = read_embeddings(path);
        return py::make_tuple(std::move(f.data), f.ids);
      },
      py::arg("path"), "Returns (float64 array [count, dim], ids).");
  m.def(
      "write_embeddings",
      [](const std::string& path, const Matrix& data, const std::vector<std::string>& ids) {
        EmbeddingFile f;
        f.dim = static_cast<int>(data.cols());
        f.data = data;
        f.ids = ids;
        write_embeddings(path, f);
      },
      py::arg("path"), py::arg("data"), py::arg("ids"));

  m.def(
      "factor_weights",
      [](const std::vector<std::int64_t>& counts, double rho) { return factor_weights(counts, rho); },
      py::arg("counts"), py::arg("rho"),
        "Inverse-frequency weights normalised to mean 1.");

  m.def(
      "calibration_sweep",
      [](const Matrix& scores, const std::vector<bool>& unseen, const std::vector<int>& labels,
         const std::vector<bool>& label_unseen) {
        return report_dict(sweep(scores, unseen, labels, label_unseen));
      },
      py::arg("scores"), py::arg("unseen"), py::arg("labels"), py::arg("label_unseen"),
      "Scores are [images, candidates]; labels are candidate columns.");

  m.def(
      "train",
      [](const std::string& manifest, const std::string& embeddings, const std::string& checkpoint,
         const std::string& preset_name, const std::map<std::string, std::string>& overrides) {
        RunConfig cfg = make_config(preset_name, overrides);
        const Dataset ds = load_dataset(manifest, embeddings);
        cfg.model.d_backbone = ds.dim;
        TrainResult res = [&] {
          py::gil_scoped_release release;
          return train(cfg, TrainInputs{&ds.train, &ds.train_space,
                                        ds.val.empty() ? nullptr : &ds.val,
                                        ds.val.empty() ? nullptr : &ds.val_space});
        }();
        save_checkpoint(checkpoint, res.best, cfg);
        py::list log;
        for (const EpochLog& e : res.log) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["loss"] = e.loss.total;
          row["cla"] = e.loss.cla;
          if (e.val) row["val_auc"] = e.val->auc;
          log.append(row);
        }
        return log;
      },
      py::arg("manifest"), py::arg("embeddings"), py::arg("checkpoint"),
      py::arg("preset") = "ut-zappos",
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Trains, writes the best checkpoint and returns the per-epoch log.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const std::string& manifest,
         const std::string& embeddings, const std::string& world, const std::string& split) {
        Checkpoint ck = load_checkpoint(checkpoint);
        const Dataset ds = load_dataset(manifest, embeddings);
        const auto& samples = split == "val" ? ds.val : ds.test;
        if (world == "closed") {
          return report_dict(
              closed_world_eval(ck.model, samples, split == "val" ? ds.val_space : ds.test_space));
        }
        if (world == "open") {
          return report_dict(open_world_eval(ck.model, samples, ds.train_space.seen(), nullptr));
        }
        throw ConfigError("world must be 'closed' or 'open'");
      },
      py::arg("checkpoint"), py::arg("manifest"), py::arg("embeddings"),
      py::arg("world") = "closed", py::arg("split") = "test");
}
