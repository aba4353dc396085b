// defa: synthetic data, training, evaluation and debias-weight inspection.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "defa/config.hpp"
#include "defa/data_io.hpp"
#include "defa/evaluation.hpp"
#include "defa/pipeline.hpp"

namespace fs = std::filesystem;
using namespace defa;

namespace {

struct DataFlags {
  std::string dir;
  std::string manifest;
  std::string embeddings;

  void add(CLI::App* app) {
    app->add_option("--data", dir, "Directory holding manifest.tsv and embeddings.bin");
    app->add_option("--manifest", manifest, "Manifest path (overrides --data)");
    app->add_option("--embeddings", embeddings, "Embedding file path (overrides --data)");
  }
  std::string manifest_path() const {
    if (!manifest.empty()) return manifest;
    if (dir.empty()) throw CLI::ValidationError("--data or --manifest is required");
    return (fs::path(dir) / "manifest.tsv").string();
  }
  std::string embeddings_path() const {
    if (!embeddings.empty()) return embeddings;
    if (dir.empty()) throw CLI::ValidationError("--data or --embeddings is required");
    return (fs::path(dir) / "embeddings.bin").string();
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
}

// Shortest form for --help; the stored value keeps full precision.
std::string short_default(const std::string& v) {
  if (v.find_first_of(".e") == std::string::npos) return v;
  std::ostringstream os;
  os << std::stod(v);
  return os.str();
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
  SyntheticSpec spec;
  std::string out;
  bool feasibility = true;
};

void add_synth(CLI::App& root, SynthFlags& f, std::function<void()>& run) {
  auto* app = root.add_subcommand("synth", "Generate a synthetic compositional dataset");
  app->add_option("--out", f.out, "Output directory")->required();
  app->add_option("--na", f.spec.num_attrs, "Number of attributes")->capture_default_str();
  app->add_option("--no", f.spec.num_objs, "Number of objects")->capture_default_str();
  app->add_option("--d-backbone", f.spec.d_backbone, "Feature dimension (even)")
      ->capture_default_str();
  app->add_option("--seen-frac", f.spec.seen_fraction, "Fraction of A x O seen in training")
      ->capture_default_str();
  app->add_option("--per-pair", f.spec.samples_per_pair, "Training samples per seen pair")
      ->capture_default_str();
  app->add_option("--eval-per-pair", f.spec.eval_samples_per_pair,
                  "Validation / test samples per pair")
      ->capture_default_str();
  app->add_option("--tail", f.spec.tail_exponent, "Power-law exponent of pair counts (0: uniform)")
      ->capture_default_str();
  app->add_option("--total", f.spec.total_samples,
                  "Training samples for long-tailed counts (0: per-pair x seen)")
      ->capture_default_str();
  app->add_option("--sigma", f.spec.sigma, "Noise standard deviation")->capture_default_str();
  app->add_option("--gamma", f.spec.gamma, "Interaction strength")->capture_default_str();
  app->add_option("--seed", f.spec.seed, "Random seed")->capture_default_str();
  app->add_flag("--feasibility,!--no-feasibility", f.feasibility,
                "Also write feasibility.tsv")
      ->capture_default_str();
  run = [&f] {
    try {
      f.spec.validate();
    } catch (const ConfigError& e) {
      throw CLI::ValidationError(e.what());
    }
    const SyntheticData data = generate_synthetic(f.spec);
    fs::create_directories(f.out);
    const fs::path dir(f.out);
    write_embeddings((dir / "embeddings.bin").string(), data.embeddings);
    write_manifest((dir / "manifest.tsv").string(), data.manifest);
    std::cout << "wrote " << (dir / "embeddings.bin").string() << "\n";
    std::cout << "wrote " << (dir / "manifest.tsv").string() << "\n";
    const Dataset ds = assemble_dataset(data.manifest, data.embeddings);
    if (f.feasibility) {
      write_text(dir / "feasibility.tsv",
                 format_feasibility(ds.train_space, synthetic_feasibility(data.truth)));
      std::cout << "wrote " << (dir / "feasibility.tsv").string() << "\n";
    }
    const FrequencyTable freq = count_frequencies(ds.train, ds.train_space);
    std::vector<std::int64_t> counts;
    for (const Pair& p : ds.train_space.seen()) {
      counts.push_back(freq.comp_counts[static_cast<std::size_t>(ds.train_space.comp_index(p))]);
    }
    std::sort(counts.begin(), counts.end());
    std::cout << "pairs: seen=" << counts.size()
              << " val_unseen=" << ds.val_space.unseen().size()
              << " test_unseen=" << ds.test_space.unseen().size() << "\n";
    std::cout << "samples: train=" << ds.train.size() << " val=" << ds.val.size()
              << " test=" << ds.test.size() << "\n";
    std::cout << "train pair counts: min=" << counts.front() << " median="
              << counts[counts.size() / 2] << " max=" << counts.back()
              << " max/min=" << static_cast<double>(counts.back()) / counts.front() << "\n";
  };
}

// ---------------------------------------------------------------- train

struct TrainFlags {
  DataFlags data;
  std::string preset = "ut-zappos";
  std::string ablate = "none";
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  RunConfig defaults = defa::preset("ut-zappos");
};

struct Tunable {
  const char* flag;
  const char* key;
  const char* help;
  bool integer = false;
};

constexpr Tunable kTunables[] = {
    {"--lambda1", "lambda1", "Composition vs primitive paths"},
    {"--lambda2", "lambda2", "Disentanglement loss weight"},
    {"--lambda3", "lambda3", "Reconstruction loss weight"},
    {"--lambda4", "lambda4", "Pairwise augmentation weight"},
    {"--lambda5", "lambda5", "Cartesian augmentation weight"},
    {"--alpha", "alpha", "Learned share of the fusion output"},
    {"--beta", "beta", "Classification share of the inference score"},
    {"--rho", "rho", "Frequency suppression exponent"},
    {"--mu", "mu", "Composition vs primitive debias blend"},
    {"--tau", "tau", "Softmax temperature"},
    {"--d", "d", "Shared embedding dimension", true},
    {"--projector-layers", "projector_layers", "Visual projector depth", true},
    {"--fusion-layers", "fusion_layers", "Fusion network depth", true},
    {"--lr", "lr", "Adam learning rate"},
    {"--epochs", "epochs", "Training epochs", true},
    {"--batch", "batch", "Batch size", true},
    {"--seed", "seed", "Random seed", true},
};

std::map<std::string, std::string> g_tunable_values;

RunConfig resolve_config(const TrainFlags& f, const std::string& forced_ablation) {
  RunConfig cfg = defa::preset(f.preset);
  std::map<std::string, std::string> kv;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw CLI::ValidationError("cannot read " + f.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    kv = parse_key_values(ss.str());
  }
  for (const auto& [k, v] : g_tunable_values) kv[k] = v;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value, got " + s);
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (kv.count("preset") && kv["preset"] != f.preset) {
    cfg = defa::preset(kv["preset"]);
  }
  cfg.apply(kv);
  const std::string ab = forced_ablation.empty() ? f.ablate : forced_ablation;
  if (ab != "none") cfg.ablation = parse_ablation(ab);
  cfg.validate();
  return cfg;
}

void add_train(CLI::App& root, const char* name, const char* desc, TrainFlags& f,
               std::function<void()>& run) {
  auto* app = root.add_subcommand(name, desc);
  const bool is_ablate = std::string(name) == "ablate";
  f.data.add(app);
  app->add_option("--out", f.out, "Output directory for model.ckpt, epochs.csv, config.txt")
      ->required();
  app->add_option("--preset", f.preset, "Hyperparameter preset")
      ->check(CLI::IsMember(preset_names()))
      ->capture_default_str();
  auto* ab = app->add_option("--ablate", f.ablate, "Switch off one component")
                 ->check(CLI::IsMember({"none", "baseline", "no-rec", "no-pair", "no-cts",
                                        "no-fusion"}))
                 ->capture_default_str();
  if (is_ablate) ab->required();
  app->add_option("--config", f.config_file, "key = value file applied over the preset");
  app->add_option("--set", f.sets, "Extra key=value override (repeatable)");
  const auto defaults = f.defaults.to_map();
  for (const Tunable& t : kTunables) {
    app->add_option_function<std::string>(
           t.flag, [key = t.key](const std::string& v) { g_tunable_values[key] = v; }, t.help)
        ->default_str(short_default(defaults.at(t.key)))
        ->type_name(t.integer ? "INT" : "FLOAT");
  }
  app->footer("Hyperparameter defaults shown are the ut-zappos preset; --preset replaces them.");
  run = [&f] {
    const RunConfig cfg = resolve_config(f, "");
    const Dataset ds = load_dataset(f.data.manifest_path(), f.data.embeddings_path());
    RunConfig run_cfg = cfg;
    run_cfg.model.d_backbone = ds.dim;
    run_cfg.validate();
    const fs::path dir(f.out);
    fs::create_directories(dir);
    TrainInputs in{&ds.train, &ds.train_space, ds.val.empty() ? nullptr : &ds.val,
                   ds.val.empty() ? nullptr : &ds.val_space};
    const TrainResult res = train(run_cfg, in);
    std::string csv = epoch_log_header() + "\n";
    for (const EpochLog& e : res.log) csv += epoch_log_row(e) + "\n";
    write_text(dir / "epochs.csv", csv);
    write_text(dir / "config.txt", format_key_values(run_cfg.to_map()));
    save_checkpoint((dir / "model.ckpt").string(), res.best, run_cfg);
    std::cout << "trained " << res.log.size() << " epochs, best epoch " << res.best_epoch
              << " (ablation " << to_string(run_cfg.ablation) << ")\n";
    if (!res.log.empty() && res.log.back().loss.total == res.log.back().loss.total) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6g", res.log.back().loss.total);
      std::cout << "final loss " << buf << "\n";
    }
    for (const EpochLog& e : res.log) {
      if (e.epoch == res.best_epoch && e.val) {
        std::cout << "val " << format_summary(*e.val) << "\n";
      }
    }
    std::cout << "wrote " << (dir / "model.ckpt").string() << "\n";
  };
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
  DataFlags data;
  std::string checkpoint;
  std::string split = "test";
  std::string world = "closed";
  bool open_all = false;
  std::string feasibility;
  std::string threshold = "-inf";
  std::string out;
};

void add_eval(CLI::App& root, EvalFlags& f, std::function<void()>& run) {
  auto* app = root.add_subcommand("eval", "Evaluate a checkpoint with the calibration sweep");
  f.data.add(app);
  app->add_option("--checkpoint", f.checkpoint, "Checkpoint written by train")->required();
  app->add_option("--split", f.split, "Split to evaluate")
      ->check(CLI::IsMember({"val", "test"}))
      ->capture_default_str();
  app->add_option("--world", f.world, "Candidate set")
      ->check(CLI::IsMember({"closed", "open", "both"}))
      ->capture_default_str();
  app->add_flag("--open-all", f.open_all, "Open world without feasibility filtering");
  app->add_option("--feasibility", f.feasibility, "attr<TAB>obj<TAB>score file over A x O");
  app->add_option("--threshold", f.threshold,
                  "Feasibility threshold, or 'select' to pick it on the validation split")
      ->capture_default_str();
  app->add_option("--out", f.out, "Directory for closed.csv / open.csv reports");
  run = [&f] {
    const bool want_open = f.world != "closed";
    const bool want_closed = f.world != "open";
    if (want_open && !f.open_all && f.feasibility.empty()) {
      throw CLI::ValidationError("open world needs --feasibility FILE or --open-all");
    }
    Checkpoint ck = load_checkpoint(f.checkpoint);
    const Dataset ds = load_dataset(f.data.manifest_path(), f.data.embeddings_path());
    if (ds.train_space.num_attrs() != ck.model.num_attrs() ||
        ds.train_space.num_objs() != ck.model.num_objs()) {
      throw CLI::ValidationError("checkpoint vocabulary does not match the dataset");
    }
    const auto& samples = f.split == "val" ? ds.val : ds.test;
    const auto& space = f.split == "val" ? ds.val_space : ds.test_space;
    auto emit = [&f](const char* name, const EvalReport& r) {
      std::cout << name << " " << format_summary(r) << "\n";
      if (!f.out.empty()) {
        fs::create_directories(f.out);
        std::ostringstream os;
        write_report_csv(os, r);
        write_text(fs::path(f.out) / (std::string(name) + ".csv"), os.str());
      }
    };
    if (want_closed) emit("closed", closed_world_eval(ck.model, samples, space));
    if (want_open) {
      std::optional<FeasibilityMask> mask;
      if (!f.open_all) {
        double t = -std::numeric_limits<double>::infinity();
        mask = read_feasibility(f.feasibility, ds.train_space, t);
        if (f.threshold == "select") {
          t = select_feasibility_threshold(ck.model, ds.val, ds.train_space.seen(), mask->scores);
          std::cout << "selected threshold " << t << "\n";
        } else {
          try {
            t = std::stod(f.threshold);
          } catch (const std::exception&) {
            throw CLI::ValidationError("bad --threshold " + f.threshold);
          }
        }
        mask->threshold = t;
      }
      emit("open", open_world_eval(ck.model, samples, ds.train_space.seen(),
                                   mask ? &*mask : nullptr));
    }
  };
}

// ---------------------------------------------------------------- inspect-weights

struct InspectFlags {
  DataFlags data;
  std::string preset = "ut-zappos";
  std::optional<double> rho;
  std::optional<double> mu;
};

void add_inspect(CLI::App& root, InspectFlags& f, std::function<void()>& run) {
  auto* app = root.add_subcommand("inspect-weights", "Print frequency-aware debias weights");
  app->add_option("--manifest", f.data.manifest, "Manifest path");
  app->add_option("--data", f.data.dir, "Directory holding manifest.tsv");
  app->add_option("--preset", f.preset, "Preset supplying rho and mu")
      ->check(CLI::IsMember(preset_names()))
      ->capture_default_str();
  app->add_option("--rho", f.rho, "Frequency suppression exponent")->default_str("0.5");
  app->add_option("--mu", f.mu, "Composition vs primitive blend")->default_str("0.8");
  run = [&f] {
    const RunConfig cfg = defa::preset(f.preset);
    DebiasConfig dc{f.rho.value_or(cfg.weights.rho), f.mu.value_or(cfg.weights.mu)};
    dc.validate();
    const Manifest m = read_manifest(f.data.manifest_path());
    const CompositionSpace space = build_space(m, "train");
    FrequencyTable freq;
    freq.attr_counts.assign(static_cast<std::size_t>(space.num_attrs()), 0);
    freq.obj_counts.assign(static_cast<std::size_t>(space.num_objs()), 0);
    freq.comp_counts.assign(static_cast<std::size_t>(space.num_comps()), 0);
    for (const auto& s : m.samples) {
      if (s.split != "train") continue;
      const int a = *space.attr_index(s.attr);
      const int o = *space.obj_index(s.obj);
      freq.attr_counts[static_cast<std::size_t>(a)]++;
      freq.obj_counts[static_cast<std::size_t>(o)]++;
      freq.comp_counts[static_cast<std::size_t>(space.comp_index(a, o))]++;
    }
    const DebiasWeights w = debias_weight_table(freq, dc);

    auto table = [](const char* title, const std::vector<std::string>& names,
                    const std::vector<std::int64_t>& counts, const std::vector<double>& weights,
                    const std::vector<double>* blended) {
      std::vector<std::size_t> order(names.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return counts[a] < counts[b]; });
      std::printf("%s\n", title);
      double sum = 0.0;
      for (std::size_t i : order) {
        if (blended) {
          std::printf("  %-24s %8lld  %.4f  %.4f\n", names[i].c_str(),
                      static_cast<long long>(counts[i]), weights[i], (*blended)[i]);
        } else {
          std::printf("  %-24s %8lld  %.4f\n", names[i].c_str(),
                      static_cast<long long>(counts[i]), weights[i]);
        }
        sum += weights[i];
      }
      std::printf("  mean weight %.4f\n", names.empty() ? 0.0 : sum / names.size());
    };
    std::printf("rho=%g mu=%g\n", dc.rho, dc.mu);
    table("attributes", space.attributes(), freq.attr_counts, w.attr, nullptr);
    table("objects", space.objects(), freq.obj_counts, w.obj, nullptr);
    std::vector<std::string> names;
    for (int c = 0; c < space.num_comps(); ++c) names.push_back(space.comp_name(c));
    table("compositions (count, w_comp, blended)", names, freq.comp_counts, w.comp, &w.blended);
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled feature augmentation for compositional zero-shot learning"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: DEFA_THREADS or all cores)")
      ->capture_default_str();

  SynthFlags synth;
  TrainFlags train_flags;
  TrainFlags ablate_flags;
  EvalFlags eval_flags;
  InspectFlags inspect;
  std::function<void()> run_synth, run_train, run_ablate, run_eval, run_inspect;
  add_synth(app, synth, run_synth);
  add_train(app, "train", "Train a model and write a checkpoint", train_flags, run_train);
  add_train(app, "ablate", "Train with one component switched off", ablate_flags, run_ablate);
  add_eval(app, eval_flags, run_eval);
  add_inspect(app, inspect, run_inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (threads == 0) {
    if (const char* env = std::getenv("DEFA_THREADS")) threads = std::atoi(env);
  }
  set_threads(std::max(threads, 0));

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") run_synth();
    else if (cmd == "train") run_train();
    else if (cmd == "ablate") run_ablate();
    else if (cmd == "eval") run_eval();
    else run_inspect();
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    std::cerr << "error: training diverged in " << e.component() << ": " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
