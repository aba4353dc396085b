#include "defa/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "defa/error.hpp"

namespace defa {

namespace {

void require_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0, 1]");
  }
}

void require_nonneg(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(name) + " must be a finite non-negative number");
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for '" + key + "': '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("bad integer value for '" + key + "': '" + v + "'");
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void LossWeights::validate() const {
  require_unit(lambda1, "lambda1");
  require_nonneg(lambda2, "lambda2");
  require_nonneg(lambda3, "lambda3");
  require_nonneg(lambda4, "lambda4");
  require_nonneg(lambda5, "lambda5");
  require_unit(alpha, "alpha");
  require_unit(beta, "beta");
  require_unit(rho, "rho");
  require_unit(mu, "mu");
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("tau must be positive");
  }
}

void ModelConfig::validate() const {
  if (d_backbone < 0 || d <= 0) {
    throw ConfigError("feature dimensions must be positive");
  }
  if (projector_layers < 1 || fusion_layers < 1) {
    throw ConfigError("MLPs need at least one layer");
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
  require_unit(adam_beta1, "adam_beta1");
  require_unit(adam_beta2, "adam_beta2");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

Ablation parse_ablation(const std::string& name) {
  if (name == "none" || name.empty()) return Ablation::kNone;
  if (name == "baseline") return Ablation::kBaseline;
  if (name == "no-rec") return Ablation::kNoRec;
  if (name == "no-pair") return Ablation::kNoPair;
  if (name == "no-cts") return Ablation::kNoCts;
  if (name == "no-fusion") return Ablation::kNoFusion;
  throw ConfigError("unknown ablation '" + name +
                    "' (expected baseline, no-rec, no-pair, no-cts, no-fusion)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kBaseline: return "baseline";
    case Ablation::kNoRec: return "no-rec";
    case Ablation::kNoPair: return "no-pair";
    case Ablation::kNoCts: return "no-cts";
    case Ablation::kNoFusion: return "no-fusion";
  }
  return "none";
}

void apply_ablation(Ablation a, LossWeights& w) {
  switch (a) {
    case Ablation::kNone: break;
    case Ablation::kBaseline:
      w.lambda2 = w.lambda3 = w.lambda4 = w.lambda5 = 0.0;
      w.beta = 1.0;
      break;
    case Ablation::kNoRec: w.lambda3 = 0.0; break;
    case Ablation::kNoPair: w.lambda4 = 0.0; break;
    case Ablation::kNoCts: w.lambda5 = 0.0; break;
    case Ablation::kNoFusion: w.alpha = 0.0; break;
  }
}

std::string to_string(ClsCandidates c) { return c == ClsCandidates::kFull ? "full" : "seen"; }
std::string to_string(PairCandidates c) { return c == PairCandidates::kSeen ? "seen" : "batch"; }
std::string to_string(CartesianCandidates c) {
  return c == CartesianCandidates::kBatch ? "batch" : "full";
}

void RunConfig::validate() const {
  model.validate();
  weights.validate();
  train.validate();
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  m["preset"] = preset;
  m["ablation"] = to_string(ablation);
  m["lambda1"] = fmt(weights.lambda1);
  m["lambda2"] = fmt(weights.lambda2);
  m["lambda3"] = fmt(weights.lambda3);
  m["lambda4"] = fmt(weights.lambda4);
  m["lambda5"] = fmt(weights.lambda5);
  m["alpha"] = fmt(weights.alpha);
  m["beta"] = fmt(weights.beta);
  m["rho"] = fmt(weights.rho);
  m["mu"] = fmt(weights.mu);
  m["tau"] = fmt(weights.tau);
  m["d_backbone"] = std::to_string(model.d_backbone);
  m["d"] = std::to_string(model.d);
  m["projector_layers"] = std::to_string(model.projector_layers);
  m["fusion_layers"] = std::to_string(model.fusion_layers);
  m["seed"] = std::to_string(train.seed);
  m["epochs"] = std::to_string(train.epochs);
  m["batch"] = std::to_string(train.batch_size);
  m["lr"] = fmt(train.lr);
  m["adam_beta1"] = fmt(train.adam_beta1);
  m["adam_beta2"] = fmt(train.adam_beta2);
  m["adam_eps"] = fmt(train.adam_eps);
  m["cls_candidates"] = to_string(train.cls_candidates);
  m["pair_candidates"] = to_string(train.pair_candidates);
  m["cartesian_candidates"] = to_string(train.cartesian_candidates);
  return m;
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto dbl = [](double& target) -> Setter {
    return [&target](const std::string& k, const std::string& v) { target = parse_double(k, v); };
  };
  auto integer = [](int& target) -> Setter {
    return [&target](const std::string& k, const std::string& v) {
      target = static_cast<int>(parse_int(k, v));
    };
  };
  const std::map<std::string, Setter> setters = {
      {"preset", [this](const std::string&, const std::string& v) { preset = v; }},
      {"ablation", [this](const std::string&, const std::string& v) { ablation = parse_ablation(v); }},
      {"lambda1", dbl(weights.lambda1)},
      {"lambda2", dbl(weights.lambda2)},
      {"lambda3", dbl(weights.lambda3)},
      {"lambda4", dbl(weights.lambda4)},
      {"lambda5", dbl(weights.lambda5)},
      {"alpha", dbl(weights.alpha)},
      {"beta", dbl(weights.beta)},
      {"rho", dbl(weights.rho)},
      {"mu", dbl(weights.mu)},
      {"tau", dbl(weights.tau)},
      {"d_backbone", integer(model.d_backbone)},
      {"d", integer(model.d)},
      {"projector_layers", integer(model.projector_layers)},
      {"fusion_layers", integer(model.fusion_layers)},
      {"seed",
       [this](const std::string& k, const std::string& v) {
         const long long s = parse_int(k, v);
         if (s < 0) throw ConfigError("seed must be non-negative");
         train.seed = static_cast<std::uint64_t>(s);
       }},
      {"epochs", integer(train.epochs)},
      {"batch", integer(train.batch_size)},
      {"lr", dbl(train.lr)},
      {"adam_beta1", dbl(train.adam_beta1)},
      {"adam_beta2", dbl(train.adam_beta2)},
      {"adam_eps", dbl(train.adam_eps)},
      {"cls_candidates",
       [this](const std::string& k, const std::string& v) {
         if (v == "full") train.cls_candidates = ClsCandidates::kFull;
         else if (v == "seen") train.cls_candidates = ClsCandidates::kSeen;
         else throw ConfigError("bad value for '" + k + "': " + v);
       }},
      {"pair_candidates",
       [this](const std::string& k, const std::string& v) {
         if (v == "seen") train.pair_candidates = PairCandidates::kSeen;
         else if (v == "batch") train.pair_candidates = PairCandidates::kBatch;
         else throw ConfigError("bad value for '" + k + "': " + v);
       }},
      {"cartesian_candidates",
       [this](const std::string& k, const std::string& v) {
         if (v == "batch") train.cartesian_candidates = CartesianCandidates::kBatch;
         else if (v == "full") train.cartesian_candidates = CartesianCandidates::kFull;
         else throw ConfigError("bad value for '" + k + "': " + v);
       }},
  };
  for (const auto& [key, value] : values) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
    it->second(key, value);
  }
}

std::vector<std::string> preset_names() { return {"ut-zappos", "mit-states", "c-gqa"}; }

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  LossWeights& w = c.weights;
  w.beta = 0.5;
  w.rho = 0.5;
  if (name == "ut-zappos") {
    w.lambda1 = 0.9; w.lambda2 = 10.0; w.lambda3 = 10.0; w.lambda4 = 0.9; w.lambda5 = 0.1;
    w.alpha = 0.8;
    w.mu = 0.8;
    c.train.epochs = 20;
    c.train.batch_size = 128;
    c.model.fusion_layers = 1;
  } else if (name == "mit-states") {
    w.lambda1 = 0.3; w.lambda2 = 10.0; w.lambda3 = 100.0; w.lambda4 = 0.7; w.lambda5 = 0.1;
    w.alpha = 0.8;
    w.mu = 0.9;
    c.train.epochs = 50;
    c.train.batch_size = 128;
    c.model.fusion_layers = 3;
  } else if (name == "c-gqa") {
    w.lambda1 = 0.2; w.lambda2 = 3.0; w.lambda3 = 1.0; w.lambda4 = 0.1; w.lambda5 = 0.1;
    w.alpha = 0.9;
    w.mu = 0.9;
    c.train.epochs = 20;
    c.train.batch_size = 32;
    c.model.fusion_layers = 3;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected ut-zappos, mit-states, c-gqa)");
  }
  return c;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    }
    if (!out.emplace(key, trim(t.substr(eq + 1))).second) {
      throw ConfigError("duplicate key '" + key + "'");
    }
  }
  return out;
}

std::string format_key_values(const std::map<std::string, std::string>& values) {
  std::string out;
  for (const auto& [k, v] : values) {
    out += k + " = " + v + "\n";
  }
  return out;
}

}  // namespace defa
