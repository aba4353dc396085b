#include "defa/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace defa {

namespace {

std::vector<Pair> full_grid(int num_attrs, int num_objs) {
  std::vector<Pair> all;
  all.reserve(static_cast<std::size_t>(num_attrs * num_objs));
  for (int a = 0; a < num_attrs; ++a) {
    for (int o = 0; o < num_objs; ++o) all.push_back(Pair{a, o});
  }
  return all;
}

// Index of each label in a sorted candidate list.
std::vector<int> targets_in(std::span<const Pair> sorted, std::span<const Pair> labels,
                            const char* what) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (const Pair& p : labels) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), p);
    if (it == sorted.end() || *it != p) {
      throw SpaceError(std::string(what) + ": label (" + std::to_string(p.attr) + ", " +
                       std::to_string(p.obj) + ") is not a candidate");
    }
    out.push_back(static_cast<int>(it - sorted.begin()));
  }
  return out;
}

}  // namespace

Model::Model(const ModelConfig& model, const LossWeights& weights, int num_attrs, int num_objs,
             std::uint64_t seed)
    : config_(model),
      weights_(weights),
      projectors_(MlpSpec::uniform(model.d_backbone, model.d, model.projector_layers)),
      tokens_(num_attrs, num_objs, model.d),
      fusion_(model.d, model.fusion_layers, weights.alpha) {
  config_.validate();
  weights_.validate();
  Rng rng(seed);
  projectors_.init(params_, rng);
  tokens_.init(params_, rng);
  fusion_.init(params_, rng);
}

Model::Model(const ModelConfig& model, const LossWeights& weights, int num_attrs, int num_objs,
             ParamStore params)
    : config_(model),
      weights_(weights),
      projectors_(MlpSpec::uniform(model.d_backbone, model.d, model.projector_layers)),
      tokens_(num_attrs, num_objs, model.d),
      fusion_(model.d, model.fusion_layers, weights.alpha),
      params_(std::move(params)) {
  config_.validate();
  weights_.validate();
  check_params();
}

void Model::check_params() const {
  ParamStore reference;
  Rng rng(0);
  projectors_.init(reference, rng);
  tokens_.init(reference, rng);
  fusion_.init(reference, rng);
  if (reference.size() != params_.size()) {
    throw DimensionError("model expects " + std::to_string(reference.size()) +
                         " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (const auto& e : reference.entries()) {
    if (!params_.contains(e.name)) {
      throw DimensionError("missing parameter '" + e.name + "'");
    }
    const auto& got = params_.entry(e.name);
    if (got.value.rows() != e.value.rows() || got.value.cols() != e.value.cols()) {
      throw DimensionError("parameter '" + e.name + "' has the wrong shape");
    }
    if (got.trainable != e.trainable) {
      throw DimensionError("parameter '" + e.name + "' has the wrong trainable flag");
    }
  }
}

ScoreBundle Model::score(const Matrix& features, std::span<const Pair> candidates) {
  if (features.cols() != config_.d_backbone) {
    throw DimensionError("score: features have " + std::to_string(features.cols()) +
                         " columns, model expects " + std::to_string(config_.d_backbone));
  }
  Graph g;
  const auto v = projectors_.forward(g, params_, g.constant(features));
  const Var ta = tokens_.text_features(g, params_, PromptKind::kAttribute);
  const Var to = tokens_.text_features(g, params_, PromptKind::kObject);
  const Var tc = tokens_.prompt_features_for(g, params_, candidates, PromptKind::kComposition);

  ScoreBundle b;
  b.candidates.assign(candidates.begin(), candidates.end());
  b.attr = g.value(cosine_scores(g, v.attr, ta));
  b.obj = g.value(cosine_scores(g, v.obj, to));
  b.comp = g.value(cosine_scores(g, v.comp, tc));
  b.cla = classification_scores(b.attr, b.obj, b.comp, candidates, weights_.lambda1);
  if (weights_.beta < 1.0) {
    const Var pseudo = fusion_.fuse(g, params_, v.attr, v.obj);
    const Var tp = tokens_.prompt_features_for(g, params_, candidates, PromptKind::kPseudo);
    b.pair = g.value(cosine_scores(g, pseudo, tp));
  }
  b.combined = inference_score(b.cla, b.pair, weights_.beta);
  return b;
}

Matrix Model::inference_scores(const Matrix& features, std::span<const Pair> candidates) {
  return score(features, candidates).combined;
}

Matrix classification_scores(const Matrix& attr, const Matrix& obj, const Matrix& comp,
                             std::span<const Pair> candidates, double lambda1) {
  const Eigen::Index n = comp.rows();
  if (attr.rows() != n || obj.rows() != n ||
      comp.cols() != static_cast<Eigen::Index>(candidates.size())) {
    throw DimensionError("classification_scores: inconsistent score shapes");
  }
  Matrix out(n, comp.cols());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const Pair p = candidates[k];
    if (p.attr < 0 || p.attr >= attr.cols() || p.obj < 0 || p.obj >= obj.cols()) {
      throw SpaceError("classification_scores: candidate outside vocabulary");
    }
    const auto c = static_cast<Eigen::Index>(k);
    out.col(c) = lambda1 * comp.col(c) + (1.0 - lambda1) * (attr.col(p.attr) + obj.col(p.obj));
  }
  return out;
}

double classification_loss(const Matrix& attr, const Matrix& obj, const Matrix& comp,
                           std::span<const int> attr_targets, std::span<const int> obj_targets,
                           std::span<const int> comp_targets, double tau, double lambda1) {
  const auto n = static_cast<std::size_t>(comp.rows());
  if (attr_targets.size() != n || obj_targets.size() != n || comp_targets.size() != n ||
      static_cast<std::size_t>(attr.rows()) != n || static_cast<std::size_t>(obj.rows()) != n) {
    throw DimensionError("classification_loss: target count mismatch");
  }
  if (n == 0) throw DimensionError("classification_loss: empty batch");
  auto mean_ce = [tau, n](const Matrix& s, std::span<const int> t) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = s.row(static_cast<Eigen::Index>(i));
      sum += softmax_ce(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                        t[i], tau);
    }
    return sum / static_cast<double>(n);
  };
  const double lc = mean_ce(comp, comp_targets);
  const double la = mean_ce(attr, attr_targets);
  const double lo = mean_ce(obj, obj_targets);
  return lambda1 * lc + (1.0 - lambda1) * (la + lo);
}

Matrix inference_score(const Matrix& cla, const Matrix& pair, double beta) {
  if (beta == 1.0) return cla;
  if (pair.rows() != cla.rows() || pair.cols() != cla.cols()) {
    throw DimensionError("inference_score: S_cla and S_pair cover different candidate sets");
  }
  return beta * cla + (1.0 - beta) * pair;
}

std::vector<int> predict(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()), -1);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int best = -1;
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
      if (best < 0 || scores(i, k) > scores(i, best)) best = static_cast<int>(k);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double total_loss(const LossValues& parts, const LossWeights& w) {
  double total = parts.cla;
  if (parts.dis) total += w.lambda2 * *parts.dis;
  if (parts.rec) total += w.lambda3 * *parts.rec;
  if (parts.pair) total += w.lambda4 * *parts.pair;
  if (parts.cts) total += w.lambda5 * *parts.cts;
  return total;
}

LossContext LossContext::make(const CompositionSpace& train_space,
                              const std::vector<Sample>& train_samples, const TrainConfig& train,
                              const LossWeights& weights) {
  LossContext ctx;
  ctx.cls_candidates = train.cls_candidates == ClsCandidates::kFull
                           ? full_grid(train_space.num_attrs(), train_space.num_objs())
                           : train_space.seen();
  ctx.pair_candidates = train_space.seen();
  ctx.pair_mode = train.pair_candidates;
  ctx.cartesian_mode = train.cartesian_candidates;
  ctx.debias = debias_weight_table(count_frequencies(train_samples, train_space),
                                   DebiasConfig{weights.rho, weights.mu});
  return ctx;
}

LossVars build_loss(Graph& g, Model& model, const Matrix& features, std::span<const Pair> labels,
                    const LossContext& ctx) {
  if (labels.empty() || static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DimensionError("build_loss: need one label per feature row");
  }
  const LossWeights& w = model.weights();
  ParamStore& store = model.params();
  const TokenTable& tokens = model.tokens();

  std::vector<int> attr_t, obj_t;
  attr_t.reserve(labels.size());
  obj_t.reserve(labels.size());
  for (const Pair& p : labels) {
    attr_t.push_back(p.attr);
    obj_t.push_back(p.obj);
  }

  LossVars out;
  const auto v = model.projectors().forward(g, store, g.constant(features));
  const Var ta = tokens.text_features(g, store, PromptKind::kAttribute);
  const Var to = tokens.text_features(g, store, PromptKind::kObject);
  const Var tc = tokens.prompt_features_for(g, store, ctx.cls_candidates, PromptKind::kComposition);
  out.attr = g.softmax_ce(cosine_scores(g, v.attr, ta), attr_t, w.tau);
  out.obj = g.softmax_ce(cosine_scores(g, v.obj, to), obj_t, w.tau);
  out.comp = g.softmax_ce(cosine_scores(g, v.comp, tc),
                          targets_in(ctx.cls_candidates, labels, "L^c"), w.tau);
  out.cla = g.lincomb(out.comp, w.lambda1, g.add(out.attr, out.obj), 1.0 - w.lambda1);

  std::vector<Var> terms{out.cla};
  std::vector<double> coeffs{1.0};

  if (w.lambda2 != 0.0) {
    out.dis = disentangle_loss(g, v.attr, v.obj, g.gather_rows(ta, attr_t),
                               g.gather_rows(to, obj_t));
    terms.push_back(out.dis);
    coeffs.push_back(w.lambda2);
  }

  if (w.lambda3 != 0.0 || w.lambda4 != 0.0) {
    const Var pseudo = model.fusion().fuse(g, store, v.attr, v.obj);
    if (w.lambda3 != 0.0) {
      out.rec = reconstruction_loss(g, pseudo, v.comp);
      terms.push_back(out.rec);
      coeffs.push_back(w.lambda3);
    }
    if (w.lambda4 != 0.0) {
      std::vector<Pair> cands;
      if (ctx.pair_mode == PairCandidates::kSeen) {
        cands = ctx.pair_candidates;
      } else {
        cands.assign(labels.begin(), labels.end());
        std::sort(cands.begin(), cands.end());
        cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
      }
      const Var tp = tokens.prompt_features_for(g, store, cands, PromptKind::kPseudo);
      out.pair = pairwise_aug_loss(g, pseudo, tp, targets_in(cands, labels, "L_pair"), w.tau);
      terms.push_back(out.pair);
      coeffs.push_back(w.lambda4);
    }
  }

  if (w.lambda5 != 0.0) {
    const CartesianBatch cb = cartesian_batch(labels);
    const Var pseudo = cartesian_pseudo(g, store, model.fusion(), v.attr, v.obj, cb);
    std::vector<double> weights;
    weights.reserve(cb.labels.size());
    for (const Pair& p : cb.labels) weights.push_back(ctx.debias.at(p));
    Var tp;
    std::vector<int> targets;
    if (ctx.cartesian_mode == CartesianCandidates::kBatch) {
      tp = tokens.prompt_features_for(g, store, cb.candidates, PromptKind::kPseudo);
      targets = cb.targets;
    } else {
      tp = tokens.text_features(g, store, PromptKind::kPseudo);
      for (const Pair& p : cb.labels) targets.push_back(p.attr * tokens.num_objs() + p.obj);
    }
    out.cts = cartesian_aug_loss(g, pseudo, tp, std::move(targets), std::move(weights), w.tau);
    terms.push_back(out.cts);
    coeffs.push_back(w.lambda5);
  }

  out.total = g.weighted_sum(terms, coeffs);
  return out;
}

LossValues loss_values(const Graph& g, const LossVars& vars) {
  LossValues v;
  v.attr = g.scalar(vars.attr);
  v.obj = g.scalar(vars.obj);
  v.comp = g.scalar(vars.comp);
  v.cla = g.scalar(vars.cla);
  if (vars.dis.valid()) v.dis = g.scalar(vars.dis);
  if (vars.rec.valid()) v.rec = g.scalar(vars.rec);
  if (vars.pair.valid()) v.pair = g.scalar(vars.pair);
  if (vars.cts.valid()) v.cts = g.scalar(vars.cts);
  v.total = g.scalar(vars.total);
  return v;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
      v_.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    }
  }
  if (m_.size() != entries.size()) {
    throw Error("Adam: parameter set changed between steps");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.trainable) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * e.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * e.grad.cwiseProduct(e.grad);
    e.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

namespace {

void check_finite(const LossValues& v) {
  auto bad = [](double x) { return !std::isfinite(x); };
  const std::pair<const char*, std::optional<double>> parts[] = {
      {"L^a", v.attr}, {"L^o", v.obj},   {"L^c", v.comp},     {"L_dis", v.dis},
      {"L_rec", v.rec}, {"L_pair", v.pair}, {"L_cts", v.cts}, {"L", v.total}};
  for (const auto& [name, value] : parts) {
    if (value && bad(*value)) {
      throw TrainingError(name, std::string("non-finite loss component ") + name);
    }
  }
}

void accumulate(LossValues& sum, const LossValues& batch, double weight) {
  auto add_opt = [weight](std::optional<double>& s, const std::optional<double>& b) {
    if (b) s = s.value_or(0.0) + weight * *b;
  };
  sum.attr += weight * batch.attr;
  sum.obj += weight * batch.obj;
  sum.comp += weight * batch.comp;
  sum.cla += weight * batch.cla;
  add_opt(sum.dis, batch.dis);
  add_opt(sum.rec, batch.rec);
  add_opt(sum.pair, batch.pair);
  add_opt(sum.cts, batch.cts);
  sum.total += weight * batch.total;
}

void divide(LossValues& v, double n) {
  v.attr /= n;
  v.obj /= n;
  v.comp /= n;
  v.cla /= n;
  for (auto* o : {&v.dis, &v.rec, &v.pair, &v.cts}) {
    if (*o) **o /= n;
  }
  v.total /= n;
}

}  // namespace

TrainResult train(const RunConfig& config, const TrainInputs& inputs) {
  if (!inputs.train || !inputs.train_space) {
    throw ConfigError("train: training samples and space are required");
  }
  const std::vector<Sample>& samples = *inputs.train;
  if (samples.empty()) {
    throw TrainingError("dataset", "train: empty training set");
  }
  RunConfig cfg = config;
  apply_ablation(cfg.ablation, cfg.weights);
  if (cfg.model.d_backbone == 0) {
    cfg.model.d_backbone = static_cast<int>(samples.front().feature.size());
  }
  cfg.validate();

  const CompositionSpace& space = *inputs.train_space;
  const std::size_t n = samples.size();
  Matrix x_all(static_cast<Eigen::Index>(n), cfg.model.d_backbone);
  std::vector<Pair> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].feature.size() != cfg.model.d_backbone) {
      throw DimensionError("train: sample '" + samples[i].image_id + "' has the wrong dimension");
    }
    x_all.row(static_cast<Eigen::Index>(i)) = samples[i].feature.transpose();
    labels[i] = samples[i].pair();
  }

  Model model(cfg.model, cfg.weights, space.num_attrs(), space.num_objs(), cfg.train.seed);
  const LossContext ctx = LossContext::make(space, samples, cfg.train, cfg.weights);
  Adam opt(cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps);
  Rng batch_rng(cfg.train.seed ^ 0x9E3779B97F4A7C15ULL);
  const bool has_val = inputs.val && inputs.val_space && !inputs.val->empty();

  TrainResult result{model, model, 0, {}};
  double best_auc = -1.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(cfg.train.batch_size);

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    batch_rng.shuffle(order);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const auto rows = static_cast<Eigen::Index>(end - start);
      Matrix xb(rows, x_all.cols());
      std::vector<Pair> lb(end - start);
      for (std::size_t r = start; r < end; ++r) {
        xb.row(static_cast<Eigen::Index>(r - start)) =
            x_all.row(static_cast<Eigen::Index>(order[r]));
        lb[r - start] = labels[order[r]];
      }
      Graph g;
      const LossVars vars = build_loss(g, model, xb, lb, ctx);
      const LossValues values = loss_values(g, vars);
      check_finite(values);
      model.params().zero_grads();
      g.backward(vars.total);
      opt.step(model.params());
      accumulate(log.loss, values, static_cast<double>(rows));
      ++log.steps;
    }
    divide(log.loss, static_cast<double>(n));
    if (has_val) {
      log.val = closed_world_eval(model, *inputs.val, *inputs.val_space);
      if (log.val->auc > best_auc) {
        best_auc = log.val->auc;
        result.best = model;
        result.best_epoch = epoch;
      }
    }
    result.log.push_back(std::move(log));
  }
  if (!has_val) {
    result.best = model;
    result.best_epoch = cfg.train.epochs;
  }
  result.last = std::move(model);
  return result;
}

std::string epoch_log_header() {
  return "epoch,steps,loss,l_cla,l_attr,l_obj,l_comp,l_dis,l_rec,l_pair,l_cts,"
         "val_auc,val_hm,val_seen,val_unseen";
}

std::string epoch_log_row(const EpochLog& log) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  auto opt = [&num](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::string row = std::to_string(log.epoch) + "," + std::to_string(log.steps) + "," +
                    num(log.loss.total) + "," + num(log.loss.cla) + "," + num(log.loss.attr) +
                    "," + num(log.loss.obj) + "," + num(log.loss.comp) + "," +
                    opt(log.loss.dis) + "," + opt(log.loss.rec) + "," + opt(log.loss.pair) +
                    "," + opt(log.loss.cts);
  if (log.val) {
    row += "," + num(log.val->auc) + "," + num(log.val->hm_best) + "," +
           num(log.val->seen_best) + "," + num(log.val->unseen_best);
  } else {
    row += ",,,,";
  }
  return row;
}

}  // namespace defa
