#include "defa/defa.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace defa {

FusionNet::FusionNet(int dim, int layers, double alpha)
    : mlp_(MlpSpec::uniform(2 * dim, dim, layers), "fusion"), alpha_(alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("FusionNet: alpha must lie in [0, 1]");
  }
}

void FusionNet::init(ParamStore& store, Rng& rng) const { mlp_.init(store, rng); }

Var FusionNet::fuse(Graph& g, ParamStore& store, Var va, Var vo) const {
  const Matrix& a = g.value(va);
  const Matrix& o = g.value(vo);
  if (a.cols() != dim() || o.cols() != dim() || a.rows() != o.rows()) {
    throw DimensionError("fuse: inputs must both be [n, " + std::to_string(dim()) + "]");
  }
  Var residual = g.add(va, vo);
  if (alpha_ == 0.0) {
    // Fusion bypass: the MLP output would be multiplied by zero.
    return residual;
  }
  Var learned = mlp_.forward(g, store, g.concat_cols(va, vo));
  if (alpha_ == 1.0) {
    return learned;
  }
  return g.lincomb(learned, alpha_, residual, 1.0 - alpha_);
}

Var cosine_scores(Graph& g, Var features, Var text_rows) {
  return g.matmul_nt(g.normalize_rows(features), g.normalize_rows(text_rows));
}

Var disentangle_loss(Graph& g, Var va, Var vo, Var ta_gt, Var to_gt) {
  Var ca = g.row_dot(g.normalize_rows(va), g.normalize_rows(to_gt));
  Var co = g.row_dot(g.normalize_rows(vo), g.normalize_rows(ta_gt));
  return g.mean(g.add(ca, co));
}

Var reconstruction_loss(Graph& g, Var pseudo, Var vc) {
  Var c = g.row_dot(g.normalize_rows(pseudo), g.normalize_rows(vc));
  return g.scale(g.mean(c), -1.0);
}

CartesianBatch cartesian_batch(std::span<const Pair> batch_labels) {
  CartesianBatch cb;
  const int n = static_cast<int>(batch_labels.size());
  cb.attr_rows.reserve(static_cast<std::size_t>(n * n));
  cb.obj_rows.reserve(static_cast<std::size_t>(n * n));
  cb.labels.reserve(static_cast<std::size_t>(n * n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      cb.attr_rows.push_back(i);
      cb.obj_rows.push_back(j);
      cb.labels.push_back(Pair{batch_labels[i].attr, batch_labels[j].obj});
    }
  }
  cb.candidates = cb.labels;
  std::sort(cb.candidates.begin(), cb.candidates.end());
  cb.candidates.erase(std::unique(cb.candidates.begin(), cb.candidates.end()),
                      cb.candidates.end());
  cb.targets.reserve(cb.labels.size());
  for (const Pair& p : cb.labels) {
    auto it = std::lower_bound(cb.candidates.begin(), cb.candidates.end(), p);
    cb.targets.push_back(static_cast<int>(it - cb.candidates.begin()));
  }
  return cb;
}

Var cartesian_pseudo(Graph& g, ParamStore& store, const FusionNet& net, Var va, Var vo,
                     const CartesianBatch& batch) {
  Var a = g.gather_rows(va, batch.attr_rows);
  Var o = g.gather_rows(vo, batch.obj_rows);
  return net.fuse(g, store, a, o);
}

Var pairwise_aug_loss(Graph& g, Var pseudo, Var text_rows, std::vector<int> targets,
                      double tau) {
  return g.softmax_ce(cosine_scores(g, pseudo, text_rows), std::move(targets), tau);
}

Var cartesian_aug_loss(Graph& g, Var pseudo, Var text_rows, std::vector<int> targets,
                       std::vector<double> weights, double tau) {
  return g.softmax_ce(cosine_scores(g, pseudo, text_rows), std::move(targets), tau,
                      std::move(weights));
}

void DebiasConfig::validate() const {
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw ConfigError("rho must lie in [0, 1]");
  }
  if (!(mu >= 0.0 && mu <= 1.0)) {
    throw ConfigError("mu must lie in [0, 1]");
  }
}

std::vector<double> factor_weights(std::span<const std::int64_t> counts, double rho) {
  std::vector<double> raw(counts.size());
  double total = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < 0) {
      throw Error("factor_weights: negative count");
    }
    raw[k] = 1.0 / std::pow(static_cast<double>(counts[k]) + 1.0, rho);
    total += raw[k];
  }
  const double size = static_cast<double>(counts.size());
  for (double& w : raw) {
    w = w / total * size;
  }
  return raw;
}

DebiasWeights debias_weight_table(const FrequencyTable& freq, const DebiasConfig& cfg) {
  cfg.validate();
  DebiasWeights w;
  w.attr = factor_weights(freq.attr_counts, cfg.rho);
  w.obj = factor_weights(freq.obj_counts, cfg.rho);
  w.comp = factor_weights(freq.comp_counts, cfg.rho);
  w.num_objs = static_cast<int>(freq.obj_counts.size());
  if (w.comp.size() != w.attr.size() * w.obj.size()) {
    throw DimensionError("debias_weight_table: composition table is not N_a x N_o");
  }
  w.blended.resize(w.comp.size());
  for (std::size_t a = 0; a < w.attr.size(); ++a) {
    for (std::size_t o = 0; o < w.obj.size(); ++o) {
      const std::size_t c = a * w.obj.size() + o;
      w.blended[c] = cfg.mu * w.comp[c] + (1.0 - cfg.mu) * (w.attr[a] + w.obj[o]);
    }
  }
  return w;
}

namespace {

Matrix as_row(const Vector& v) { return Matrix(v.transpose()); }

}  // namespace

Vector fuse(const FusionNet& net, ParamStore& store, const Vector& va, const Vector& vo) {
  Graph g;
  Var out = net.fuse(g, store, g.constant(as_row(va)), g.constant(as_row(vo)));
  return g.value(out).row(0).transpose();
}

double disentangle_loss(const Vector& va, const Vector& vo, const Vector& ta_gt,
                        const Vector& to_gt) {
  return cosine(va, to_gt) + cosine(vo, ta_gt);
}

double reconstruction_loss(const Vector& pseudo, const Vector& vc) { return -cosine(pseudo, vc); }

}  // namespace defa
