#pragma once

// Fusion network, disentanglement / reconstruction losses, pairwise and
// Cartesian feature augmentation, and frequency-aware debiasing weights.

#include <span>
#include <vector>

#include "defa/numerics.hpp"
#include "defa/space.hpp"

namespace defa {

/// v_pseudo = alpha * F(concat(v_a, v_o)) + (1 - alpha) * (v_a + v_o),
/// where F is an MLP 2d -> d.
class FusionNet {
 public:
  FusionNet(int dim, int layers, double alpha);

  void init(ParamStore& store, Rng& rng) const;
  Var fuse(Graph& g, ParamStore& store, Var va, Var vo) const;

  int dim() const { return mlp_.spec().out(); }
  double alpha() const { return alpha_; }
  const Mlp& mlp() const { return mlp_; }

 private:
  Mlp mlp_;
  double alpha_;
};

/// Mean over rows of cos(v_a, T^o_gt) + cos(v_o, T^a_gt).
Var disentangle_loss(Graph& g, Var va, Var vo, Var ta_gt, Var to_gt);

/// Mean over rows of -cos(v_pseudo, v_c).
Var reconstruction_loss(Graph& g, Var pseudo, Var vc);

/// Cosine score matrix [rows(features), rows(text)].
Var cosine_scores(Graph& g, Var features, Var text_rows);

/// Cartesian expansion of one batch: row k = i * B + j pairs attribute
/// features of sample i with object features of sample j.
struct CartesianBatch {
  std::vector<int> attr_rows;     // i for each pseudo feature
  std::vector<int> obj_rows;      // j for each pseudo feature
  std::vector<Pair> labels;       // (a_i, o_j)
  std::vector<Pair> candidates;   // deduplicated labels, sorted
  std::vector<int> targets;       // index of labels[k] in candidates
};

CartesianBatch cartesian_batch(std::span<const Pair> batch_labels);

/// |B|^2 pseudo features fuse(v_a[i], v_o[j]) in i-major order.
Var cartesian_pseudo(Graph& g, ParamStore& store, const FusionNet& net, Var va, Var vo,
                     const CartesianBatch& batch);

/// Mean of CE(cos(pseudo_i, text_rows) / tau, target_i); text rows are the
/// candidate compositions.
Var pairwise_aug_loss(Graph& g, Var pseudo, Var text_rows, std::vector<int> targets,
                      double tau);

/// Mean of w_i * CE(cos(pseudo_i, text_rows) / tau, target_i).
Var cartesian_aug_loss(Graph& g, Var pseudo, Var text_rows, std::vector<int> targets,
                       std::vector<double> weights, double tau);

struct DebiasConfig {
  double rho = 0.5;
  double mu = 0.8;
  void validate() const;
};

/// w(k) = (1 / (count_k + 1)^rho) / sum_i (1 / (count_i + 1)^rho) * |X|.
std::vector<double> factor_weights(std::span<const std::int64_t> counts, double rho);

struct DebiasWeights {
  std::vector<double> attr;
  std::vector<double> obj;
  /// Composition-level weights over the full A x O grid.
  std::vector<double> comp;
  /// mu * w_c + (1 - mu) * (w_a + w_o), indexed by composition.
  std::vector<double> blended;
  int num_objs = 0;

  double at(Pair p) const {
    return blended[static_cast<std::size_t>(p.attr * num_objs + p.obj)];
  }
};

DebiasWeights debias_weight_table(const FrequencyTable& freq, const DebiasConfig& cfg);

// Single-vector conveniences.
Vector fuse(const FusionNet& net, ParamStore& store, const Vector& va, const Vector& vo);
double disentangle_loss(const Vector& va, const Vector& vo, const Vector& ta_gt,
                        const Vector& to_gt);
double reconstruction_loss(const Vector& pseudo, const Vector& vc);

}  // namespace defa
