#pragma once

// Model assembly: the three-path classifier, the DeFA augmentation terms, the
// combined inference score, Adam training and checkpoints.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "defa/config.hpp"
#include "defa/defa.hpp"
#include "defa/encoders.hpp"
#include "defa/evaluation.hpp"
#include "defa/numerics.hpp"
#include "defa/space.hpp"

namespace defa {

/// Per-image scores over one candidate set. attr is [n, N_a], obj is
/// [n, N_o]; the remaining matrices are [n, K] for K candidates.
struct ScoreBundle {
  std::vector<Pair> candidates;
  Matrix attr;
  Matrix obj;
  Matrix comp;
  Matrix cla;
  /// Empty when beta = 1 (the pseudo path is not needed).
  Matrix pair;
  Matrix combined;
};

class Model {
 public:
  /// Builds and initialises every parameter from `seed`.
  Model(const ModelConfig& model, const LossWeights& weights, int num_attrs, int num_objs,
        std::uint64_t seed);
  /// Same shapes, parameters taken from `params` (checked by name and shape).
  Model(const ModelConfig& model, const LossWeights& weights, int num_attrs, int num_objs,
        ParamStore params);

  int num_attrs() const { return tokens_.num_attrs(); }
  int num_objs() const { return tokens_.num_objs(); }
  int d_backbone() const { return config_.d_backbone; }
  int dim() const { return config_.d; }
  const ModelConfig& config() const { return config_; }
  const LossWeights& weights() const { return weights_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const VisualProjectors& projectors() const { return projectors_; }
  const TokenTable& tokens() const { return tokens_; }
  const FusionNet& fusion() const { return fusion_; }

  /// Scores every row of `features` ([n, d_backbone]) against `candidates`.
  ScoreBundle score(const Matrix& features, std::span<const Pair> candidates);
  /// Just the combined inference score matrix.
  Matrix inference_scores(const Matrix& features, std::span<const Pair> candidates);

 private:
  void check_params() const;

  ModelConfig config_;
  LossWeights weights_;
  VisualProjectors projectors_;
  TokenTable tokens_;
  FusionNet fusion_;
  ParamStore params_;
};

/// S_cla[i, k] = lambda1 * comp[i, k] + (1 - lambda1) * (attr[i, a_k] + obj[i, o_k]).
Matrix classification_scores(const Matrix& attr, const Matrix& obj, const Matrix& comp,
                             std::span<const Pair> candidates, double lambda1);

/// Batch-mean lambda1 * CE(comp) + (1 - lambda1) * (CE(attr) + CE(obj)).
double classification_loss(const Matrix& attr, const Matrix& obj, const Matrix& comp,
                           std::span<const int> attr_targets, std::span<const int> obj_targets,
                           std::span<const int> comp_targets, double tau, double lambda1);

/// beta * cla + (1 - beta) * pair; with beta = 1 the pair matrix is ignored.
Matrix inference_score(const Matrix& cla, const Matrix& pair, double beta);

/// Row-wise argmax; ties go to the lowest column.
std::vector<int> predict(const Matrix& scores);

/// Scalar values of one batch's loss terms. Terms whose weight is zero are
/// not computed and stay empty.
struct LossValues {
  double attr = 0.0;
  double obj = 0.0;
  double comp = 0.0;
  double cla = 0.0;
  std::optional<double> dis;
  std::optional<double> rec;
  std::optional<double> pair;
  std::optional<double> cts;
  double total = 0.0;
};

/// L_cla + lambda2 L_dis + lambda3 L_rec + lambda4 L_pair + lambda5 L_cts over
/// the terms present.
double total_loss(const LossValues& parts, const LossWeights& weights);

/// Training-time constants shared by every batch.
struct LossContext {
  /// Candidates of L^c (the full grid or the training seen set).
  std::vector<Pair> cls_candidates;
  /// Candidates of L_pair when PairCandidates::kSeen.
  std::vector<Pair> pair_candidates;
  PairCandidates pair_mode = PairCandidates::kSeen;
  CartesianCandidates cartesian_mode = CartesianCandidates::kBatch;
  DebiasWeights debias;

  static LossContext make(const CompositionSpace& train_space,
                          const std::vector<Sample>& train_samples, const TrainConfig& train,
                          const LossWeights& weights);
};

struct LossVars {
  Var attr, obj, comp, cla, dis, rec, pair, cts, total;
};

/// Records the full training loss for one batch on `g`.
LossVars build_loss(Graph& g, Model& model, const Matrix& features,
                    std::span<const Pair> labels, const LossContext& ctx);

LossValues loss_values(const Graph& g, const LossVars& vars);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  /// One update of every trainable entry from its accumulated gradient.
  void step(ParamStore& params);
  long long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct EpochLog {
  int epoch = 0;
  int steps = 0;
  /// Sample-weighted means over the epoch.
  LossValues loss;
  /// Validation metrics (closed world); absent without a validation split.
  std::optional<EvalReport> val;
};

struct TrainInputs {
  const std::vector<Sample>* train = nullptr;
  const CompositionSpace* train_space = nullptr;
  const std::vector<Sample>* val = nullptr;
  const CompositionSpace* val_space = nullptr;
};

struct TrainResult {
  Model best;
  Model last;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Deterministic given config.train.seed. The best checkpoint is selected by
/// validation closed-world AUC (the last epoch when there is no validation
/// split). Throws TrainingError naming the first non-finite component.
TrainResult train(const RunConfig& config, const TrainInputs& inputs);

/// CSV header and row for an epoch log; skipped terms are empty fields.
std::string epoch_log_header();
std::string epoch_log_row(const EpochLog& log);

// Checkpoints: "DEFA" magic, version 2, a key=value header carrying the run
// config and vocabulary sizes, then every parameter tensor in float64.
std::string encode_checkpoint(const Model& model, const RunConfig& config);
struct Checkpoint {
  RunConfig config;
  Model model;
};
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Model& model, const RunConfig& config);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace defa
