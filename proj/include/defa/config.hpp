#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace defa {

/// Loss balancing and scoring hyperparameters.
struct LossWeights {
  double lambda1 = 0.9;  // composition vs primitive paths in S_cla / L_cla
  double lambda2 = 10.0;  // L_dis
  double lambda3 = 10.0;  // L_rec
  double lambda4 = 0.9;  // L_pair_aug
  double lambda5 = 0.1;  // L_cts_aug
  double alpha = 0.8;    // learned vs residual share of the fusion output
  double beta = 0.5;     // S_cla vs S_pair_aug at inference
  double rho = 0.5;      // frequency-suppression exponent
  double mu = 0.8;       // composition vs primitive debias blend
  double tau = 0.01;     // softmax temperature

  void validate() const;
};

struct ModelConfig {
  int d_backbone = 0;  // taken from the embedding file when 0
  int d = 64;
  int projector_layers = 2;
  int fusion_layers = 1;

  void validate() const;
};

enum class ClsCandidates { kFull, kSeen };
enum class PairCandidates { kSeen, kBatch };
enum class CartesianCandidates { kBatch, kFull };

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 20;
  int batch_size = 128;
  double lr = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ClsCandidates cls_candidates = ClsCandidates::kFull;
  PairCandidates pair_candidates = PairCandidates::kSeen;
  CartesianCandidates cartesian_candidates = CartesianCandidates::kBatch;

  void validate() const;
};

/// Table-4 style variants.
enum class Ablation { kNone, kBaseline, kNoRec, kNoPair, kNoCts, kNoFusion };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation a);
/// Forces the switched-off terms: baseline zeroes lambda2..5 and sets beta = 1;
/// no-fusion sets alpha = 0.
void apply_ablation(Ablation a, LossWeights& w);

/// Everything a run needs besides file paths.
struct RunConfig {
  std::string preset = "ut-zappos";
  ModelConfig model;
  LossWeights weights;
  TrainConfig train;
  Ablation ablation = Ablation::kNone;

  void validate() const;
  /// Stable key=value view, one entry per tunable.
  std::map<std::string, std::string> to_map() const;
  /// Applies key=value overrides; unknown keys or malformed values throw
  /// ConfigError.
  void apply(const std::map<std::string, std::string>& values);
};

std::vector<std::string> preset_names();
/// Hyperparameters for "ut-zappos", "mit-states" or "c-gqa".
RunConfig preset(const std::string& name);

/// Parses "key = value" lines ('#' comments, blank lines allowed).
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::string format_key_values(const std::map<std::string, std::string>& values);

std::string to_string(ClsCandidates c);
std::string to_string(PairCandidates c);
std::string to_string(CartesianCandidates c);

}  // namespace defa
