#pragma once

// Generalized zero-shot calibration sweep: a scalar bias is added to every
// unseen candidate's score and the (seen accuracy, unseen accuracy) trade-off
// is traced over every bias that can change a decision.

#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "defa/numerics.hpp"
#include "defa/space.hpp"

namespace defa {

class Model;

/// Candidate compositions sorted by composition index, each flagged seen or
/// unseen. Column k of a score matrix scores pairs[k].
struct CandidateSet {
  std::vector<Pair> pairs;
  std::vector<char> unseen;

  std::size_t size() const { return pairs.size(); }
  /// Column of `p`, or -1.
  int find(Pair p) const;
};

/// Test (or validation) closed world: the split's seen ∪ unseen pairs.
CandidateSet closed_world_candidates(const CompositionSpace& split_space);

struct FeasibilityMask {
  /// One score per composition over the full A x O grid.
  std::vector<double> scores;
  double threshold = -std::numeric_limits<double>::infinity();

  bool passes(int comp) const { return scores.at(static_cast<std::size_t>(comp)) >= threshold; }
};

/// Open world: every pair of A x O; `known_seen` pairs are flagged seen and
/// never removed, other pairs are kept only if they pass `mask` (when given).
CandidateSet open_world_candidates(int num_attrs, int num_objs,
                                   std::span<const Pair> known_seen,
                                   const FeasibilityMask* mask);

struct CurvePoint {
  double bias = 0.0;
  double seen = 0.0;
  double unseen = 0.0;
};

struct EvalReport {
  double seen_best = 0.0;
  double unseen_best = 0.0;
  double hm_best = 0.0;
  double auc = 0.0;
  /// Sorted by increasing bias.
  std::vector<CurvePoint> curve;
  int num_seen_images = 0;
  int num_unseen_images = 0;
  std::size_t num_candidates = 0;
};

/// Biases swept: -inf, +inf, every finite per-image gap
/// (best seen score - best unseen score) and the midpoint between each pair
/// of consecutive distinct gaps. Ties at equal scores go to the lowest
/// composition index. `label_unseen[i]` selects which accuracy image i counts
/// towards. Without unseen candidates every image keeps its seen prediction
/// and unseen accuracy is 0. Throws EvaluationError if there is no
/// unseen-labelled image or no candidate at all.
EvalReport calibration_sweep(const Matrix& scores, const CandidateSet& candidates,
                             std::span<const Pair> labels, std::span<const char> label_unseen);

/// Area of the union of rectangles [0, unseen] x [0, seen] over the curve,
/// which is the exact area under the staircase.
double staircase_area(std::span<const CurvePoint> curve);

double harmonic_mean(double seen, double unseen);

/// Scores the split with the model's combined inference score over the closed
/// candidate set and sweeps.
EvalReport closed_world_eval(Model& model, const std::vector<Sample>& samples,
                             const CompositionSpace& split_space);

/// Same over the (optionally feasibility-filtered) full A x O grid.
/// `known_seen` is the training seen set.
EvalReport open_world_eval(Model& model, const std::vector<Sample>& samples,
                           std::span<const Pair> known_seen, const FeasibilityMask* mask);

/// Threshold (among -inf and the distinct scores of non-seen pairs) that
/// maximises unseen accuracy on a validation split; ties keep the lowest.
double select_feasibility_threshold(Model& model, const std::vector<Sample>& val_samples,
                                    std::span<const Pair> known_seen,
                                    const std::vector<double>& feasibility_scores);

/// "AUC=.. HM=.. Seen=.. Unseen=.." in percent.
std::string format_summary(const EvalReport& report);
/// bias,seen_acc,unseen_acc rows followed by a summary row.
void write_report_csv(std::ostream& out, const EvalReport& report);

}  // namespace defa
