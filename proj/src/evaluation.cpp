#include "defa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "defa/pipeline.hpp"

namespace defa {

int CandidateSet::find(Pair p) const {
  auto it = std::lower_bound(pairs.begin(), pairs.end(), p);
  if (it == pairs.end() || *it != p) return -1;
  return static_cast<int>(it - pairs.begin());
}

CandidateSet closed_world_candidates(const CompositionSpace& split_space) {
  CandidateSet c;
  c.pairs = split_space.test_closed();
  c.unseen.reserve(c.pairs.size());
  for (const Pair& p : c.pairs) {
    c.unseen.push_back(split_space.is_unseen(p) ? 1 : 0);
  }
  return c;
}

CandidateSet open_world_candidates(int num_attrs, int num_objs,
                                   std::span<const Pair> known_seen,
                                   const FeasibilityMask* mask) {
  if (mask && mask->scores.size() != static_cast<std::size_t>(num_attrs * num_objs)) {
    throw EvaluationError("feasibility mask does not cover A x O");
  }
  std::vector<char> seen(static_cast<std::size_t>(num_attrs * num_objs), 0);
  for (const Pair& p : known_seen) {
    seen.at(static_cast<std::size_t>(p.attr * num_objs + p.obj)) = 1;
  }
  CandidateSet c;
  for (int a = 0; a < num_attrs; ++a) {
    for (int o = 0; o < num_objs; ++o) {
      const int comp = a * num_objs + o;
      const bool is_seen = seen[static_cast<std::size_t>(comp)] != 0;
      if (!is_seen && mask && !mask->passes(comp)) continue;
      c.pairs.push_back(Pair{a, o});
      c.unseen.push_back(is_seen ? 0 : 1);
    }
  }
  return c;
}

double harmonic_mean(double seen, double unseen) {
  const double s = seen + unseen;
  return s > 0.0 ? 2.0 * seen * unseen / s : 0.0;
}

double staircase_area(std::span<const CurvePoint> curve) {
  double area = 0.0;
  double prev_unseen = 0.0;
  for (const CurvePoint& p : curve) {
    area += (p.unseen - prev_unseen) * p.seen;
    prev_unseen = p.unseen;
  }
  return area;
}

EvalReport calibration_sweep(const Matrix& scores, const CandidateSet& candidates,
                             std::span<const Pair> labels, std::span<const char> label_unseen) {
  const Eigen::Index n = scores.rows();
  const Eigen::Index k = scores.cols();
  if (static_cast<std::size_t>(k) != candidates.size() ||
      candidates.unseen.size() != candidates.size()) {
    throw EvaluationError("score matrix has " + std::to_string(k) + " columns for " +
                          std::to_string(candidates.size()) + " candidates");
  }
  if (labels.size() != static_cast<std::size_t>(n) || label_unseen.size() != labels.size()) {
    throw EvaluationError("label count does not match score rows");
  }
  if (k == 0) {
    throw EvaluationError("empty candidate set");
  }
  if (!scores.allFinite()) {
    throw EvaluationError("score matrix contains non-finite values");
  }

  struct ImageBest {
    double seen_score;
    double unseen_score;
    int seen_col;
    int unseen_col;
  };
  std::vector<ImageBest> best(static_cast<std::size_t>(n));
  int num_seen_images = 0;
  int num_unseen_images = 0;
  std::vector<double> gaps;
  gaps.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ImageBest b{-std::numeric_limits<double>::infinity(),
                -std::numeric_limits<double>::infinity(), -1, -1};
    for (Eigen::Index c = 0; c < k; ++c) {
      const double s = scores(i, c);
      if (candidates.unseen[static_cast<std::size_t>(c)]) {
        if (b.unseen_col < 0 || s > b.unseen_score) {
          b.unseen_score = s;
          b.unseen_col = static_cast<int>(c);
        }
      } else if (b.seen_col < 0 || s > b.seen_score) {
        b.seen_score = s;
        b.seen_col = static_cast<int>(c);
      }
    }
    if (b.seen_col >= 0 && b.unseen_col >= 0) {
      gaps.push_back(b.seen_score - b.unseen_score);
    }
    best[static_cast<std::size_t>(i)] = b;
    if (label_unseen[static_cast<std::size_t>(i)]) {
      ++num_unseen_images;
    } else {
      ++num_seen_images;
    }
  }
  if (num_unseen_images == 0) {
    throw EvaluationError("no unseen-labelled images: HM and AUC are undefined");
  }

  std::sort(gaps.begin(), gaps.end());
  gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());
  std::vector<double> biases;
  biases.reserve(2 * gaps.size() + 2);
  biases.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < gaps.size(); ++g) {
    if (g > 0) {
      const double mid = std::midpoint(gaps[g - 1], gaps[g]);
      if (mid > gaps[g - 1] && mid < gaps[g]) {
        biases.push_back(mid);
      }
    }
    biases.push_back(gaps[g]);
  }
  biases.push_back(std::numeric_limits<double>::infinity());
  const std::size_t nb = biases.size();

  // Decisions are monotone in the bias, so each image flips from its best
  // seen to its best unseen candidate exactly once.
  std::vector<int> seen_delta(nb + 1, 0);
  std::vector<int> unseen_delta(nb + 1, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const ImageBest& b = best[static_cast<std::size_t>(i)];
    auto unseen_wins = [&b](double bias) {
      if (b.unseen_col < 0) return false;
      if (b.seen_col < 0) return true;
      if (std::isinf(bias)) return bias > 0.0;
      const double shifted = b.unseen_score + bias;
      return shifted > b.seen_score || (shifted == b.seen_score && b.unseen_col < b.seen_col);
    };
    const std::size_t flip = static_cast<std::size_t>(
        std::partition_point(biases.begin(), biases.end(),
                             [&](double bias) { return !unseen_wins(bias); }) -
        biases.begin());
    const int label_col = candidates.find(labels[static_cast<std::size_t>(i)]);
    if (label_col < 0) continue;
    if (label_unseen[static_cast<std::size_t>(i)]) {
      if (b.unseen_col == label_col) {
        ++unseen_delta[flip];
        --unseen_delta[nb];
      }
    } else if (b.seen_col == label_col) {
      ++seen_delta[0];
      --seen_delta[flip];
    }
  }

  EvalReport r;
  r.num_seen_images = num_seen_images;
  r.num_unseen_images = num_unseen_images;
  r.num_candidates = candidates.size();
  r.curve.reserve(nb);
  int seen_correct = 0;
  int unseen_correct = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    seen_correct += seen_delta[b];
    unseen_correct += unseen_delta[b];
    CurvePoint p;
    p.bias = biases[b];
    p.seen = num_seen_images > 0 ? static_cast<double>(seen_correct) / num_seen_images : 0.0;
    p.unseen = static_cast<double>(unseen_correct) / num_unseen_images;
    r.seen_best = std::max(r.seen_best, p.seen);
    r.unseen_best = std::max(r.unseen_best, p.unseen);
    r.hm_best = std::max(r.hm_best, harmonic_mean(p.seen, p.unseen));
    r.curve.push_back(p);
  }
  r.auc = staircase_area(r.curve);
  return r;
}

namespace {

Matrix stack_features(const std::vector<Sample>& samples) {
  if (samples.empty()) {
    throw EvaluationError("no samples to evaluate");
  }
  Matrix x(static_cast<Eigen::Index>(samples.size()), samples.front().feature.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = samples[i].feature.transpose();
  }
  return x;
}

Matrix select_columns(const Matrix& full, const CandidateSet& cands, int num_objs) {
  Matrix out(full.rows(), static_cast<Eigen::Index>(cands.size()));
  for (std::size_t c = 0; c < cands.size(); ++c) {
    const Pair p = cands.pairs[c];
    out.col(static_cast<Eigen::Index>(c)) = full.col(p.attr * num_objs + p.obj);
  }
  return out;
}

}  // namespace

EvalReport closed_world_eval(Model& model, const std::vector<Sample>& samples,
                             const CompositionSpace& split_space) {
  const CandidateSet cands = closed_world_candidates(split_space);
  std::vector<Pair> labels;
  std::vector<char> label_unseen;
  for (const Sample& s : samples) {
    if (cands.find(s.pair()) < 0) {
      throw EvaluationError("sample '" + s.image_id + "' is labelled outside the candidate set");
    }
    labels.push_back(s.pair());
    label_unseen.push_back(split_space.is_unseen(s.pair()) ? 1 : 0);
  }
  const Matrix scores = model.inference_scores(stack_features(samples), cands.pairs);
  return calibration_sweep(scores, cands, labels, label_unseen);
}

EvalReport open_world_eval(Model& model, const std::vector<Sample>& samples,
                           std::span<const Pair> known_seen, const FeasibilityMask* mask) {
  const int na = model.num_attrs();
  const int no = model.num_objs();
  const CandidateSet cands = open_world_candidates(na, no, known_seen, mask);
  std::vector<char> seen(static_cast<std::size_t>(na * no), 0);
  for (const Pair& p : known_seen) seen[static_cast<std::size_t>(p.attr * no + p.obj)] = 1;
  std::vector<Pair> labels;
  std::vector<char> label_unseen;
  for (const Sample& s : samples) {
    labels.push_back(s.pair());
    label_unseen.push_back(seen[static_cast<std::size_t>(s.attr * no + s.obj)] ? 0 : 1);
  }
  const Matrix scores = model.inference_scores(stack_features(samples), cands.pairs);
  return calibration_sweep(scores, cands, labels, label_unseen);
}

double select_feasibility_threshold(Model& model, const std::vector<Sample>& val_samples,
                                    std::span<const Pair> known_seen,
                                    const std::vector<double>& feasibility_scores) {
  const int na = model.num_attrs();
  const int no = model.num_objs();
  if (feasibility_scores.size() != static_cast<std::size_t>(na * no)) {
    throw EvaluationError("feasibility scores do not cover A x O");
  }
  const CandidateSet all = open_world_candidates(na, no, known_seen, nullptr);
  const Matrix full = model.inference_scores(stack_features(val_samples), all.pairs);
  std::vector<Pair> labels;
  std::vector<char> label_unseen;
  for (const Sample& s : val_samples) {
    labels.push_back(s.pair());
    label_unseen.push_back(all.unseen[static_cast<std::size_t>(all.find(s.pair()))]);
  }
  std::vector<double> thresholds{-std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < all.size(); ++c) {
    if (all.unseen[c]) {
      thresholds.push_back(feasibility_scores[c]);
    }
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  double best_threshold = thresholds.front();
  double best_unseen = -1.0;
  FeasibilityMask mask;
  mask.scores = feasibility_scores;
  for (double t : thresholds) {
    mask.threshold = t;
    const CandidateSet cands = open_world_candidates(na, no, known_seen, &mask);
    // Higher thresholds only remove more unseen pairs.
    if (std::none_of(cands.unseen.begin(), cands.unseen.end(), [](char u) { return u != 0; })) {
      break;
    }
    const EvalReport r =
        calibration_sweep(select_columns(full, cands, no), cands, labels, label_unseen);
    if (r.unseen_best > best_unseen) {
      best_unseen = r.unseen_best;
      best_threshold = t;
    }
  }
  return best_threshold;
}

std::string format_summary(const EvalReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "AUC=%.2f HM=%.2f Seen=%.2f Unseen=%.2f", 100.0 * report.auc,
                100.0 * report.hm_best, 100.0 * report.seen_best, 100.0 * report.unseen_best);
  return buf;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  char buf[128];
  out << "bias,seen_acc,unseen_acc\n";
  for (const CurvePoint& p : report.curve) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.bias, p.seen, p.unseen);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "# summary auc=%.17g hm=%.17g seen=%.17g unseen=%.17g\n",
                report.auc, report.hm_best, report.seen_best, report.unseen_best);
  out << buf;
}

}  // namespace defa
