#pragma once

// Brute-force reference for the calibration sweep: every row's argmax is
// recomputed at every bias, independent of the sweep's prefix counting.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "defa/evaluation.hpp"
#include "defa/numerics.hpp"

namespace defa::testing {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Problem {
  Matrix scores;
  CandidateSet cands;
  std::vector<Pair> labels;
  std::vector<char> label_unseen;
};

// Candidates are (0, c) for c < k; the first `seen` columns are seen.
inline Problem random_problem(Rng& rng, int n, int k, int seen, bool dyadic) {
  Problem p;
  p.scores.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      p.scores(i, c) = dyadic ? static_cast<double>(static_cast<int>(rng.index(33)) - 16) / 16.0
                              : rng.uniform(-1.0, 1.0);
    }
  for (int c = 0; c < k; ++c) {
    p.cands.pairs.push_back({0, c});
    p.cands.unseen.push_back(c >= seen ? 1 : 0);
  }
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.index(static_cast<std::uint64_t>(k)));
    p.labels.push_back({0, c});
    p.label_unseen.push_back(p.cands.unseen[static_cast<std::size_t>(c)]);
  }
  if (std::find(p.label_unseen.begin(), p.label_unseen.end(), 1) == p.label_unseen.end()) {
    p.labels[0] = {0, k - 1};
    p.label_unseen[0] = 1;
  }
  return p;
}

// Independent oracle: argmax of every row after adding the bias to unseen
// columns, evaluated at every bias the sweep visits.
struct Oracle {
  std::vector<double> seen, unseen;
  double seen_best = 0, unseen_best = 0, hm_best = 0, auc = 0;
};

inline Oracle brute_force(const Problem& p, const std::vector<double>& biases) {
  Oracle o;
  int ns = 0, nu = 0;
  for (char u : p.label_unseen) (u ? nu : ns)++;
  bool has_unseen = false, has_seen = false;
  for (char u : p.cands.unseen) (u ? has_unseen : has_seen) = true;
  for (double b : biases) {
    int cs = 0, cu = 0;
    for (Eigen::Index i = 0; i < p.scores.rows(); ++i) {
      int arg = -1;
      double best = 0.0;
      for (Eigen::Index c = 0; c < p.scores.cols(); ++c) {
        const bool un = p.cands.unseen[static_cast<std::size_t>(c)];
        // Infinite biases are limits: +inf keeps only unseen columns in play
        // (if any), -inf only seen ones.
        if (b == kInf && has_unseen && !un) continue;
        if (b == -kInf && has_seen && un) continue;
        const double s = p.scores(i, c) + (un && std::isfinite(b) ? b : 0.0);
        if (arg < 0 || s > best) {
          best = s;
          arg = static_cast<int>(c);
        }
      }
      const bool correct = p.cands.pairs[static_cast<std::size_t>(arg)] ==
                           p.labels[static_cast<std::size_t>(i)];
      if (correct) (p.label_unseen[static_cast<std::size_t>(i)] ? cu : cs)++;
    }
    o.seen.push_back(ns ? static_cast<double>(cs) / ns : 0.0);
    o.unseen.push_back(static_cast<double>(cu) / nu);
  }
  for (std::size_t j = 0; j < o.seen.size(); ++j) {
    o.seen_best = std::max(o.seen_best, o.seen[j]);
    o.unseen_best = std::max(o.unseen_best, o.unseen[j]);
    const double s = o.seen[j], u = o.unseen[j];
    o.hm_best = std::max(o.hm_best, s + u > 0 ? 2 * s * u / (s + u) : 0.0);
  }
  // Union of rectangles: for each distinct unseen level, the tallest seen
  // value reachable at or beyond it.
  std::vector<double> levels(o.unseen);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double prev = 0.0;
  for (double u : levels) {
    double tallest = 0.0;
    for (std::size_t j = 0; j < o.seen.size(); ++j)
      if (o.unseen[j] >= u) tallest = std::max(tallest, o.seen[j]);
    o.auc += (u - prev) * tallest;
    prev = u;
  }
  return o;
}

// Gap set computed independently of the sweep.
inline std::vector<double> expected_biases(const Problem& p) {
  std::set<double> gaps;
  for (Eigen::Index i = 0; i < p.scores.rows(); ++i) {
    double bs = -kInf, bu = -kInf;
    for (Eigen::Index c = 0; c < p.scores.cols(); ++c) {
      double& t = p.cands.unseen[static_cast<std::size_t>(c)] ? bu : bs;
      t = std::max(t, p.scores(i, c));
    }
    if (std::isfinite(bs) && std::isfinite(bu)) gaps.insert(bs - bu);
  }
  std::vector<double> out{-kInf};
  double prev = 0.0;
  bool first = true;
  for (double g : gaps) {
    if (!first) {
      const double mid = std::midpoint(prev, g);
      if (mid > prev && mid < g) out.push_back(mid);
    }
    out.push_back(g);
    prev = g;
    first = false;
  }
  out.push_back(kInf);
  return out;
}

}  // namespace defa::testing
