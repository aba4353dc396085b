#include "defa/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace defa {

void set_threads(int n) { Eigen::setNbThreads(n); }

namespace {

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a) + " vs " + shape(b));
  }
}

}  // namespace

// --------------------------------------------------------------------------
// Rng

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u = 0.0;
  double v = 0.0;
  double s = 0.0;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * factor;
  has_spare_ = true;
  return u * factor;
}

std::uint64_t Rng::index(std::uint64_t n) {
  if (n == 0) {
    throw Error("Rng::index: empty range");
  }
  // Rejection sampling on the largest multiple of n below 2^64.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r = 0;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

Matrix Rng::uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = uniform(-bound, bound);
  }
  return m;
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = stddev * normal();
  }
  return m;
}

// --------------------------------------------------------------------------
// ParamStore

Matrix& ParamStore::add(const std::string& name, Matrix init, bool trainable) {
  if (contains(name)) {
    throw Error("ParamStore: duplicate parameter '" + name + "'");
  }
  Entry e;
  e.name = name;
  e.grad = Matrix::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  e.trainable = trainable;
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second];
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) {
    e.grad.setZero();
  }
}

std::size_t ParamStore::num_scalars(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!trainable_only || e.trainable) {
      n += static_cast<std::size_t>(e.value.size());
    }
  }
  return n;
}

// --------------------------------------------------------------------------
// Graph

Var Graph::push(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& delta) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) {
    return;
  }
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

template <typename Expr>
void Graph::accumulate_expr(Var v, const Expr& delta) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) {
    return;
  }
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

double Graph::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.size() != 1) {
    throw DimensionError("Graph::scalar: node is " + shape(m));
  }
  return m(0, 0);
}

Var Graph::constant(Matrix value) { return push(std::move(value), false); }

Var Graph::param(ParamStore& store, const std::string& name) {
  ParamStore::Entry* entry = &store.entry(name);
  Var out = push(entry->value, entry->trainable);
  if (entry->trainable) {
    nodes_[out.id].backward = [entry](const Matrix& g) { entry->grad += g; };
  }
  return out;
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw DimensionError("Graph::backward: loss must be 1x1, got " + shape(value(loss)));
  }
  for (auto& n : nodes_) {
    n.grad.resize(0, 0);
  }
  if (!nodes_[loss.id].requires_grad) {
    return;
  }
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad.size() != 0 && n.backward) {
      n.backward(n.grad);
    }
  }
}

Var Graph::affine(Var x, Var w, Var b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  if (X.cols() != W.cols() || B.rows() != 1 || B.cols() != W.rows()) {
    throw DimensionError("affine: x " + shape(X) + ", W " + shape(W) + ", b " + shape(B));
  }
  // Coefficient-wise product: each output row depends only on its input row,
  // so results do not change with batch size or row position.
  Matrix y = X.lazyProduct(W.transpose());
  y.rowwise() += B.row(0);
  Var out = push(std::move(y), needs(x) || needs(w) || needs(b));
  nodes_[out.id].backward = [this, x, w, b](const Matrix& g) {
    if (needs(x)) accumulate(x, g * value(w));
    if (needs(w)) accumulate(w, g.transpose() * value(x));
    if (needs(b)) accumulate(b, g.colwise().sum());
  };
  return out;
}

Var Graph::relu(Var x) {
  Var out = push(value(x).cwiseMax(0.0), needs(x));
  nodes_[out.id].backward = [this, x, out](const Matrix& g) {
    const Matrix& y = value(out);
    accumulate_expr(x, (y.array() > 0.0).select(g.array(), 0.0).matrix());
  };
  return out;
}

Var Graph::add(Var a, Var b) { return lincomb(a, 1.0, b, 1.0); }

Var Graph::sub(Var a, Var b) { return lincomb(a, 1.0, b, -1.0); }

Var Graph::scale(Var x, double s) {
  Var out = push(s * value(x), needs(x));
  nodes_[out.id].backward = [this, x, s](const Matrix& g) { accumulate_expr(x, s * g); };
  return out;
}

Var Graph::lincomb(Var a, double sa, Var b, double sb) {
  require_same_shape(value(a), value(b), "lincomb");
  Var out = push(sa * value(a) + sb * value(b), needs(a) || needs(b));
  nodes_[out.id].backward = [this, a, sa, b, sb](const Matrix& g) {
    accumulate_expr(a, sa * g);
    accumulate_expr(b, sb * g);
  };
  return out;
}

Var Graph::add_row(Var x, const RowVector& row) {
  const Matrix& X = value(x);
  if (X.cols() != row.size()) {
    throw DimensionError("add_row: " + shape(X) + " vs row of " + std::to_string(row.size()));
  }
  Matrix y = X;
  y.rowwise() += row;
  Var out = push(std::move(y), needs(x));
  nodes_[out.id].backward = [this, x](const Matrix& g) { accumulate(x, g); };
  return out;
}

Var Graph::concat_cols(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.rows() != B.rows()) {
    throw DimensionError("concat_cols: " + shape(A) + " vs " + shape(B));
  }
  Matrix y(A.rows(), A.cols() + B.cols());
  y << A, B;
  const Eigen::Index split = A.cols();
  Var out = push(std::move(y), needs(a) || needs(b));
  nodes_[out.id].backward = [this, a, b, split](const Matrix& g) {
    if (needs(a)) accumulate(a, g.leftCols(split));
    if (needs(b)) accumulate(b, g.rightCols(g.cols() - split));
  };
  return out;
}

Var Graph::gather_rows(Var x, std::vector<int> rows) {
  const Matrix& X = value(x);
  Matrix y(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= X.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of " +
                           std::to_string(X.rows()));
    }
    y.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
  }
  Var out = push(std::move(y), needs(x));
  nodes_[out.id].backward = [this, x, rows = std::move(rows)](const Matrix& g) {
    const Matrix& X = value(x);
    Matrix dx = Matrix::Zero(X.rows(), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      dx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    accumulate(x, dx);
  };
  return out;
}

Var Graph::normalize_rows(Var x) {
  const Matrix& X = value(x);
  Vector norms = X.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > kNormEpsilon)) {
      throw DegenerateVectorError("normalize_rows: row " + std::to_string(i) +
                                  " has near-zero norm");
    }
  }
  Matrix y = X.array().colwise() / norms.array();
  Var out = push(std::move(y), needs(x));
  nodes_[out.id].backward = [this, x, out, norms = std::move(norms)](const Matrix& g) {
    const Matrix& y = value(out);
    const Vector dots = (g.array() * y.array()).rowwise().sum();
    Matrix dx = (g - (y.array().colwise() * dots.array()).matrix());
    dx.array().colwise() /= norms.array();
    accumulate(x, dx);
  };
  return out;
}

Var Graph::matmul_nt(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_nt: " + shape(A) + " vs " + shape(B));
  }
  Var out = push(A * B.transpose(), needs(a) || needs(b));
  nodes_[out.id].backward = [this, a, b](const Matrix& g) {
    if (needs(a)) accumulate(a, g * value(b));
    if (needs(b)) accumulate(b, g.transpose() * value(a));
  };
  return out;
}

Var Graph::row_dot(Var a, Var b) {
  require_same_shape(value(a), value(b), "row_dot");
  Matrix y = (value(a).array() * value(b).array()).rowwise().sum().matrix();
  Var out = push(std::move(y), needs(a) || needs(b));
  nodes_[out.id].backward = [this, a, b](const Matrix& g) {
    if (needs(a)) accumulate(a, (value(b).array().colwise() * g.col(0).array()).matrix());
    if (needs(b)) accumulate(b, (value(a).array().colwise() * g.col(0).array()).matrix());
  };
  return out;
}

Var Graph::mean(Var x) {
  const Matrix& X = value(x);
  if (X.size() == 0) {
    throw DimensionError("mean: empty input");
  }
  Matrix y(1, 1);
  y(0, 0) = X.mean();
  const double inv = 1.0 / static_cast<double>(X.size());
  Var out = push(std::move(y), needs(x));
  nodes_[out.id].backward = [this, x, inv](const Matrix& g) {
    const Matrix& X = value(x);
    accumulate(x, Matrix::Constant(X.rows(), X.cols(), g(0, 0) * inv));
  };
  return out;
}

Var Graph::softmax_ce(Var scores, std::vector<int> targets, double tau,
                      std::vector<double> weights) {
  const Matrix& S = value(scores);
  const Eigen::Index n = S.rows();
  const Eigen::Index k = S.cols();
  if (n == 0 || k == 0) {
    throw DimensionError("softmax_ce: empty score matrix " + shape(S));
  }
  if (static_cast<Eigen::Index>(targets.size()) != n) {
    throw DimensionError("softmax_ce: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  }
  if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n) {
    throw DimensionError("softmax_ce: weight count mismatch");
  }
  if (!(tau > 0.0)) {
    throw Error("softmax_ce: temperature must be positive");
  }
  Matrix probs(n, k);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= k) {
      throw DimensionError("softmax_ce: target " + std::to_string(t) + " outside " +
                           std::to_string(k) + " classes");
    }
    const double m = S.row(i).maxCoeff() / tau;
    auto e = probs.row(i).array();
    e = (S.row(i).array() / tau - m).exp();
    const double sum = e.sum();
    e /= sum;
    const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
    total += w * (m + std::log(sum) - S(i, t) / tau);
  }
  Matrix y(1, 1);
  y(0, 0) = total / static_cast<double>(n);
  Var out = push(std::move(y), needs(scores));
  nodes_[out.id].backward = [this, scores, targets = std::move(targets), tau,
                             weights = std::move(weights),
                             probs = std::move(probs)](const Matrix& g) {
    const Eigen::Index n = probs.rows();
    Matrix ds = probs;
    for (Eigen::Index i = 0; i < n; ++i) {
      ds(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
      const double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
      ds.row(i) *= g(0, 0) * w / (static_cast<double>(n) * tau);
    }
    accumulate(scores, ds);
  };
  return out;
}

Var Graph::weighted_sum(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.size() != coeffs.size() || terms.empty()) {
    throw DimensionError("weighted_sum: term/coefficient mismatch");
  }
  Matrix y = Matrix::Zero(1, 1);
  bool rg = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (value(terms[i]).size() != 1) {
      throw DimensionError("weighted_sum: terms must be 1x1");
    }
    y(0, 0) += coeffs[i] * value(terms[i])(0, 0);
    rg = rg || needs(terms[i]);
  }
  Var out = push(std::move(y), rg);
  nodes_[out.id].backward = [this, t = std::vector<Var>(terms.begin(), terms.end()),
                             c = std::vector<double>(coeffs.begin(), coeffs.end())](
                                const Matrix& g) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      accumulate_expr(t[i], c[i] * g);
    }
  };
  return out;
}

// --------------------------------------------------------------------------
// MLP

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    throw ConfigError("MlpSpec: need at least one layer");
  }
  for (int w : widths) {
    if (w <= 0) {
      throw ConfigError("MlpSpec: widths must be positive");
    }
  }
}

MlpSpec MlpSpec::uniform(int d_in, int d_out, int layers) {
  if (layers < 1) {
    throw ConfigError("MlpSpec: need at least one layer");
  }
  MlpSpec s;
  s.widths.push_back(d_in);
  for (int l = 0; l < layers; ++l) {
    s.widths.push_back(d_out);
  }
  return s;
}

Mlp::Mlp(MlpSpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
  spec_.validate();
}

std::string Mlp::weight_name(int layer) const {
  return prefix_ + "." + std::to_string(layer) + ".W";
}

std::string Mlp::bias_name(int layer) const {
  return prefix_ + "." + std::to_string(layer) + ".b";
}

void Mlp::init(ParamStore& store, Rng& rng) const {
  for (int l = 0; l < spec_.layers(); ++l) {
    const int fan_in = spec_.widths[l];
    const int fan_out = spec_.widths[l + 1];
    store.add(weight_name(l), rng.uniform_matrix(fan_out, fan_in, 1.0 / std::sqrt(fan_in)));
    store.add(bias_name(l), Matrix::Zero(1, fan_out));
  }
}

Var Mlp::forward(Graph& g, ParamStore& store, Var x) const {
  if (g.value(x).cols() != spec_.in()) {
    throw DimensionError("Mlp " + prefix_ + ": input width " +
                         std::to_string(g.value(x).cols()) + " != " +
                         std::to_string(spec_.in()));
  }
  Var h = x;
  for (int l = 0; l < spec_.layers(); ++l) {
    h = g.affine(h, g.param(store, weight_name(l)), g.param(store, bias_name(l)));
    if (l + 1 < spec_.layers()) {
      h = g.relu(h);
    }
  }
  return h;
}

Vector mlp_forward(const ParamStore& store, const MlpSpec& spec, const std::string& prefix,
                   const Vector& x) {
  spec.validate();
  if (x.size() != spec.in()) {
    throw DimensionError("mlp_forward: input has " + std::to_string(x.size()) +
                         " entries, expected " + std::to_string(spec.in()));
  }
  Vector h = x;
  for (int l = 0; l < spec.layers(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    const Matrix& w = store.value(base + ".W");
    const Matrix& b = store.value(base + ".b");
    Vector next = w * h + b.row(0).transpose();
    if (l + 1 < spec.layers()) {
      next = next.cwiseMax(0.0);
    }
    h = std::move(next);
  }
  return h;
}

double cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine: length mismatch");
  }
  const double uu = u.dot(u);
  const double vv = v.dot(v);
  if (!(std::sqrt(uu) > kNormEpsilon) || !(std::sqrt(vv) > kNormEpsilon)) {
    throw DegenerateVectorError("cosine: near-zero-norm input");
  }
  // sqrt(uu * uu) == uu, so identical inputs give exactly 1
  return u.dot(v) / std::sqrt(uu * vv);
}

double softmax_ce(std::span<const double> scores, int gt_index, double tau) {
  if (scores.empty()) {
    throw DimensionError("softmax_ce: empty score vector");
  }
  if (gt_index < 0 || static_cast<std::size_t>(gt_index) >= scores.size()) {
    throw DimensionError("softmax_ce: gt index out of range");
  }
  if (!(tau > 0.0)) {
    throw Error("softmax_ce: temperature must be positive");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    m = std::max(m, s / tau);
  }
  double sum = 0.0;
  for (double s : scores) {
    sum += std::exp(s / tau - m);
  }
  return m + std::log(sum) - scores[static_cast<std::size_t>(gt_index)] / tau;
}

// --------------------------------------------------------------------------
// Gradient checking

GradCheckReport grad_check(const LossFn& loss, ParamStore& params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  Rng rng(options.seed);

  auto analytic_at = [&](ParamStore::Entry& e, Eigen::Index idx) {
    params.zero_grads();
    loss(params, true);
    return e.grad.data()[idx];
  };
  auto numeric_at = [&](ParamStore::Entry& e, Eigen::Index idx) {
    double& x = e.value.data()[idx];
    const double x0 = x;
    x = x0 + options.step;
    const double fp = loss(params, false);
    x = x0 - options.step;
    const double fm = loss(params, false);
    x = x0;
    return (fp - fm) / (2.0 * options.step);
  };
  auto rel_error = [](double a, double n) { return std::abs(a - n) / std::max(1.0, std::abs(n)); };

  params.zero_grads();
  loss(params, true);
  std::vector<Matrix> base_grads;
  for (auto& e : params.entries()) {
    base_grads.push_back(e.grad);
  }

  std::size_t entry_index = 0;
  for (auto& e : params.entries()) {
    const Matrix& grads = base_grads[entry_index++];
    if (!e.trainable) continue;
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), e.name) == options.only.end()) {
      continue;
    }
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(e.value.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (static_cast<int>(coords.size()) > options.coords_per_param) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(options.coords_per_param));
    }
    for (Eigen::Index idx : coords) {
      ++report.checked;
      const double analytic = grads.data()[idx];
      const double numeric = numeric_at(e, idx);
      double err = rel_error(analytic, numeric);
      if (err <= options.rel_tol) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        continue;
      }
      const double original = e.value.data()[idx];
      bool recovered = false;
      for (int attempt = 0; attempt < options.nudge_attempts && !recovered; ++attempt) {
        e.value.data()[idx] = original + options.nudge_scale * rng.uniform(-1.0, 1.0);
        const double a2 = analytic_at(e, idx);
        const double n2 = numeric_at(e, idx);
        const double err2 = rel_error(a2, n2);
        if (err2 <= options.rel_tol) {
          recovered = true;
          report.max_rel_error = std::max(report.max_rel_error, err2);
        }
      }
      e.value.data()[idx] = original;
      if (recovered) {
        ++report.nudged;
      } else {
        GradCheckFailure f;
        f.param = e.name;
        f.row = idx / e.value.cols();
        f.col = idx % e.value.cols();
        f.analytic = analytic;
        f.numeric = numeric;
        f.rel_error = err;
        report.failures.push_back(f);
        report.max_rel_error = std::max(report.max_rel_error, err);
      }
    }
  }
  params.zero_grads();
  return report;
}

}  // namespace defa
