#pragma once

// Dense double-precision core: seeded RNG, named parameter storage, a small
// reverse-mode tape over the fixed op set the model needs, MLPs and a
// central finite-difference gradient checker.

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "defa/error.hpp"

namespace defa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
/// Row-major 2-D tensor.
using Tensor2 = Matrix;

inline constexpr double kNormEpsilon = 1e-12;

// --------------------------------------------------------------------------
// Rng
// --------------------------------------------------------------------------

/// Worker threads for dense kernels; 0 restores the default.
void set_threads(int n);

/// Deterministic random stream. The engine (mt19937_64) is fully specified by
/// the standard; the distributions are implemented here because the standard
/// library ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Unbiased integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound);
  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// --------------------------------------------------------------------------
// ParamStore
// --------------------------------------------------------------------------

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;
  };

  /// Registers a tensor. Non-trainable entries (fixed buffers) still carry a
  /// gradient buffer but are skipped by optimisers and the gradient checker.
  Matrix& add(const std::string& name, Matrix init, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Matrix& value(const std::string& name) { return entry(name).value; }
  const Matrix& value(const std::string& name) const { return entry(name).value; }
  Matrix& grad(const std::string& name) { return entry(name).grad; }
  const Matrix& grad(const std::string& name) const { return entry(name).grad; }

  void zero_grads();
  std::size_t size() const { return entries_.size(); }
  std::size_t num_scalars(bool trainable_only = true) const;

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  std::deque<Entry> entries_;  // deque: references stay valid on growth
  std::unordered_map<std::string, std::size_t> index_;
};

// --------------------------------------------------------------------------
// Graph (reverse-mode tape)
// --------------------------------------------------------------------------

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a ParamStore entry; backward accumulates into its grad.
  Var param(ParamStore& store, const std::string& name);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() target w.r.t. v (empty if untouched).
  const Matrix& grad(Var v) const { return nodes_.at(v.id).grad; }
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable input.
  void backward(Var loss);

  // x[n,in] * W[out,in]^T + b[1,out]
  Var affine(Var x, Var w, Var b);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var x, double s);
  /// sa * a + sb * b
  Var lincomb(Var a, double sa, Var b, double sb);
  /// Adds a constant row vector to every row.
  Var add_row(Var x, const RowVector& row);
  Var concat_cols(Var a, Var b);
  Var gather_rows(Var x, std::vector<int> rows);
  /// Each row divided by its L2 norm; throws DegenerateVectorError below 1e-12.
  Var normalize_rows(Var x);
  // a[n,k] * b[m,k]^T
  Var matmul_nt(Var a, Var b);
  /// Row-wise dot product, [n,1].
  Var row_dot(Var a, Var b);
  Var mean(Var x);
  /// Mean over rows of weights[i] * CE(scores.row(i) / tau, targets[i]); [1,1].
  /// Empty weights means all ones.
  Var softmax_ce(Var scores, std::vector<int> targets, double tau,
                 std::vector<double> weights = {});
  /// Sum of coeffs[k] * terms[k], each term [1,1].
  Var weighted_sum(std::span<const Var> terms, std::span<const double> coeffs);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(const Matrix&)> backward;
  };

  Var push(Matrix value, bool requires_grad);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void accumulate(Var v, const Matrix& delta);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& delta);

  std::vector<Node> nodes_;
};

// --------------------------------------------------------------------------
// MLP
// --------------------------------------------------------------------------

/// Layer widths {d_in, hidden..., d_out}. ReLU between layers, none after the
/// last.
struct MlpSpec {
  std::vector<int> widths;

  int in() const { return widths.front(); }
  int out() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
  void validate() const;

  /// `layers` affine maps d_in -> hidden -> ... -> d_out, hidden width = d_out.
  static MlpSpec uniform(int d_in, int d_out, int layers);
};

class Mlp {
 public:
  Mlp(MlpSpec spec, std::string prefix);

  /// Weights ~ Uniform(+-1/sqrt(fan_in)), biases 0.
  void init(ParamStore& store, Rng& rng) const;
  Var forward(Graph& g, ParamStore& store, Var x) const;

  const MlpSpec& spec() const { return spec_; }
  std::string weight_name(int layer) const;
  std::string bias_name(int layer) const;

 private:
  MlpSpec spec_;
  std::string prefix_;
};

/// Single-vector evaluation without the tape.
Vector mlp_forward(const ParamStore& store, const MlpSpec& spec, const std::string& prefix,
                   const Vector& x);

double cosine(const Vector& u, const Vector& v);

/// -log softmax(scores / tau)[gt], computed with max subtraction.
double softmax_ce(std::span<const double> scores, int gt_index, double tau);

// --------------------------------------------------------------------------
// Gradient checking
// --------------------------------------------------------------------------

/// Returns the loss; when `with_grad` it must also accumulate d(loss)/d(param)
/// into the store's gradient buffers (which the checker zeroes beforehand).
using LossFn = std::function<double(ParamStore&, bool with_grad)>;

struct GradCheckOptions {
  double rel_tol = 1e-4;
  double step = 1e-5;
  int coords_per_param = 20;
  std::uint64_t seed = 0;
  /// Retries at nudged points before a coordinate counts as failed; a ReLU
  /// kink inside the FD stencil fails once, a wrong gradient fails always.
  int nudge_attempts = 3;
  double nudge_scale = 1e-3;
  /// Restrict to these parameter names (empty = all trainable).
  std::vector<std::string> only;
};

struct GradCheckFailure {
  std::string param;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  int checked = 0;
  int nudged = 0;
  double max_rel_error = 0.0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty(); }
};

GradCheckReport grad_check(const LossFn& loss, ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace defa
