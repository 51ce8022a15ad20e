// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is two-dimensional; vectors are 1 x n or n x 1.
// Graph nodes are reference counted and freed once the last tensor that
// can reach them goes away.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace g2v::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Byte counters for every matrix owned by a graph node.
class MemoryCounter {
 public:
  static void allocate(std::size_t bytes);
  static void release(std::size_t bytes) noexcept;
  static std::size_t current() noexcept;
  static std::size_t peak() noexcept;
  static void reset_peak() noexcept;
  /// 0 disables the budget. Exceeding it throws MemoryExhausted.
  static void set_budget(std::size_t bytes) noexcept;
  static std::size_t budget() noexcept;
};

/// While alive, ops record no backward closures (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active() noexcept;

 private:
  bool previous_;
};

struct Node {
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::size_t counted_bytes = 0;

  Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;
  ~Node();

  void accumulate(const Matrix& g);
  void track_memory();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor leaf(Matrix value, bool requires_grad);
  static Tensor scalar(double v);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Seeds d(this)/d(this) = 1 (this must be 1 x 1) and runs the reverse sweep.
  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an op result. `parents` that do not require gradients are dropped
/// from the graph; `bw` runs only when some parent requires them.
Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> bw);

// ---- elementwise and broadcast arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor add_row(const Tensor& a, const Tensor& row);  // row: 1 x cols
Tensor mul_row(const Tensor& a, const Tensor& row);
Tensor add_col(const Tensor& a, const Tensor& col);  // col: rows x 1
Tensor mul_col(const Tensor& a, const Tensor& col);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- nonlinearities ----
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);       // 1 x 1
Tensor mean(const Tensor& a);      // 1 x 1
Tensor row_sum(const Tensor& a);   // rows x 1
Tensor col_sum(const Tensor& a);   // 1 x cols
Tensor col_mean(const Tensor& a);  // 1 x cols

// ---- indexing and layout ----
Tensor gather_rows(const Tensor& a, std::span<const Index> idx);
/// out[idx[r]] += a[r]; out has `n_out` rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const Index> idx, Index n_out);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, Index start, Index n);
Tensor slice_rows(const Tensor& a, Index start, Index n);
/// Row-major reinterpretation; rows*cols must be preserved.
Tensor reshape(const Tensor& a, Index rows, Index cols);
/// Treats `a` as `blocks` stacked (r x c) blocks and transposes each one:
/// (blocks*r) x c  ->  (blocks*c) x r.
Tensor block_transpose(const Tensor& a, Index blocks);
/// Per-block a_b * b_b^T for `blocks` stacked row blocks of equal height.
Tensor block_matmul_nt(const Tensor& a, const Tensor& b, Index blocks);
/// Per-block p_b * v_b where p is (blocks*m) x m and v is (blocks*m) x k.
Tensor block_matmul(const Tensor& p, const Tensor& v, Index blocks);
/// Selects a[r, idx[r]] for every row; result rows x 1.
Tensor pick_per_row(const Tensor& a, std::span<const Index> idx);

// ---- fused row-wise ops ----
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor logsumexp_rows(const Tensor& a);  // rows x 1
/// (x - mean)/sqrt(var + eps) * gain + bias, statistics per row.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// sqrt(x^2 + y^2 + z^2) elementwise; the gradient at the origin is taken as 0.
Tensor vec_norm(const Tensor& x, const Tensor& y, const Tensor& z);

// ---- symmetric matrix functions ----
/// C^{-1/2} through an eigendecomposition with eigenvalues clamped to >= eps.
/// Throws NumericalError if C deviates from symmetry by more than 1e-8.
Tensor sym_inv_sqrt(const Tensor& c, double eps);
Matrix sym_inv_sqrt_value(const Matrix& c, double eps);

}  // namespace g2v::ad
