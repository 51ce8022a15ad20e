// SPDX-License-Identifier: Apache-2.0
#include "g2v/ad/tensor.hpp"
#include "g2v/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>

namespace g2v::ad {

namespace {

void push(const Tensor& t, const Matrix& g) {
  if (t.requires_grad()) t.node()->accumulate(g);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

double silu_value(double x) { return x / (1.0 + std::exp(-x)); }
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [a, b](Node& n) {
    push(a, n.grad);
    push(b, n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [a, b](Node& n) {
    push(a, n.grad);
    push(b, -n.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Node& n) {
    push(a, n.grad.cwiseProduct(b.value()));
    push(b, n.grad.cwiseProduct(a.value()));
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a}, [a, s](Node& n) { push(a, n.grad * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return make_result(a.value().array() + s, {a}, [a](Node& n) { push(a, n.grad); });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [a, row](Node& n) {
    push(a, n.grad);
    push(row, n.grad.colwise().sum());
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: shape mismatch");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [a, row](Node& n) {
    if (a.requires_grad()) {
      Matrix g = n.grad.array().rowwise() * row.value().row(0).array();
      push(a, g);
    }
    if (row.requires_grad()) push(row, n.grad.cwiseProduct(a.value()).colwise().sum());
  });
}

Tensor add_col(const Tensor& a, const Tensor& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("add_col: shape mismatch");
  Matrix out = a.value().colwise() + col.value().col(0);
  return make_result(std::move(out), {a, col}, [a, col](Node& n) {
    push(a, n.grad);
    push(col, n.grad.rowwise().sum());
  });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_result(std::move(out), {a, col}, [a, col](Node& n) {
    if (a.requires_grad()) {
      Matrix g = n.grad.array().colwise() * col.value().col(0).array();
      push(a, g);
    }
    if (col.requires_grad()) push(col, n.grad.cwiseProduct(a.value()).rowwise().sum());
  });
}

Tensor silu(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) { return silu_value(x); });
  return make_result(std::move(out), {a}, [a](Node& n) {
    Matrix d = a.value().unaryExpr([](double x) {
      const double s = sigmoid_value(x);
      return s * (1.0 + x * (1.0 - s));
    });
    push(a, n.grad.cwiseProduct(d));
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double x) { return sigmoid_value(x); });
  Matrix s = out;
  return make_result(std::move(out), {a}, [a, s = std::move(s)](Node& n) {
    push(a, n.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp().matrix();
  Matrix e = out;
  return make_result(std::move(out), {a}, [a, e = std::move(e)](Node& n) { push(a, n.grad.cwiseProduct(e)); });
}

Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log().matrix();
  return make_result(std::move(out), {a},
                     [a](Node& n) { push(a, n.grad.cwiseQuotient(a.value())); });
}

Tensor square(const Tensor& a) {
  return make_result(a.value().array().square().matrix(), {a},
                     [a](Node& n) { push(a, 2.0 * n.grad.cwiseProduct(a.value())); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [a, b](Node& n) {
    if (a.requires_grad()) push(a, n.grad * b.value().transpose());
    if (b.requires_grad()) push(b, a.value().transpose() * n.grad);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a}, [a](Node& n) { push(a, n.grad.transpose()); });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a},
                     [a](Node& n) { push(a, Matrix::Constant(a.rows(), a.cols(), n.grad(0, 0))); });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Tensor row_sum(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  return make_result(std::move(out), {a}, [a](Node& n) {
    Matrix g = n.grad.col(0).replicate(1, a.cols());
    push(a, g);
  });
}

Tensor col_sum(const Tensor& a) {
  Matrix out = a.value().colwise().sum();
  return make_result(std::move(out), {a}, [a](Node& n) {
    Matrix g = n.grad.row(0).replicate(a.rows(), 1);
    push(a, g);
  });
}

Tensor col_mean(const Tensor& a) { return scale(col_sum(a), 1.0 / static_cast<double>(a.rows())); }

Tensor gather_rows(const Tensor& a, std::span<const Index> idx) {
  std::vector<Index> rows(idx.begin(), idx.end());
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = a.value().row(rows[r]);
  }
  return make_result(std::move(out), {a}, [a, rows = std::move(rows)](Node& n) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) g.row(rows[r]) += n.grad.row(static_cast<Index>(r));
    push(a, g);
  });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const Index> idx, Index n_out) {
  if (static_cast<Index>(idx.size()) != a.rows()) throw std::invalid_argument("scatter_add_rows: index count");
  std::vector<Index> rows(idx.begin(), idx.end());
  Matrix out = Matrix::Zero(n_out, a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= n_out) throw std::out_of_range("scatter_add_rows: index out of range");
    out.row(rows[r]) += a.value().row(static_cast<Index>(r));
  }
  return make_result(std::move(out), {a}, [a, rows = std::move(rows)](Node& n) {
    Matrix g(a.rows(), a.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) g.row(static_cast<Index>(r)) = n.grad.row(rows[r]);
    push(a, g);
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result(std::move(out), parts, [parts](Node& n) {
    Index c0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) push(p, n.grad.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result(std::move(out), parts, [parts](Node& n) {
    Index r0 = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) push(p, n.grad.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index n_cols) {
  if (start < 0 || start + n_cols > a.cols()) throw std::out_of_range("slice_cols: range");
  Matrix out = a.value().middleCols(start, n_cols);
  return make_result(std::move(out), {a}, [a, start, n_cols](Node& n) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleCols(start, n_cols) = n.grad;
    push(a, g);
  });
}

Tensor slice_rows(const Tensor& a, Index start, Index n_rows) {
  if (start < 0 || start + n_rows > a.rows()) throw std::out_of_range("slice_rows: range");
  Matrix out = a.value().middleRows(start, n_rows);
  return make_result(std::move(out), {a}, [a, start, n_rows](Node& n) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleRows(start, n_rows) = n.grad;
    push(a, g);
  });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return make_result(std::move(out), {a}, [a](Node& n) {
    Matrix g = Eigen::Map<const Matrix>(n.grad.data(), a.rows(), a.cols());
    push(a, g);
  });
}

namespace {
Matrix block_transpose_value(const Matrix& a, Index blocks) {
  const Index r = a.rows() / blocks;
  const Index c = a.cols();
  Matrix out(blocks * c, r);
  for (Index b = 0; b < blocks; ++b) out.middleRows(b * c, c) = a.middleRows(b * r, r).transpose();
  return out;
}
}  // namespace

Tensor block_transpose(const Tensor& a, Index blocks) {
  if (blocks <= 0 || a.rows() % blocks != 0) throw std::invalid_argument("block_transpose: rows not divisible");
  return make_result(block_transpose_value(a.value(), blocks), {a},
                     [a, blocks](Node& n) { push(a, block_transpose_value(n.grad, blocks)); });
}

Tensor block_matmul_nt(const Tensor& a, const Tensor& b, Index blocks) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() % blocks != 0) {
    throw std::invalid_argument("block_matmul_nt: shape mismatch");
  }
  const Index m = a.rows() / blocks;
  Matrix out(a.rows(), m);
  for (Index k = 0; k < blocks; ++k) {
    out.middleRows(k * m, m).noalias() = a.value().middleRows(k * m, m) * b.value().middleRows(k * m, m).transpose();
  }
  return make_result(std::move(out), {a, b}, [a, b, m, blocks](Node& n) {
    if (a.requires_grad()) {
      Matrix g(a.rows(), a.cols());
      for (Index k = 0; k < blocks; ++k) {
        g.middleRows(k * m, m).noalias() = n.grad.middleRows(k * m, m) * b.value().middleRows(k * m, m);
      }
      push(a, g);
    }
    if (b.requires_grad()) {
      Matrix g(b.rows(), b.cols());
      for (Index k = 0; k < blocks; ++k) {
        g.middleRows(k * m, m).noalias() =
            n.grad.middleRows(k * m, m).transpose() * a.value().middleRows(k * m, m);
      }
      push(b, g);
    }
  });
}

Tensor block_matmul(const Tensor& p, const Tensor& v, Index blocks) {
  const Index m = p.cols();
  if (p.rows() != blocks * m || v.rows() != p.rows()) throw std::invalid_argument("block_matmul: shape mismatch");
  Matrix out(v.rows(), v.cols());
  for (Index k = 0; k < blocks; ++k) {
    out.middleRows(k * m, m).noalias() = p.value().middleRows(k * m, m) * v.value().middleRows(k * m, m);
  }
  return make_result(std::move(out), {p, v}, [p, v, m, blocks](Node& n) {
    if (p.requires_grad()) {
      Matrix g(p.rows(), p.cols());
      for (Index k = 0; k < blocks; ++k) {
        g.middleRows(k * m, m).noalias() =
            n.grad.middleRows(k * m, m) * v.value().middleRows(k * m, m).transpose();
      }
      push(p, g);
    }
    if (v.requires_grad()) {
      Matrix g(v.rows(), v.cols());
      for (Index k = 0; k < blocks; ++k) {
        g.middleRows(k * m, m).noalias() =
            p.value().middleRows(k * m, m).transpose() * n.grad.middleRows(k * m, m);
      }
      push(v, g);
    }
  });
}

Tensor pick_per_row(const Tensor& a, std::span<const Index> idx) {
  if (static_cast<Index>(idx.size()) != a.rows()) throw std::invalid_argument("pick_per_row: index count");
  std::vector<Index> cols(idx.begin(), idx.end());
  Matrix out(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    if (cols[r] < 0 || cols[r] >= a.cols()) throw std::out_of_range("pick_per_row: column out of range");
    out(r, 0) = a.value()(r, cols[r]);
  }
  return make_result(std::move(out), {a}, [a, cols = std::move(cols)](Node& n) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) g(r, cols[r]) = n.grad(r, 0);
    push(a, g);
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out.row(r) = (a.value().row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  Matrix s = out;
  return make_result(std::move(out), {a}, [a, s = std::move(s)](Node& n) {
    Matrix g(s.rows(), s.cols());
    for (Index r = 0; r < s.rows(); ++r) {
      const double dot = n.grad.row(r).dot(s.row(r));
      g.row(r) = s.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
    }
    push(a, g);
  });
}

Tensor log_softmax_rows(const Tensor& a) {
  Matrix out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    const double lse = mx + std::log((a.value().row(r).array() - mx).exp().sum());
    out.row(r) = (a.value().row(r).array() - lse).matrix();
  }
  Matrix ls = out;
  return make_result(std::move(out), {a}, [a, ls = std::move(ls)](Node& n) {
    Matrix g(ls.rows(), ls.cols());
    for (Index r = 0; r < ls.rows(); ++r) {
      const double gs = n.grad.row(r).sum();
      g.row(r) = n.grad.row(r) - (ls.row(r).array().exp() * gs).matrix();
    }
    push(a, g);
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  Matrix out(a.rows(), 1);
  for (Index r = 0; r < a.rows(); ++r) {
    const double mx = a.value().row(r).maxCoeff();
    out(r, 0) = mx + std::log((a.value().row(r).array() - mx).exp().sum());
  }
  Matrix lse = out;
  return make_result(std::move(out), {a}, [a, lse = std::move(lse)](Node& n) {
    Matrix g(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) {
      g.row(r) = ((a.value().row(r).array() - lse(r, 0)).exp() * n.grad(r, 0)).matrix();
    }
    push(a, g);
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  if (gain.cols() != cols || bias.cols() != cols) throw std::invalid_argument("layer_norm_rows: shape");
  Matrix xhat(rows, cols);
  Matrix inv_std(rows, 1);
  for (Index r = 0; r < rows; ++r) {
    const double mu = x.value().row(r).mean();
    const auto centered = (x.value().row(r).array() - mu).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(cols);
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r, 0);
  }
  Matrix out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return make_result(std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), cols](Node& n) {
                       if (gain.requires_grad()) push(gain, n.grad.cwiseProduct(xhat).colwise().sum());
                       if (bias.requires_grad()) push(bias, n.grad.colwise().sum());
                       if (x.requires_grad()) {
                         Matrix gx(xhat.rows(), cols);
                         const double inv_n = 1.0 / static_cast<double>(cols);
                         for (Index r = 0; r < xhat.rows(); ++r) {
                           const Eigen::RowVectorXd gh =
                               n.grad.row(r).array() * gain.value().row(0).array();
                           const double m1 = gh.sum() * inv_n;
                           const double m2 = gh.dot(xhat.row(r)) * inv_n;
                           gx.row(r) = inv_std(r, 0) *
                                       (gh.array() - m1 - xhat.row(r).array() * m2).matrix();
                         }
                         push(x, gx);
                       }
                     });
}

Tensor vec_norm(const Tensor& x, const Tensor& y, const Tensor& z) {
  check_same_shape(x, y, "vec_norm");
  check_same_shape(x, z, "vec_norm");
  Matrix out = (x.value().array().square() + y.value().array().square() + z.value().array().square()).sqrt().matrix();
  Matrix nrm = out;
  return make_result(std::move(out), {x, y, z}, [x, y, z, nrm = std::move(nrm)](Node& n) {
    Matrix w = n.grad;
    for (Index i = 0; i < w.size(); ++i) {
      const double d = nrm.data()[i];
      w.data()[i] = d > 0.0 ? w.data()[i] / d : 0.0;
    }
    if (x.requires_grad()) push(x, w.cwiseProduct(x.value()));
    if (y.requires_grad()) push(y, w.cwiseProduct(y.value()));
    if (z.requires_grad()) push(z, w.cwiseProduct(z.value()));
  });
}

namespace {

void check_symmetric(const Matrix& c) {
  if (c.rows() != c.cols()) throw NumericalError("sym_inv_sqrt: matrix is not square");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  const double asym = (c - c.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale) {
    throw NumericalError("sym_inv_sqrt: input deviates from symmetry by " + std::to_string(asym));
  }
}

struct InvSqrtParts {
  Matrix u;
  Eigen::VectorXd lambda;
  Eigen::VectorXd f;
  Eigen::VectorXd df;
  Matrix value;
};

InvSqrtParts inv_sqrt_parts(const Matrix& c, double eps) {
  check_symmetric(c);
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericalError("sym_inv_sqrt: eigendecomposition failed");
  InvSqrtParts p;
  p.u = es.eigenvectors();
  p.lambda = es.eigenvalues();
  const Index n = p.lambda.size();
  p.f.resize(n);
  p.df.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double l = p.lambda(i);
    if (!std::isfinite(l)) throw NumericalError("sym_inv_sqrt: non-finite eigenvalue");
    if (l > eps) {
      p.f(i) = 1.0 / std::sqrt(l);
      p.df(i) = -0.5 * p.f(i) / l;
    } else {
      p.f(i) = 1.0 / std::sqrt(eps);
      p.df(i) = 0.0;
    }
  }
  p.value = p.u * p.f.asDiagonal() * p.u.transpose();
  return p;
}

}  // namespace

Matrix sym_inv_sqrt_value(const Matrix& c, double eps) { return inv_sqrt_parts(c, eps).value; }

Tensor sym_inv_sqrt(const Tensor& c, double eps) {
  InvSqrtParts parts = inv_sqrt_parts(c.value(), eps);
  Matrix out = parts.value;
  return make_result(std::move(out), {c}, [c, parts = std::move(parts)](Node& n) {
    // Daleckii-Krein: dF = U (G o (U^T dC U)) U^T with divided differences G.
    const Index k = parts.lambda.size();
    Matrix gsym = 0.5 * (n.grad + n.grad.transpose());
    Matrix inner = parts.u.transpose() * gsym * parts.u;
    for (Index i = 0; i < k; ++i) {
      for (Index j = 0; j < k; ++j) {
        const double li = parts.lambda(i);
        const double lj = parts.lambda(j);
        const double gap = li - lj;
        const double tol = 1e-12 * std::max({1.0, std::abs(li), std::abs(lj)});
        const double g = std::abs(gap) > tol ? (parts.f(i) - parts.f(j)) / gap : 0.5 * (parts.df(i) + parts.df(j));
        inner(i, j) *= g;
      }
    }
    push(c, parts.u * inner * parts.u.transpose());
  });
}

}  // namespace g2v::ad
