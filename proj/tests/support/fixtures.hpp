// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for unit and acceptance tests: random rigid motions, random
// atom clouds, and small comparison helpers.
#pragma once

#include "g2v/encoder/encoder.hpp"
#include "g2v/heads/heads.hpp"
#include "g2v/io/trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <random>
#include <vector>

namespace g2v::testing {

using ad::Index;
using ad::Matrix;
using Rng = std::mt19937_64;

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> g;
  Eigen::Matrix3d a;
  for (int i = 0; i < 9; ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
  Eigen::Matrix3d q = qr.householderQ();
  // fix column signs so the draw is Haar, then force det +1
  for (int c = 0; c < 3; ++c)
    if (qr.matrixQR()(c, c) < 0) q.col(c) *= -1.0;
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

inline Eigen::RowVector3d random_translation(Rng& rng, double scale = 10.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

/// x' = x R^T + t, row-wise.
inline io::Frame move(const io::Frame& x, const Eigen::Matrix3d& r, const Eigen::RowVector3d& t) {
  io::Frame out = x * r.transpose();
  out.rowwise() += t;
  return out;
}

struct System {
  io::Frame x;
  std::vector<int> z;
};

/// n atoms, pairwise distances >= 0.9 A, density high enough for dense neighbor graphs.
inline System random_system(Rng& rng, std::size_t n) {
  const double side = 1.8 * std::cbrt(static_cast<double>(n)) + 1.0;
  std::uniform_real_distribution<double> u(0.0, side);
  std::uniform_int_distribution<int> zpick(1, 9);
  System s;
  s.x.resize(static_cast<Index>(n), 3);
  std::size_t placed = 0;
  while (placed < n) {
    const Eigen::RowVector3d p(u(rng), u(rng), u(rng));
    bool ok = true;
    for (std::size_t k = 0; k < placed && ok; ++k) ok = (s.x.row(static_cast<Index>(k)) - p).norm() >= 0.9;
    if (!ok) continue;
    s.x.row(static_cast<Index>(placed++)) = p;
    s.z.push_back(zpick(rng));
  }
  return s;
}

/// Axis blocks rotated: v'_a = sum_b R_ab v_b.
inline std::array<Matrix, 3> rotate_blocks(const std::array<Matrix, 3>& v, const Eigen::Matrix3d& r) {
  std::array<Matrix, 3> out;
  for (int a = 0; a < 3; ++a) {
    out[a] = Matrix::Zero(v[0].rows(), v[0].cols());
    for (int b = 0; b < 3; ++b) out[a] += r(a, b) * v[b];
  }
  return out;
}

inline std::array<Matrix, 3> blocks(const nn::Vec3& v) { return {v[0].value(), v[1].value(), v[2].value()}; }

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

inline double rel_diff(const std::array<Matrix, 3>& a, const std::array<Matrix, 3>& b) {
  double num = 0.0, den = 0.0;
  for (int k = 0; k < 3; ++k) {
    num += (a[k] - b[k]).squaredNorm();
    den = std::max(den, std::max(a[k].squaredNorm(), b[k].squaredNorm()));
  }
  return den == 0.0 ? 0.0 : std::sqrt(num / den);
}

/// Flat lobe input for one sample built from raw token blocks.
inline Matrix flat_sample(const Matrix& scalar, const std::array<Matrix, 3>& vec) {
  encoder::AtomFeatures f;
  f.scalar = ad::Tensor::constant(scalar);
  for (std::size_t a = 0; a < 3; ++a) f.vector[a] = ad::Tensor::constant(vec[a]);
  return heads::flatten_tokens(f);
}

inline std::array<Matrix, 3> random_blocks(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> g;
  std::array<Matrix, 3> v;
  for (auto& m : v) m = Matrix::NullaryExpr(rows, cols, [&]() { return g(rng); });
  return v;
}

/// Contiguous partition of n atoms into m roughly equal tokens.
inline io::CoarseGrainPartition chunk_partition(std::size_t n, std::size_t m) {
  io::CoarseGrainPartition p;
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<std::size_t> sub;
    for (std::size_t i = k * n / m; i < (k + 1) * n / m; ++i) sub.push_back(i);
    p.subsets.push_back(sub);
    p.residue_of_subset.push_back(k);
  }
  return p;
}

/// Markov chain of labels drawn from transition matrix p.
inline std::vector<Index> simulate_chain(const Matrix& p, std::size_t steps, Rng& rng, Index start = 0) {
  std::vector<Index> s(steps);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Index cur = start;
  for (std::size_t t = 0; t < steps; ++t) {
    s[t] = cur;
    double r = u(rng), acc = 0.0;
    Index next = p.cols() - 1;
    for (Index j = 0; j < p.cols(); ++j) {
      acc += p(cur, j);
      if (r < acc) {
        next = j;
        break;
      }
    }
    cur = next;
  }
  return s;
}

}  // namespace g2v::testing
