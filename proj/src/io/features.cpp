// SPDX-License-Identifier: Apache-2.0
#include "g2v/io/features.hpp"

#include "g2v/error.hpp"

#include <cmath>

namespace g2v::io {

double dihedral(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3) {
  const Eigen::Vector3d b0 = p1 - p0;
  const Eigen::Vector3d b1 = p2 - p1;
  const Eigen::Vector3d b2 = p3 - p2;
  const Eigen::Vector3d n1 = b0.cross(b1);
  const Eigen::Vector3d n2 = b1.cross(b2);
  const double x = n1.dot(n2);
  const double y = b1.norm() * b0.dot(n2);
  double phi = std::atan2(y, x);
  if (phi <= -M_PI) phi = M_PI;
  return phi;
}

std::vector<double> ca_pair_distances(const Frame& frame, const Topology& top) {
  const auto ca = ca_indices(top);
  if (ca.size() < 2) throw DataError("fewer than 2 CA atoms in topology");
  std::vector<double> out;
  out.reserve(ca.size() * (ca.size() - 1) / 2);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    for (std::size_t j = i + 1; j < ca.size(); ++j) {
      out.push_back((frame.row(static_cast<Eigen::Index>(ca[i])) - frame.row(static_cast<Eigen::Index>(ca[j]))).norm());
    }
  }
  return out;
}

std::vector<double> ca_dihedral_features(const Frame& frame, const Topology& top) {
  const auto ca = ca_indices(top);
  if (ca.size() < 4) throw DataError("fewer than 4 CA atoms for dihedral features");
  std::vector<double> out;
  for (std::size_t i = 0; i + 3 < ca.size(); ++i) {
    auto p = [&](std::size_t k) -> Eigen::Vector3d {
      return frame.row(static_cast<Eigen::Index>(ca[i + k])).transpose();
    };
    const double phi = dihedral(p(0), p(1), p(2), p(3));
    out.push_back(std::cos(phi));
    out.push_back(std::sin(phi));
  }
  return out;
}

namespace {
template <typename Fn>
FeatureMatrix per_frame(const Trajectory& traj, Fn fn) {
  FeatureMatrix out;
  for (std::size_t t = 0; t < traj.frame_count(); ++t) {
    const auto row = fn(traj.frames[t]);
    if (t == 0) out.resize(static_cast<Eigen::Index>(traj.frame_count()), static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = row[k];
  }
  return out;
}
}  // namespace

FeatureMatrix ca_distance_matrix(const Trajectory& traj, const Topology& top) {
  return per_frame(traj, [&](const Frame& f) { return ca_pair_distances(f, top); });
}

FeatureMatrix ca_dihedral_matrix(const Trajectory& traj, const Topology& top) {
  return per_frame(traj, [&](const Frame& f) { return ca_dihedral_features(f, top); });
}

}  // namespace g2v::io
