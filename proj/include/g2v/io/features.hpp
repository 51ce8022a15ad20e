// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/io/topology.hpp"
#include "g2v/io/trajectory.hpp"

#include <Eigen/Dense>

#include <vector>

namespace g2v::io {

/// Signed dihedral p0-p1-p2-p3 in (-pi, pi], atan2 construction.
double dihedral(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& p2,
                const Eigen::Vector3d& p3);

/// Pairwise distances between CA atoms, (i, j) with i < j in lexicographic order.
std::vector<double> ca_pair_distances(const Frame& frame, const Topology& top);

/// (cos, sin) of every dihedral along consecutive CA quadruples.
std::vector<double> ca_dihedral_features(const Frame& frame, const Topology& top);

/// Row-major F x D matrix of per-frame features.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

FeatureMatrix ca_distance_matrix(const Trajectory& traj, const Topology& top);
FeatureMatrix ca_dihedral_matrix(const Trajectory& traj, const Topology& top);

}  // namespace g2v::io
