// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "g2v/io/topology.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace g2v::io {

/// N x 3 coordinates in Angstrom.
using Frame = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct Trajectory {
  std::vector<Frame> frames;
  std::vector<std::string> element_symbols;  // from the first frame
  double frame_interval = 0.0;                // ns between saved frames

  std::size_t frame_count() const { return frames.size(); }
  std::size_t atom_count() const { return frames.empty() ? 0 : static_cast<std::size_t>(frames.front().rows()); }
  void validate() const;
};

Trajectory load_xyz_trajectory(const std::filesystem::path& path, double frame_interval);
Trajectory parse_xyz_trajectory(const std::string& text, double frame_interval);
void write_xyz_trajectory(const Trajectory& traj, const std::filesystem::path& path);

/// Rows `sel.indices` of a frame.
Frame select_atoms(const Frame& frame, const AtomSelection& sel);

/// Every `stride`-th frame; frame_interval scales accordingly.
Trajectory stride_frames(const Trajectory& traj, std::size_t stride);

const char* element_symbol(int atomic_number);

}  // namespace g2v::io
