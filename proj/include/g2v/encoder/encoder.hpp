// SPDX-License-Identifier: Apache-2.0
//
// Equivariant graph-attention encoder mapping a conformation to per-atom
// scalar features x (N x d) and vector features v (3 blocks of N x d).
#pragma once

#include "g2v/ad/tensor.hpp"
#include "g2v/io/trajectory.hpp"
#include "g2v/nn/layers.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace g2v::encoder {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct EncoderConfig {
  std::uint32_t d = 64;
  std::uint32_t n_layers = 6;
  std::uint32_t n_heads = 8;
  std::uint32_t n_rbf = 64;
  double r_cut = 5.0;
  bool use_visnet_scalars = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Directed edges (i, j), i != j, with 0 < |r_i - r_j| <= r_cut, sorted by (i, j).
/// Messages flow from j into i.
struct NeighborList {
  std::vector<std::pair<Index, Index>> edges;
  std::vector<double> distances;
  std::vector<Eigen::Vector3d> unit;  // (r_i - r_j) / |r_i - r_j|

  std::size_t size() const { return edges.size(); }
};

/// Cell-list search; identical output to the brute-force scan.
NeighborList build_neighbor_list(const io::Frame& positions, double r_cut);
NeighborList build_neighbor_list_bruteforce(const io::Frame& positions, double r_cut);

double cosine_cutoff(double d, double r_cut);

struct RbfParams {
  Eigen::RowVectorXd means;
  Eigen::RowVectorXd betas;
};

/// Means equally spaced on [exp(-r_cut), 1]; betas (2/K (1 - exp(-r_cut)))^-2.
RbfParams default_rbf_params(std::uint32_t n_rbf, double r_cut);
Eigen::RowVectorXd erbf(double d, const RbfParams& params, double r_cut);

/// Dihedral-carrying edge scalars: u_ij points from i to j, v_i sums them,
/// w_ij is the rejection of v_i from u_ij.
struct GeometricScalars {
  std::vector<Eigen::Vector3d> u;   // per edge
  std::vector<Eigen::Vector3d> v;   // per atom
  std::vector<Eigen::Vector3d> w;   // per edge
  std::vector<double> dihedral;     // per edge, w_ij . w_ji
};

GeometricScalars visnet_geometric_scalars(const io::Frame& positions, const NeighborList& nbr);

struct AtomFeatures {
  Tensor scalar;       // N x d
  nn::Vec3 vector;     // 3 x (N x d)
};

/// Constant per-edge inputs shared by every layer of one forward pass.
struct EdgeInputs {
  std::vector<Index> dst;  // i (receiver)
  std::vector<Index> src;  // j (sender)
  Tensor rbf;              // E x K, differentiable in the rbf parameters
  Tensor cutoff;           // E x 1
  std::array<Tensor, 3> rhat;  // E x 1 each
  std::optional<Tensor> dihedral;  // E x 1
  Index n_atoms = 0;
};

struct LayerDelta {
  Tensor dx;
  nn::Vec3 dv;
};

class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  EdgeInputs edge_inputs(const io::Frame& positions, const NeighborList& nbr) const;
  Tensor embed(std::span<const int> z, const EdgeInputs& edges) const;
  LayerDelta layer_delta(std::size_t layer, const Tensor& x, const nn::Vec3& v, const EdgeInputs& edges) const;
  AtomFeatures forward(const io::Frame& positions, std::span<const int> z) const;

 private:
  struct Layer {
    Tensor ln_gain, ln_bias;
    nn::Linear q, k, v, dk, dv, out, u1, u2, u3;
    Tensor dihedral_proj;  // 1 x K, only with ViSNet scalars
  };

  EncoderConfig cfg_;
  nn::ParameterSet params_;
  Tensor rbf_means_, rbf_betas_;
  Tensor embedding_, neighbor_embedding_;
  nn::Linear neighbor_rbf_, neighbor_combine_;
  std::vector<Layer> layers_;
  Matrix head_sum_;     // d x H indicator
  Matrix head_expand_;  // H x d indicator
};

}  // namespace g2v::encoder
