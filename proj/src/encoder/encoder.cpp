// SPDX-License-Identifier: Apache-2.0
#include "g2v/encoder/encoder.hpp"

#include "g2v/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace g2v::encoder {

namespace {

constexpr int kMaxElement = 100;

void check_positions(const io::Frame& positions, double r_cut) {
  if (!(r_cut > 0.0)) throw ConfigError("r_cut must be positive");
  if (!positions.allFinite()) throw DataError("non-finite coordinate");
}

// Both searches funnel every candidate pair through here so they agree bit for bit.
void finalize(const io::Frame& x, std::vector<std::vector<Index>>& candidates, double r_cut, NeighborList& out) {
  for (Index i = 0; i < static_cast<Index>(candidates.size()); ++i) {
    auto& js = candidates[i];
    std::sort(js.begin(), js.end());
    for (Index j : js) {
      const Eigen::Vector3d diff = (x.row(i) - x.row(j)).transpose();
      const double d = diff.norm();
      if (d == 0.0) throw DataError("degenerate pair: atoms " + std::to_string(i) + " and " + std::to_string(j));
      if (d > r_cut) continue;
      out.edges.emplace_back(i, j);
      out.distances.push_back(d);
      out.unit.push_back(diff / d);
    }
  }
}

Tensor column(const std::vector<double>& values) {
  Matrix m(static_cast<Index>(values.size()), 1);
  for (std::size_t e = 0; e < values.size(); ++e) m(static_cast<Index>(e), 0) = values[e];
  return Tensor::constant(std::move(m));
}

}  // namespace

void EncoderConfig::validate() const {
  if (d == 0) throw ConfigError("encoder hidden size must be positive");
  if (n_heads == 0 || d % n_heads != 0) throw ConfigError("encoder hidden size must be divisible by n_heads");
  if (n_rbf == 0) throw ConfigError("n_rbf must be positive");
  if (!(r_cut > 0.0)) throw ConfigError("r_cut must be positive");
}

NeighborList build_neighbor_list_bruteforce(const io::Frame& positions, double r_cut) {
  check_positions(positions, r_cut);
  const Index n = positions.rows();
  std::vector<std::vector<Index>> candidates(n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) candidates[i].push_back(j);
  NeighborList out;
  finalize(positions, candidates, r_cut, out);
  return out;
}

NeighborList build_neighbor_list(const io::Frame& positions, double r_cut) {
  check_positions(positions, r_cut);
  const Index n = positions.rows();
  if (n == 0) return {};
  const Eigen::RowVector3d lo = positions.colwise().minCoeff();
  auto cell_of = [&](Index i) {
    std::array<long long, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = static_cast<long long>(std::floor((positions(i, k) - lo[k]) / r_cut));
    return c;
  };
  auto key = [](long long a, long long b, long long c) { return (a * 1'000'003LL + b) * 1'000'033LL + c; };

  std::unordered_map<long long, std::vector<Index>> cells;
  std::vector<std::array<long long, 3>> cell(n);
  for (Index i = 0; i < n; ++i) {
    cell[i] = cell_of(i);
    cells[key(cell[i][0], cell[i][1], cell[i][2])].push_back(i);
  }

  std::vector<std::vector<Index>> candidates(n);
  for (Index i = 0; i < n; ++i) {
    for (long long a = -1; a <= 1; ++a)
      for (long long b = -1; b <= 1; ++b)
        for (long long c = -1; c <= 1; ++c) {
          auto it = cells.find(key(cell[i][0] + a, cell[i][1] + b, cell[i][2] + c));
          if (it == cells.end()) continue;
          for (Index j : it->second)
            if (j != i) candidates[i].push_back(j);
        }
  }
  NeighborList out;
  finalize(positions, candidates, r_cut, out);
  return out;
}

double cosine_cutoff(double d, double r_cut) {
  if (d >= r_cut) return 0.0;
  return 0.5 * (std::cos(M_PI * d / r_cut) + 1.0);
}

RbfParams default_rbf_params(std::uint32_t n_rbf, double r_cut) {
  RbfParams p;
  const double start = std::exp(-r_cut);
  p.means.resize(n_rbf);
  for (std::uint32_t k = 0; k < n_rbf; ++k)
    p.means[k] = n_rbf == 1 ? start : start + (1.0 - start) * k / (n_rbf - 1.0);
  const double width = 2.0 / n_rbf * (1.0 - start);
  p.betas = Eigen::RowVectorXd::Constant(n_rbf, 1.0 / (width * width));
  return p;
}

Eigen::RowVectorXd erbf(double d, const RbfParams& params, double r_cut) {
  const double e = std::exp(-d);
  Eigen::RowVectorXd out(params.means.size());
  for (Index k = 0; k < out.size(); ++k) {
    const double diff = e - params.means[k];
    out[k] = cosine_cutoff(d, r_cut) * std::exp(-params.betas[k] * diff * diff);
  }
  return out;
}

GeometricScalars visnet_geometric_scalars(const io::Frame& positions, const NeighborList& nbr) {
  const Index n = positions.rows();
  const std::size_t e_count = nbr.size();
  GeometricScalars g;
  g.u.resize(e_count);
  g.v.assign(n, Eigen::Vector3d::Zero());
  g.w.resize(e_count);
  g.dihedral.assign(e_count, 0.0);

  std::unordered_map<long long, std::size_t> edge_of;
  for (std::size_t e = 0; e < e_count; ++e) {
    g.u[e] = -nbr.unit[e];
    g.v[nbr.edges[e].first] += g.u[e];
    edge_of[nbr.edges[e].first * n + nbr.edges[e].second] = e;
  }
  for (std::size_t e = 0; e < e_count; ++e) {
    const Eigen::Vector3d& vi = g.v[nbr.edges[e].first];
    g.w[e] = vi - vi.dot(g.u[e]) * g.u[e];
  }
  for (std::size_t e = 0; e < e_count; ++e) {
    const auto [i, j] = nbr.edges[e];
    auto it = edge_of.find(j * n + i);
    if (it != edge_of.end()) g.dihedral[e] = g.w[e].dot(g.w[it->second]);
  }
  return g;
}

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  const Index d = cfg_.d;
  const Index k = cfg_.n_rbf;
  const Index h = cfg_.n_heads;

  const RbfParams rbf = default_rbf_params(cfg_.n_rbf, cfg_.r_cut);
  rbf_means_ = params_.add("encoder.rbf.means", rbf.means);
  rbf_betas_ = params_.add("encoder.rbf.betas", rbf.betas);
  embedding_ = params_.add("encoder.embedding", nn::gaussian(kMaxElement, d, 1.0, rng));
  neighbor_embedding_ = params_.add("encoder.neighbor.embedding", nn::gaussian(kMaxElement, d, 1.0, rng));
  neighbor_rbf_ = nn::Linear(params_, "encoder.neighbor.rbf", k, d, rng, false);
  neighbor_combine_ = nn::Linear(params_, "encoder.neighbor.combine", d, d, rng, false);

  for (std::uint32_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    Layer layer;
    layer.ln_gain = params_.add(p + "ln.gain", Matrix::Ones(1, d));
    layer.ln_bias = params_.add(p + "ln.bias", Matrix::Zero(1, d));
    layer.q = nn::Linear(params_, p + "q", d, d, rng);
    layer.k = nn::Linear(params_, p + "k", d, d, rng);
    layer.v = nn::Linear(params_, p + "v", d, 3 * d, rng);
    layer.dk = nn::Linear(params_, p + "dk", k, d, rng);
    layer.dv = nn::Linear(params_, p + "dv", k, 3 * d, rng);
    layer.out = nn::Linear(params_, p + "out", d, 3 * d, rng);
    layer.u1 = nn::Linear(params_, p + "u1", d, d, rng, false);
    layer.u2 = nn::Linear(params_, p + "u2", d, d, rng, false);
    layer.u3 = nn::Linear(params_, p + "u3", d, d, rng, false);
    if (cfg_.use_visnet_scalars) layer.dihedral_proj = params_.add(p + "dihedral", nn::gaussian(1, k, 0.1, rng));
    layers_.push_back(std::move(layer));
  }

  head_sum_ = Matrix::Zero(d, h);
  const Index per_head = d / h;
  for (Index c = 0; c < d; ++c) head_sum_(c, c / per_head) = 1.0;
  head_expand_ = head_sum_.transpose();
}

EdgeInputs Encoder::edge_inputs(const io::Frame& positions, const NeighborList& nbr) const {
  const Index e_count = static_cast<Index>(nbr.size());
  const Index k = cfg_.n_rbf;
  EdgeInputs in;
  in.n_atoms = positions.rows();
  in.dst.resize(e_count);
  in.src.resize(e_count);
  Matrix expd(e_count, k);
  std::vector<double> phi(e_count);
  std::array<std::vector<double>, 3> rhat;
  for (auto& r : rhat) r.resize(e_count);
  for (Index e = 0; e < e_count; ++e) {
    in.dst[e] = nbr.edges[e].first;
    in.src[e] = nbr.edges[e].second;
    expd.row(e).setConstant(std::exp(-nbr.distances[e]));
    phi[e] = cosine_cutoff(nbr.distances[e], cfg_.r_cut);
    for (int a = 0; a < 3; ++a) rhat[a][e] = nbr.unit[e][a];
  }
  in.cutoff = column(phi);
  for (int a = 0; a < 3; ++a) in.rhat[a] = column(rhat[a]);

  const Tensor diff = ad::add_row(Tensor::constant(std::move(expd)), ad::neg(rbf_means_));
  const Tensor gauss = ad::exp(ad::neg(ad::mul_row(ad::square(diff), rbf_betas_)));
  // far tails underflow to subnormals, which stall the matrix kernels
  const Matrix keep = (gauss.value().array() > 1e-150).cast<double>();
  in.rbf = ad::mul_col(ad::mul(gauss, Tensor::constant(keep)), in.cutoff);

  if (cfg_.use_visnet_scalars) in.dihedral = column(visnet_geometric_scalars(positions, nbr).dihedral);
  return in;
}

Tensor Encoder::embed(std::span<const int> z, const EdgeInputs& edges) const {
  std::vector<Index> rows(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] < 1 || z[i] > kMaxElement) throw DataError("atomic number out of range: " + std::to_string(z[i]));
    rows[i] = z[i] - 1;
  }
  const Tensor own = ad::gather_rows(embedding_, rows);
  const Tensor neighbor = ad::gather_rows(ad::gather_rows(neighbor_embedding_, rows), edges.src);
  const Tensor msg = ad::mul(neighbor_rbf_(edges.rbf), neighbor);
  const Tensor pooled = ad::scatter_add_rows(msg, edges.dst, edges.n_atoms);
  return ad::add(own, neighbor_combine_(pooled));
}

LayerDelta Encoder::layer_delta(std::size_t l, const Tensor& x, const nn::Vec3& v, const EdgeInputs& edges) const {
  const Layer& layer = layers_.at(l);
  const Index d = cfg_.d;
  const Index n = edges.n_atoms;

  const Tensor h = ad::layer_norm_rows(x, layer.ln_gain, layer.ln_bias);
  const Tensor q = layer.q(h);
  const Tensor k = layer.k(h);
  const Tensor val = layer.v(h);

  Tensor rbf_in = edges.rbf;
  if (edges.dihedral) rbf_in = ad::add(rbf_in, ad::matmul(*edges.dihedral, layer.dihedral_proj));
  const Tensor dk = ad::silu(layer.dk(rbf_in));
  const Tensor dv = ad::silu(layer.dv(rbf_in));

  const Tensor qk = ad::mul(ad::mul(ad::gather_rows(q, edges.dst), ad::gather_rows(k, edges.src)), dk);
  const Tensor logits = ad::matmul(qk, Tensor::constant(head_sum_));
  const Tensor attn = ad::mul_col(ad::silu(logits), edges.cutoff);
  const Tensor attn_c = ad::matmul(attn, Tensor::constant(head_expand_));

  const Tensor s = ad::mul(ad::gather_rows(val, edges.src), dv);
  const Tensor s1 = ad::slice_cols(s, 0, d);
  const Tensor s2 = ad::slice_cols(s, d, d);
  const Tensor s3 = ad::slice_cols(s, 2 * d, d);

  const Tensor agg = ad::scatter_add_rows(ad::mul(attn_c, s3), edges.dst, n);
  const Tensor o = layer.out(agg);
  const Tensor o1 = ad::slice_cols(o, 0, d);
  const Tensor o2 = ad::slice_cols(o, d, d);
  const Tensor o3 = ad::slice_cols(o, 2 * d, d);

  const nn::Vec3 u1 = nn::apply(layer.u1, v);
  const nn::Vec3 u2 = nn::apply(layer.u2, v);
  const nn::Vec3 u3 = nn::apply(layer.u3, v);

  LayerDelta out;
  out.dx = ad::add(o1, ad::mul(o2, nn::dot(u1, u2)));
  for (std::size_t a = 0; a < 3; ++a) {
    const Tensor msg = ad::add(ad::mul(s1, ad::gather_rows(v[a], edges.src)), ad::mul_col(s2, edges.rhat[a]));
    out.dv[a] = ad::add(ad::mul(o3, u3[a]), ad::scatter_add_rows(msg, edges.dst, n));
  }
  return out;
}

AtomFeatures Encoder::forward(const io::Frame& positions, std::span<const int> z) const {
  if (static_cast<Index>(z.size()) != positions.rows()) throw DataError("atomic numbers do not match coordinates");
  const NeighborList nbr = build_neighbor_list(positions, cfg_.r_cut);
  const EdgeInputs edges = edge_inputs(positions, nbr);
  AtomFeatures f;
  f.scalar = embed(z, edges);
  f.vector = nn::Vec3::zeros(positions.rows(), cfg_.d);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    LayerDelta delta = layer_delta(l, f.scalar, f.vector, edges);
    f.scalar = ad::add(f.scalar, delta.dx);
    f.vector = nn::add(f.vector, delta.dv);
    bool finite = f.scalar.value().allFinite();
    for (const auto& c : f.vector.axis) finite = finite && c.value().allFinite();
    if (!finite) throw NumericalError("non-finite encoder activations after layer " + std::to_string(l));
  }
  return f;
}

}  // namespace g2v::encoder
