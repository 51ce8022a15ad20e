// SPDX-License-Identifier: Apache-2.0
#include "g2v/heads/heads.hpp"

#include "g2v/error.hpp"
#include "g2v/io/features.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

namespace g2v::heads {

namespace {

std::vector<Index> sample_of_rows(Index batch, Index tokens) {
  std::vector<Index> idx(static_cast<std::size_t>(batch * tokens));
  for (Index r = 0; r < batch * tokens; ++r) idx[r] = r / tokens;
  return idx;
}

Index tokens_per_sample(const Tensor& rows, Index batch, Index bound) {
  if (batch <= 0 || rows.rows() % batch != 0) throw DataError("token rows are not divisible by the batch size");
  const Index t = rows.rows() / batch;
  if (t != bound)
    throw DataError("token count bound: model expects " + std::to_string(bound) + " tokens, got " + std::to_string(t));
  return t;
}

Tensor mean_per_sample(const Tensor& x, Index batch, Index tokens) {
  const auto idx = sample_of_rows(batch, tokens);
  return ad::scale(ad::scatter_add_rows(x, idx, batch), 1.0 / static_cast<double>(tokens));
}

}  // namespace

MixerMode parse_mixer_mode(const std::string& s) {
  if (s == "none") return MixerMode::kNone;
  if (s == "subformer") return MixerMode::kSubFormer;
  if (s == "submixer") return MixerMode::kSubMixer;
  if (s == "subgvp+subformer") return MixerMode::kGvpSubFormer;
  if (s == "subgvp+submixer") return MixerMode::kGvpSubMixer;
  throw ConfigError("unknown mixer '" + s + "' (none, subformer, submixer, subgvp+subformer, subgvp+submixer)");
}

std::string to_string(MixerMode m) {
  switch (m) {
    case MixerMode::kNone: return "none";
    case MixerMode::kSubFormer: return "subformer";
    case MixerMode::kSubMixer: return "submixer";
    case MixerMode::kGvpSubFormer: return "subgvp+subformer";
    case MixerMode::kGvpSubMixer: return "subgvp+submixer";
  }
  return "none";
}

bool uses_gvp(MixerMode m) { return m == MixerMode::kGvpSubFormer || m == MixerMode::kGvpSubMixer; }
bool uses_attention(MixerMode m) { return m == MixerMode::kSubFormer || m == MixerMode::kGvpSubFormer; }

void HeadConfig::validate() const {
  if (d < 1) throw ConfigError("head channels must be positive");
  if (n_tokens < 1) throw ConfigError("token count must be positive");
  if (d_o < 1) throw ConfigError("d_o must be at least 1");
  if (expansion_factor < 1) throw ConfigError("expansion_factor must be at least 1");
  if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (mixer != MixerMode::kNone && n_mixer_layers < 1) throw ConfigError("n_mixer_layers must be positive");
  if (uses_gvp(mixer) && n_gvp_layers < 1) throw ConfigError("n_gvp_layers must be positive");
  if (uses_attention(mixer) && (n_attention_heads < 1 || d % n_attention_heads != 0))
    throw ConfigError("head channels must be divisible by n_attention_heads");
  if (use_global_token) {
    if (mixer == MixerMode::kNone) throw ConfigError("the global token needs a token mixer");
    if (n_global_inputs < 1) throw ConfigError("the global token needs global inputs");
  }
}

encoder::AtomFeatures pool_tokens(const encoder::AtomFeatures& atoms, const io::CoarseGrainPartition& part) {
  part.validate(static_cast<std::size_t>(atoms.scalar.rows()));
  std::vector<Index> rows, tok;
  for (std::size_t m = 0; m < part.subsets.size(); ++m)
    for (std::size_t i : part.subsets[m]) {
      rows.push_back(static_cast<Index>(i));
      tok.push_back(static_cast<Index>(m));
    }
  const Index m_count = static_cast<Index>(part.subsets.size());
  auto pool = [&](const Tensor& t) { return ad::scatter_add_rows(ad::gather_rows(t, rows), tok, m_count); };
  encoder::AtomFeatures out;
  out.scalar = pool(atoms.scalar);
  for (std::size_t a = 0; a < 3; ++a) out.vector[a] = pool(atoms.vector[a]);
  return out;
}

encoder::AtomFeatures pool_global(const encoder::AtomFeatures& tokens, Index batch) {
  if (batch <= 0 || tokens.scalar.rows() % batch != 0) throw DataError("token rows are not divisible by the batch");
  const auto idx = sample_of_rows(batch, tokens.scalar.rows() / batch);
  encoder::AtomFeatures out;
  out.scalar = ad::scatter_add_rows(tokens.scalar, idx, batch);
  for (std::size_t a = 0; a < 3; ++a) out.vector[a] = ad::scatter_add_rows(tokens.vector[a], idx, batch);
  return out;
}

Matrix flatten_tokens(const encoder::AtomFeatures& tokens) {
  const Index m = tokens.scalar.rows();
  const Index d = tokens.scalar.cols();
  Matrix out(1, 4 * m * d);
  for (Index t = 0; t < m; ++t)
    for (Index c = 0; c < d; ++c) out(0, t * d + c) = tokens.scalar.value()(t, c);
  for (Index t = 0; t < m; ++t)
    for (Index a = 0; a < 3; ++a)
      for (Index c = 0; c < d; ++c) out(0, m * d + (t * 3 + a) * d + c) = tokens.vector[a].value()(t, c);
  return out;
}

TokenBatch unflatten_tokens(const Tensor& flat, const HeadConfig& cfg) {
  if (flat.cols() != cfg.input_dim())
    throw DataError("feature width " + std::to_string(flat.cols()) + " does not match head input " +
                    std::to_string(cfg.input_dim()));
  const Index b = flat.rows();
  const Index m = cfg.n_tokens;
  const Index d = cfg.d;
  TokenBatch out;
  out.batch = b;
  out.tokens = m;
  out.scalar = ad::reshape(ad::slice_cols(flat, 0, m * d), b * m, d);
  const Tensor vec = ad::reshape(ad::slice_cols(flat, m * d, 3 * m * d), b * m * 3, d);
  for (Index a = 0; a < 3; ++a) {
    std::vector<Index> idx(static_cast<std::size_t>(b * m));
    for (Index r = 0; r < b * m; ++r) idx[r] = r * 3 + a;
    out.vector[a] = ad::gather_rows(vec, idx);
  }
  if (cfg.use_global_token) out.globals = ad::slice_cols(flat, 4 * m * d, cfg.n_global_inputs);
  return out;
}

GatedEquivariantBlock::GatedEquivariantBlock(nn::ParameterSet& ps, const std::string& name, Index d_in, Index d_out,
                                             nn::Rng& rng)
    : w1_(ps, name + ".w1", d_in, d_in, rng, false),
      w2_(ps, name + ".w2", d_in, d_out, rng, false),
      hidden_(ps, name + ".hidden", 2 * d_in, d_in, rng),
      out_(ps, name + ".out", d_in, 2 * d_out, rng),
      d_out_(d_out) {}

std::pair<Tensor, nn::Vec3> GatedEquivariantBlock::operator()(const Tensor& x, const nn::Vec3& v) const {
  const Tensor v1 = nn::norms(nn::apply(w1_, v));
  const nn::Vec3 v2 = nn::apply(w2_, v);
  const Tensor h = out_(ad::silu(hidden_(ad::concat_cols({x, v1}))));
  const Tensor xo = ad::silu(ad::slice_cols(h, 0, d_out_));
  const Tensor gate = ad::slice_cols(h, d_out_, d_out_);
  return {xo, nn::mul_channels(gate, v2)};
}

Gvp::Gvp(nn::ParameterSet& ps, const std::string& name, Index d_in, Index d_out, nn::Rng& rng) {
  const Index d_h = std::max(d_in, d_out);
  wh_ = nn::Linear(ps, name + ".wh", d_in, d_h, rng, false);
  wm_ = nn::Linear(ps, name + ".wm", d_h + d_in, d_out, rng);
  wo_ = nn::Linear(ps, name + ".wo", d_h, d_out, rng, false);
}

std::pair<Tensor, nn::Vec3> Gvp::operator()(const Tensor& x, const nn::Vec3& v) const {
  const nn::Vec3 vh = nn::apply(wh_, v);
  const Tensor xm = wm_(ad::concat_cols({nn::norms(vh), x}));
  const nn::Vec3 vo = nn::apply(wo_, vh);
  return {ad::silu(xm), nn::mul_channels(ad::sigmoid(nn::norms(vo)), vo)};
}

GlobalTokenEmbed::GlobalTokenEmbed(nn::ParameterSet& ps, const std::string& name, Index n_in, Index d, nn::Rng& rng)
    : l1_(ps, name + ".l1", n_in, d, rng), l2_(ps, name + ".l2", d, d, rng) {}

Tensor GlobalTokenEmbed::operator()(const Tensor& features) const { return l2_(ad::silu(l1_(features))); }

Matrix global_features(const io::Frame& frame, const io::Topology& top) {
  const std::vector<double> dist = io::ca_pair_distances(frame, top);
  if (dist.empty()) throw DataError("global features need at least 2 CA atoms");
  Matrix out(1, static_cast<Index>(dist.size()));
  for (std::size_t k = 0; k < dist.size(); ++k) out(0, static_cast<Index>(k)) = dist[k];
  return out;
}

SubFormer::SubFormer(nn::ParameterSet& ps, const std::string& name, Index d, Index tokens, Index layers, Index heads,
                     Index expansion, bool positional_bias, nn::Rng& rng)
    : tokens_(tokens), heads_(heads) {
  for (Index l = 0; l < layers; ++l) {
    const std::string p = name + ".block" + std::to_string(l) + ".";
    Block b;
    b.ln1_gain = ps.add(p + "ln1.gain", Matrix::Ones(1, d));
    b.ln1_bias = ps.add(p + "ln1.bias", Matrix::Zero(1, d));
    b.ln2_gain = ps.add(p + "ln2.gain", Matrix::Ones(1, d));
    b.ln2_bias = ps.add(p + "ln2.bias", Matrix::Zero(1, d));
    b.q = nn::Linear(ps, p + "q", d, d, rng);
    b.k = nn::Linear(ps, p + "k", d, d, rng);
    b.v = nn::Linear(ps, p + "v", d, d, rng);
    b.o = nn::Linear(ps, p + "o", d, d, rng);
    b.ff1 = nn::Linear(ps, p + "ff1", d, expansion * d, rng);
    b.ff2 = nn::Linear(ps, p + "ff2", expansion * d, d, rng);
    blocks_.push_back(std::move(b));
  }
  if (positional_bias) position_ = ps.add(name + ".position", nn::gaussian(tokens, d, 0.02, rng));
}

Tensor SubFormer::operator()(const Tensor& tokens, Index batch, bool global_readout, const nn::ForwardContext& ctx,
                             AttentionRecord* record) const {
  const Index t = tokens_per_sample(tokens, batch, tokens_);
  const Index d = tokens.cols();
  const Index dh = d / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor x = tokens;
  if (position_.defined()) {
    std::vector<Index> pos(static_cast<std::size_t>(batch * t));
    for (Index r = 0; r < batch * t; ++r) pos[r] = r % t;
    x = ad::add(x, ad::gather_rows(position_, pos));
  }
  for (const Block& b : blocks_) {
    const Tensor h = ad::layer_norm_rows(x, b.ln1_gain, b.ln1_bias);
    const Tensor q = b.q(h), k = b.k(h), v = b.v(h);
    std::vector<Tensor> outs;
    Matrix avg = Matrix::Zero(batch * t, t);
    for (Index head = 0; head < heads_; ++head) {
      const Tensor s = ad::scale(
          ad::block_matmul_nt(ad::slice_cols(q, head * dh, dh), ad::slice_cols(k, head * dh, dh), batch), inv_sqrt);
      const Tensor p = ad::softmax_rows(s);
      if (record) avg += p.value();
      outs.push_back(ad::block_matmul(p, ad::slice_cols(v, head * dh, dh), batch));
    }
    if (record) record->layers.push_back(avg / static_cast<double>(heads_));
    x = ad::add(x, b.o(ad::concat_cols(outs)));
    const Tensor h2 = ad::layer_norm_rows(x, b.ln2_gain, b.ln2_bias);
    x = ad::add(x, b.ff2(nn::dropout(ad::silu(b.ff1(h2)), ctx)));
  }
  if (global_readout) {
    std::vector<Index> last(static_cast<std::size_t>(batch));
    for (Index s = 0; s < batch; ++s) last[s] = s * t + t - 1;
    return ad::gather_rows(x, last);
  }
  return mean_per_sample(x, batch, t);
}

SubMixer::SubMixer(nn::ParameterSet& ps, const std::string& name, Index d, Index tokens, Index layers,
                   Index expansion, nn::Rng& rng)
    : tokens_(tokens) {
  for (Index l = 0; l < layers; ++l) {
    const std::string p = name + ".block" + std::to_string(l) + ".";
    Block b;
    b.ln1_gain = ps.add(p + "ln1.gain", Matrix::Ones(1, d));
    b.ln1_bias = ps.add(p + "ln1.bias", Matrix::Zero(1, d));
    b.ln2_gain = ps.add(p + "ln2.gain", Matrix::Ones(1, d));
    b.ln2_bias = ps.add(p + "ln2.bias", Matrix::Zero(1, d));
    b.tok1 = nn::Linear(ps, p + "tok1", tokens, expansion * tokens, rng);
    b.tok2 = nn::Linear(ps, p + "tok2", expansion * tokens, tokens, rng);
    b.ch1 = nn::Linear(ps, p + "ch1", d, expansion * d, rng);
    b.ch2 = nn::Linear(ps, p + "ch2", expansion * d, d, rng);
    blocks_.push_back(std::move(b));
  }
}

Tensor SubMixer::operator()(const Tensor& tokens, Index batch, const nn::ForwardContext& ctx) const {
  const Index t = tokens_per_sample(tokens, batch, tokens_);
  Tensor x = tokens;
  for (const Block& b : blocks_) {
    // Token mixing acts on the transposed (channel x token) view of each sample.
    const Tensor h = ad::block_transpose(ad::layer_norm_rows(x, b.ln1_gain, b.ln1_bias), batch);
    const Tensor mixed = b.tok2(nn::dropout(ad::silu(b.tok1(h)), ctx));
    x = ad::add(x, ad::block_transpose(mixed, batch));
    const Tensor h2 = ad::layer_norm_rows(x, b.ln2_gain, b.ln2_bias);
    x = ad::add(x, b.ch2(nn::dropout(ad::silu(b.ch1(h2)), ctx)));
  }
  return mean_per_sample(x, batch, t);
}

MlpLobe::MlpLobe(Index in, Index hidden, Index out, double dropout, std::uint64_t seed, Index hidden_layers)
    : in_(in), out_(out), dropout_(dropout) {
  if (in < 1 || out < 1 || hidden < 1) throw ConfigError("MLP widths must be positive");
  nn::Rng rng(seed);
  std::vector<Index> widths{in};
  for (Index l = 0; l < hidden_layers; ++l) widths.push_back(hidden);
  widths.push_back(out);
  mlp_ = nn::Mlp(ps_, "mlp", widths, rng);
}

Tensor MlpLobe::forward(const Tensor& batch, const nn::ForwardContext& ctx) const {
  if (batch.cols() != in_) throw DataError("feature width does not match the MLP input");
  nn::ForwardContext c = ctx;
  c.dropout = dropout_;
  return mlp_(batch, c);
}

Geom2vecHead::Geom2vecHead(const HeadConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  const Index d = cfg_.d;
  if (uses_gvp(cfg_.mixer)) {
    for (Index l = 0; l < cfg_.n_gvp_layers; ++l)
      gvps_.emplace_back(ps_, "head.gvp" + std::to_string(l), d, d, rng);
  } else {
    geb_ = GatedEquivariantBlock(ps_, "head.geb", d, d, rng);
  }
  if (cfg_.use_global_token) global_ = GlobalTokenEmbed(ps_, "head.global", cfg_.n_global_inputs, d, rng);
  const Index t = cfg_.n_tokens + (cfg_.use_global_token ? 1 : 0);
  if (uses_attention(cfg_.mixer))
    former_ = SubFormer(ps_, "head.subformer", d, t, cfg_.n_mixer_layers, cfg_.n_attention_heads,
                        cfg_.expansion_factor, !uses_gvp(cfg_.mixer), rng);
  else if (cfg_.mixer != MixerMode::kNone)
    mixer_ = SubMixer(ps_, "head.submixer", d, t, cfg_.n_mixer_layers, cfg_.expansion_factor, rng);
  mlp_ = nn::Mlp(ps_, "head.mlp", {d, cfg_.mlp_hidden, cfg_.mlp_hidden, cfg_.d_o}, rng);
}

Tensor Geom2vecHead::forward(const Tensor& batch, const nn::ForwardContext& ctx) const {
  return forward_tokens(unflatten_tokens(batch, cfg_), ctx);
}

Tensor Geom2vecHead::forward_tokens(const TokenBatch& tokens, const nn::ForwardContext& ctx,
                                    AttentionRecord* record) const {
  nn::ForwardContext c = ctx;
  c.dropout = cfg_.dropout;
  const Index b = tokens.batch;

  if (cfg_.mixer == MixerMode::kNone) {
    const encoder::AtomFeatures pooled = pool_global({tokens.scalar, tokens.vector}, b);
    return mlp_(geb_(pooled.scalar, pooled.vector).first, c);
  }

  Tensor x = tokens.scalar;
  nn::Vec3 v = tokens.vector;
  if (uses_gvp(cfg_.mixer)) {
    for (const Gvp& g : gvps_) std::tie(x, v) = g(x, v);
  } else {
    x = geb_(x, v).first;
  }

  Index t = tokens.tokens;
  if (cfg_.use_global_token) {
    if (!tokens.globals) throw DataError("global token enabled but no global features supplied");
    const Tensor g = global_(*tokens.globals);
    // Interleave so that each sample's global row comes last.
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(b * (t + 1)));
    for (Index s = 0; s < b; ++s) {
      for (Index m = 0; m < t; ++m) order.push_back(s * t + m);
      order.push_back(b * t + s);
    }
    x = ad::gather_rows(ad::concat_rows({x, g}), order);
    ++t;
  }

  const Tensor pooled = uses_attention(cfg_.mixer) ? former_(x, b, cfg_.use_global_token, c, record) : mixer_(x, b, c);
  return mlp_(pooled, c);
}

std::vector<Matrix> extract_attention_maps(const Geom2vecHead& head, const Matrix& flat_frames) {
  if (!uses_attention(head.config().mixer)) throw ConfigError("mixer has no attention maps");
  if (flat_frames.rows() == 0) throw DataError("no frames to average");
  ad::NoGradGuard guard;
  constexpr Index kChunk = 256;
  std::vector<Matrix> maps;
  for (Index start = 0; start < flat_frames.rows(); start += kChunk) {
    const Index n = std::min(kChunk, flat_frames.rows() - start);
    AttentionRecord rec;
    head.forward_tokens(unflatten_tokens(Tensor::constant(flat_frames.middleRows(start, n)), head.config()), {},
                        &rec);
    if (maps.empty())
      for (const Matrix& m : rec.layers) maps.push_back(Matrix::Zero(m.cols(), m.cols()));
    for (std::size_t l = 0; l < rec.layers.size(); ++l) {
      const Index t = rec.layers[l].cols();
      for (Index s = 0; s < n; ++s) maps[l] += rec.layers[l].middleRows(s * t, t);
    }
  }
  for (Matrix& m : maps) m /= static_cast<double>(flat_frames.rows());
  return maps;
}

void write_attention_map(const Matrix& map, const std::vector<std::string>& names, const std::filesystem::path& path) {
  if (static_cast<Index>(names.size()) != map.rows() || map.rows() != map.cols())
    throw DataError("token names do not match the attention map");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# tokens";
  for (const auto& n : names) out << ' ' << n;
  out << '\n' << std::setprecision(9);
  for (Index i = 0; i < map.rows(); ++i) {
    for (Index j = 0; j < map.cols(); ++j) out << (j ? " " : "") << map(i, j);
    out << '\n';
  }
}

std::vector<std::string> token_names(const io::Topology& top, const io::CoarseGrainPartition& part, bool global) {
  std::vector<std::string> names;
  for (std::size_t m = 0; m < part.subsets.size(); ++m) {
    if (m < part.residue_of_subset.size() && part.residue_of_subset[m] < top.residue_names.size())
      names.emplace_back(1, io::one_letter_code(top.residue_names[part.residue_of_subset[m]]));
    else
      names.push_back("T" + std::to_string(m));
  }
  if (global) names.push_back("*");
  return names;
}

}  // namespace g2v::heads
