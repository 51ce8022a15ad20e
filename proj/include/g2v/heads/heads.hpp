// SPDX-License-Identifier: Apache-2.0
//
// Readout heads that turn per-atom features into task inputs: residue
// pooling, gated equivariant blocks, GVP, and the SubFormer / SubMixer token
// mixers. Everything works on a batch of B samples with a fixed token count;
// token rows are stacked sample-major, (B*T) x d.
#pragma once

#include "g2v/ad/tensor.hpp"
#include "g2v/encoder/encoder.hpp"
#include "g2v/io/topology.hpp"
#include "g2v/io/trajectory.hpp"
#include "g2v/nn/layers.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace g2v::heads {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

enum class MixerMode { kNone, kSubFormer, kSubMixer, kGvpSubFormer, kGvpSubMixer };

MixerMode parse_mixer_mode(const std::string& s);
std::string to_string(MixerMode m);
bool uses_gvp(MixerMode m);
bool uses_attention(MixerMode m);

struct HeadConfig {
  MixerMode mixer = MixerMode::kNone;
  Index d = 64;
  Index n_tokens = 1;  // M; mixers are bound to it
  Index n_mixer_layers = 3;
  Index n_gvp_layers = 3;
  Index n_attention_heads = 8;
  Index expansion_factor = 2;
  bool use_global_token = false;
  Index n_global_inputs = 0;  // length of the global feature vector (Ca distances)
  Index mlp_hidden = 64;
  Index d_o = 2;
  double dropout = 0.2;

  void validate() const;
  /// Width of one flattened sample: [scalar M*d][vector M*3*d][globals].
  Index input_dim() const { return n_tokens * d * 4 + (use_global_token ? n_global_inputs : 0); }
};

/// Batched token features: scalar (B*M) x d and one (B*M) x d block per axis.
struct TokenBatch {
  Tensor scalar;
  nn::Vec3 vector;
  Index batch = 0;
  Index tokens = 0;
  std::optional<Tensor> globals;  // B x n_global_inputs
};

/// Sum of atom rows per subset (positions index the atom rows).
encoder::AtomFeatures pool_tokens(const encoder::AtomFeatures& atoms, const io::CoarseGrainPartition& part);
/// Sum over the token rows of each sample; returns B rows.
encoder::AtomFeatures pool_global(const encoder::AtomFeatures& tokens, Index batch = 1);

/// Packs one frame of token features into the flat lobe layout.
Matrix flatten_tokens(const encoder::AtomFeatures& tokens);
/// Inverse of the flat layout for a B x input_dim batch.
TokenBatch unflatten_tokens(const Tensor& flat, const HeadConfig& cfg);

class GatedEquivariantBlock {
 public:
  GatedEquivariantBlock() = default;
  GatedEquivariantBlock(nn::ParameterSet& ps, const std::string& name, Index d_in, Index d_out, nn::Rng& rng);
  std::pair<Tensor, nn::Vec3> operator()(const Tensor& x, const nn::Vec3& v) const;

 private:
  nn::Linear w1_, w2_, hidden_, out_;
  Index d_out_ = 0;
};

class Gvp {
 public:
  Gvp() = default;
  Gvp(nn::ParameterSet& ps, const std::string& name, Index d_in, Index d_out, nn::Rng& rng);
  std::pair<Tensor, nn::Vec3> operator()(const Tensor& x, const nn::Vec3& v) const;

 private:
  nn::Linear wh_, wm_, wo_;
};

/// Two-layer SiLU perceptron of the global feature vector.
class GlobalTokenEmbed {
 public:
  GlobalTokenEmbed() = default;
  GlobalTokenEmbed(nn::ParameterSet& ps, const std::string& name, Index n_in, Index d, nn::Rng& rng);
  Tensor operator()(const Tensor& features) const;  // B x n_in -> B x d

 private:
  nn::Linear l1_, l2_;
};

/// Global features of one frame: Ca pair distances.
Matrix global_features(const io::Frame& frame, const io::Topology& top);

/// Head-averaged attention per layer, (B*T) x T each.
struct AttentionRecord {
  std::vector<Matrix> layers;
};

class SubFormer {
 public:
  SubFormer() = default;
  SubFormer(nn::ParameterSet& ps, const std::string& name, Index d, Index tokens, Index layers, Index heads,
            Index expansion, bool positional_bias, nn::Rng& rng);
  /// tokens: (B*T) x d with T fixed. Returns the per-sample readout, B x d.
  Tensor operator()(const Tensor& tokens, Index batch, bool global_readout, const nn::ForwardContext& ctx,
                    AttentionRecord* record = nullptr) const;

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    nn::Linear q, k, v, o, ff1, ff2;
  };
  std::vector<Block> blocks_;
  Tensor position_;
  Index tokens_ = 0;
  Index heads_ = 1;
};

class SubMixer {
 public:
  SubMixer() = default;
  SubMixer(nn::ParameterSet& ps, const std::string& name, Index d, Index tokens, Index layers, Index expansion,
           nn::Rng& rng);
  /// Mean over all token rows of each sample, B x d.
  Tensor operator()(const Tensor& tokens, Index batch, const nn::ForwardContext& ctx) const;

 private:
  struct Block {
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    nn::Linear tok1, tok2, ch1, ch2;
  };
  std::vector<Block> blocks_;
  Index tokens_ = 0;
};

/// A network mapping a dense B x D batch to B x out. Both downstream tasks
/// train through this interface.
class Lobe {
 public:
  virtual ~Lobe() = default;
  virtual Tensor forward(const Tensor& batch, const nn::ForwardContext& ctx) const = 0;
  virtual nn::ParameterSet& parameters() = 0;
  virtual const nn::ParameterSet& parameters() const = 0;
  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
};

/// Plain perceptron on dense features (e.g. Ca distances).
class MlpLobe final : public Lobe {
 public:
  MlpLobe(Index in, Index hidden, Index out, double dropout, std::uint64_t seed, Index hidden_layers = 2);
  Tensor forward(const Tensor& batch, const nn::ForwardContext& ctx) const override;
  nn::ParameterSet& parameters() override { return ps_; }
  const nn::ParameterSet& parameters() const override { return ps_; }
  Index input_dim() const override { return in_; }
  Index output_dim() const override { return out_; }

 private:
  nn::ParameterSet ps_;
  nn::Mlp mlp_;
  Index in_, out_;
  double dropout_;
};

/// Token-feature head dispatching on the mixer mode:
///   none:            pool -> GEB -> MLP
///   subformer/mixer: GEB per token -> mixer (+ global token) -> MLP
///   gvp variants:    GVP stack per token -> mixer (+ global token) -> MLP
class Geom2vecHead final : public Lobe {
 public:
  Geom2vecHead(const HeadConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& batch, const nn::ForwardContext& ctx) const override;
  Tensor forward_tokens(const TokenBatch& tokens, const nn::ForwardContext& ctx,
                        AttentionRecord* record = nullptr) const;

  nn::ParameterSet& parameters() override { return ps_; }
  const nn::ParameterSet& parameters() const override { return ps_; }
  Index input_dim() const override { return cfg_.input_dim(); }
  Index output_dim() const override { return cfg_.d_o; }
  const HeadConfig& config() const { return cfg_; }

 private:
  HeadConfig cfg_;
  nn::ParameterSet ps_;
  GatedEquivariantBlock geb_;
  std::vector<Gvp> gvps_;
  GlobalTokenEmbed global_;
  SubFormer former_;
  SubMixer mixer_;
  nn::Mlp mlp_;
};

/// Runs one forward per batch of flat samples and averages the recorded
/// maps over heads and frames; one T x T matrix per mixer layer.
std::vector<Matrix> extract_attention_maps(const Geom2vecHead& head, const Matrix& flat_frames);

/// Writes one map with a header naming tokens ("*" marks the global token).
void write_attention_map(const Matrix& map, const std::vector<std::string>& token_names,
                         const std::filesystem::path& path);
std::vector<std::string> token_names(const io::Topology& top, const io::CoarseGrainPartition& part, bool global);

}  // namespace g2v::heads
