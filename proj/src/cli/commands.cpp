// SPDX-License-Identifier: Apache-2.0
#include "g2v/cli/commands.hpp"

#include "g2v/analysis/analysis.hpp"
#include "g2v/denoise/denoise.hpp"
#include "g2v/error.hpp"
#include "g2v/io/archive.hpp"
#include "g2v/io/digest.hpp"
#include "g2v/io/features.hpp"
#include "g2v/io/toy.hpp"
#include "g2v/spib/spib.hpp"
#include "g2v/vamp/vamp.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace g2v::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ad::Index;
using ad::Matrix;

namespace {

constexpr const char* kToolVersion = "0.1.0";

KeySpec key(std::string name, KeyType t, json fallback, std::string help) {
  return KeySpec{std::move(name), t, std::move(fallback), std::move(help)};
}

Schema with_common(Schema s) {
  s.push_back(key("out_dir", KeyType::kString, ".", "directory for outputs and the manifest"));
  s.push_back(key("manifest", KeyType::kString, "", "manifest file name; empty = <command>.manifest.json"));
  return s;
}

Schema encoder_keys() {
  return {key("d", KeyType::kInt, 64, "hidden channels"),
          key("n_layers", KeyType::kInt, 6, "interaction layers"),
          key("n_heads", KeyType::kInt, 8, "attention heads"),
          key("n_rbf", KeyType::kInt, 64, "radial basis functions"),
          key("r_cut", KeyType::kFloat, 5.0, "neighbor cutoff (Angstrom)"),
          key("visnet_scalars", KeyType::kBool, false, "add dihedral edge scalars")};
}

Schema operator+(Schema a, const Schema& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Schema lag_keys() {
  return {key("frame_interval", KeyType::kFloat, 0.2, "ns between saved frames"),
          key("stride", KeyType::kInt, 1, "frame stride applied before training"),
          key("lag_ns", KeyType::kFloat, 0.2, "lag time in ns")};
}

Schema split_keys() {
  return {key("train_fraction", KeyType::kFloat, 1.0, "fraction of first-half segments used for training"),
          key("n_segments", KeyType::kInt, 10, "segments of the first half")};
}

Schema head_keys() {
  return {key("mixer", KeyType::kString, "none", "none|subformer|submixer|subgvp+subformer|subgvp+submixer"),
          key("n_mixer_layers", KeyType::kInt, 3, "token mixer layers"),
          key("n_gvp_layers", KeyType::kInt, 3, "GVP layers"),
          key("n_attention_heads", KeyType::kInt, 8, "SubFormer heads"),
          key("expansion_factor", KeyType::kInt, 2, "mixer MLP expansion"),
          key("mlp_hidden", KeyType::kInt, 64, "output MLP width"),
          key("dropout", KeyType::kFloat, 0.2, "dropout in training")};
}

const std::map<std::string, Schema>& schemas() {
  static const std::map<std::string, Schema> s = {
      {"make-toy",
       with_common({key("n_frames", KeyType::kInt, 10000, "frames to generate"),
                    key("temperature_factor", KeyType::kFloat, 1.0, "kT multiplier"),
                    key("frame_interval", KeyType::kFloat, 0.2, "ns per saved frame"),
                    key("trajectory_out", KeyType::kString, "toy.xyz", "trajectory file"),
                    key("topology_out", KeyType::kString, "toy.top", "topology file"),
                    key("labels_out", KeyType::kString, "toy_labels.txt", "ground-truth well labels")})},
      {"pretrain",
       with_common(Schema{key("n_conformers", KeyType::kInt, 100, "synthetic conformers"),
                          key("min_atoms", KeyType::kInt, 5, "smallest conformer"),
                          key("max_atoms", KeyType::kInt, 10, "largest conformer"),
                          key("sigma", KeyType::kFloat, 0.2, "noise sigma (Angstrom)"),
                          key("epochs", KeyType::kInt, 10, "training epochs"),
                          key("batch_size", KeyType::kInt, 100, "conformers per step"),
                          key("lr", KeyType::kFloat, 5e-4, "learning rate"),
                          key("n_valid", KeyType::kInt, 20, "held-out conformers"),
                          key("weight_decay", KeyType::kFloat, 0.0, "decoupled weight decay"),
                          key("checkpoint_out", KeyType::kString, "encoder.ckpt", "best checkpoint"),
                          key("curve_out", KeyType::kString, "pretrain_loss.txt", "validation MSE per epoch")} +
                   encoder_keys())},
      {"featurize",
       with_common(Schema{key("trajectory", KeyType::kString, nullptr, "xyz trajectory"),
                          key("topology", KeyType::kString, nullptr, "topology file"),
                          key("frame_interval", KeyType::kFloat, 0.2, "ns between saved frames"),
                          key("stride", KeyType::kInt, 1, "keep every stride-th frame"),
                          key("features", KeyType::kString, "encoder", "encoder|ca_distances|ca_dihedrals"),
                          key("checkpoint", KeyType::kString, "", "pretrained encoder; empty = random init"),
                          key("selection", KeyType::kString, "heavy", "heavy|all"),
                          key("archive_out", KeyType::kString, "features.g2v", "feature archive")} +
                   encoder_keys())},
      {"train-vamp",
       with_common(Schema{key("archive", KeyType::kString, nullptr, "feature archive"),
                          key("d_o", KeyType::kInt, 2, "CV count"),
                          key("batch_size", KeyType::kInt, 5000, "pairs per step"),
                          key("max_epochs", KeyType::kInt, 20, "epochs"),
                          key("lr", KeyType::kFloat, 2e-4, "learning rate"),
                          key("optimizer", KeyType::kString, "adam_atan2", "adam_atan2|adamw_amsgrad"),
                          key("weight_decay", KeyType::kFloat, 0.0, "decoupled weight decay"),
                          key("train_patience", KeyType::kInt, 500, "steps without train improvement"),
                          key("valid_patience", KeyType::kInt, 10, "validations without improvement"),
                          key("valid_interval", KeyType::kInt, 50, "steps between validations"),
                          key("tie_weights", KeyType::kBool, true, "one lobe for both ends of a pair"),
                          key("max_valid_pairs", KeyType::kInt, 0, "cap on validation pairs; 0 = all"),
                          key("cvs_out", KeyType::kString, "cvs.g2v", "CV archive"),
                          key("curve_out", KeyType::kString, "vamp_score.txt", "score curve"),
                          key("model_out", KeyType::kString, "vamp_head.ckpt", "trained head")} +
                   lag_keys() + split_keys() + head_keys())},
      {"train-spib",
       with_common(Schema{key("archive", KeyType::kString, nullptr, "feature archive"),
                          key("d_z", KeyType::kInt, 2, "latent dimension"),
                          key("beta", KeyType::kFloat, 0.01, "information bottleneck weight"),
                          key("n_initial_states", KeyType::kInt, 100, "k-means clusters"),
                          key("refinement_frequency", KeyType::kInt, 5, "epochs between relabels"),
                          key("n_pseudo", KeyType::kInt, 32, "prior pseudo-inputs"),
                          key("batch_size", KeyType::kInt, 1000, "pairs per step"),
                          key("lr", KeyType::kFloat, 2e-4, "learning rate"),
                          key("optimizer", KeyType::kString, "adam_atan2", "adam_atan2|adamw_amsgrad"),
                          key("patience", KeyType::kInt, 5, "epochs without validation improvement"),
                          key("max_epochs", KeyType::kInt, 100, "epoch cap"),
                          key("stable_refinements", KeyType::kInt, 2, "unchanged relabels needed"),
                          key("decoder_hidden", KeyType::kInt, 64, "decoder width"),
                          key("labels_out", KeyType::kString, "spib_labels.txt", "state labels"),
                          key("ib_out", KeyType::kString, "ib.g2v", "latent means per frame"),
                          key("loss_out", KeyType::kString, "spib_loss.txt", "loss per epoch")} +
                   lag_keys() + split_keys() + head_keys())},
      {"analyze pmf",
       with_common({key("input", KeyType::kString, nullptr, "CV archive"),
                    key("col_x", KeyType::kInt, 0, "first CV column"),
                    key("col_y", KeyType::kInt, 1, "second CV column"),
                    key("bins", KeyType::kInt, 50, "bins per axis"),
                    key("temperature", KeyType::kFloat, 300.0, "K"),
                    key("units", KeyType::kString, "kcal", "kT|kcal"),
                    key("pmf_out", KeyType::kString, "pmf.txt", "PMF grid")})},
      {"analyze contacts",
       with_common({key("trajectory", KeyType::kString, nullptr, "xyz trajectory"),
                    key("topology", KeyType::kString, nullptr, "topology file"),
                    key("reference", KeyType::kString, "", "xyz reference; empty = first frame"),
                    key("frame_interval", KeyType::kFloat, 0.2, "ns between frames"),
                    key("cutoff", KeyType::kFloat, 4.5, "heavy-atom contact distance"),
                    key("min_separation", KeyType::kInt, 3, "minimum residue separation"),
                    key("window_ns", KeyType::kFloat, 1.0, "moving-average window"),
                    key("contacts_out", KeyType::kString, "contacts.txt", "Q per frame")})},
      {"analyze msm",
       with_common(Schema{key("labels", KeyType::kString, nullptr, "label file"),
                          key("msm_out", KeyType::kString, "msm.txt", "transition matrix")} +
                   lag_keys())},
      {"bench",
       with_common({key("hidden", KeyType::kString, "64,128,256,384", "comma-separated widths"),
                    key("layers", KeyType::kString, "1,2,3,4,5,6", "comma-separated depths"),
                    key("n_atoms", KeyType::kInt, 144, "fixture size"),
                    key("n_frames", KeyType::kInt, 1, "frames per timed run"),
                    key("batch", KeyType::kInt, 1, "frames per backward in training"),
                    key("runs", KeyType::kInt, 3, "timed runs (median)"),
                    key("warmup", KeyType::kInt, 1, "untimed runs"),
                    key("memory_budget_mb", KeyType::kInt, 4096, "tracked tensor budget"),
                    key("mode", KeyType::kString, "both", "inference|training|both"),
                    key("report_out", KeyType::kString, "bench.txt", "aligned report"),
                    key("csv_out", KeyType::kString, "bench.csv", "CSV report")})},
  };
  return s;
}

// ---------------------------------------------------------------------------

struct Run {
  std::string command;
  RunConfig cfg;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool f32 = false;
  std::ostream* out = nullptr;
  json inputs = json::array();
  std::vector<fs::path> outputs;

  fs::path out_path(const std::string& k) const {
    const fs::path dir = cfg.get_string("out_dir");
    return dir / cfg.get_string(k);
  }
  fs::path input(const std::string& k) {
    const fs::path p = cfg.get_string(k);
    if (!fs::exists(p)) throw DataError("input not found for '" + k + "': " + p.string());
    inputs.push_back({{"key", k}, {"path", p.string()}, {"blob", io::git_blob_id_of_file(p)}});
    return p;
  }
  fs::path output(const std::string& k) {
    fs::path p = out_path(k);
    outputs.push_back(p);
    return p;
  }
  std::ostream& log() { return *out; }
};


encoder::EncoderConfig encoder_config(const RunConfig& c) {
  encoder::EncoderConfig e;
  e.d = static_cast<std::uint32_t>(c.get_size("d"));
  e.n_layers = static_cast<std::uint32_t>(c.get_size("n_layers"));
  e.n_heads = static_cast<std::uint32_t>(c.get_size("n_heads"));
  e.n_rbf = static_cast<std::uint32_t>(c.get_size("n_rbf"));
  e.r_cut = c.get_float("r_cut");
  e.use_visnet_scalars = c.get_bool("visnet_scalars");
  e.validate();
  return e;
}

std::vector<std::uint32_t> parse_list(const std::string& s, const std::string& what) {
  std::vector<std::uint32_t> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const long x = std::stol(tok, &used);
      if (used != tok.size() || x < 1) throw std::invalid_argument(tok);
      v.push_back(static_cast<std::uint32_t>(x));
    } catch (const std::exception&) {
      throw ConfigError("bad entry '" + tok + "' in " + what);
    }
  }
  if (v.empty()) throw ConfigError(what + " is empty");
  return v;
}

// --- make-toy ---------------------------------------------------------------

void cmd_make_toy(Run& r) {
  io::ToyParams p;
  p.frame_interval = r.cfg.get_float("frame_interval");
  const io::ToySystem sys =
      io::generate_toy_trajectory(r.cfg.get_size("n_frames"), r.cfg.get_float("temperature_factor"), r.seed, p);
  io::write_xyz_trajectory(sys.trajectory, r.output("trajectory_out"));
  io::write_topology(sys.topology, r.output("topology_out"));
  spib::LabelSeries ls;
  ls.n_labels = 2;
  for (int l : sys.labels) ls.labels.push_back(l > 0 ? 1 : 0);
  spib::write_labels(ls, r.output("labels_out"));
  r.log() << "wrote " << sys.trajectory.frame_count() << " frames\n";
}

// --- pretrain -------------------------------------------------------------

void cmd_pretrain(Run& r) {
  const auto& c = r.cfg;
  const encoder::EncoderConfig ec = encoder_config(c);
  denoise::DenoiseConfig dc;
  dc.noise_sigma = c.get_float("sigma");
  dc.epochs = c.get_size("epochs");
  dc.batch_size = c.get_size("batch_size");
  dc.lr = c.get_float("lr");
  dc.n_valid = c.get_size("n_valid");
  dc.weight_decay = c.get_float("weight_decay");
  dc.validate();
  auto corpus = denoise::make_synthetic_corpus(c.get_size("n_conformers"), c.get_size("min_atoms"),
                                               c.get_size("max_atoms"), r.seed);
  if (r.f32)
    for (auto& conf : corpus) conf.positions = conf.positions.cast<float>().cast<double>();
  encoder::Encoder enc(ec, r.seed + 1);
  denoise::DenoiseHead head(ec.d, r.seed + 2);
  const denoise::PretrainResult res = denoise::pretrain(enc, head, corpus, dc, r.seed + 3);
  if (res.diverged) throw NumericalError("denoising pretraining diverged (non-finite loss); lower lr or sigma");
  optim::save_checkpoint(res.best, r.output("checkpoint_out"));
  denoise::write_loss_curve(res.valid_mse, r.output("curve_out"));
  r.log() << std::setprecision(6) << "validation MSE " << res.initial_valid_mse << " -> " << res.best_valid_mse
          << " (best epoch " << res.best_epoch << ")\n";
}

// --- featurize --------------------------------------------------------------

io::Digest partition_digest(const io::CoarseGrainPartition& part) {
  std::ostringstream s;
  for (const auto& sub : part.subsets) {
    for (std::size_t i : sub) s << i << ',';
    s << ';';
  }
  return io::sha256(s.str());
}

void cmd_featurize(Run& r) {
  const auto& c = r.cfg;
  const fs::path traj_path = r.input("trajectory");
  const fs::path top_path = r.input("topology");
  const io::Topology top = io::load_topology(top_path);
  io::Trajectory traj = io::load_xyz_trajectory(traj_path, c.get_float("frame_interval"));
  if (traj.atom_count() != top.atom_count())
    throw DataError("trajectory has " + std::to_string(traj.atom_count()) + " atoms, topology " +
                    std::to_string(top.atom_count()));
  const std::size_t stride = c.get_size("stride");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (stride > 1) traj = io::stride_frames(traj, stride);
  if (r.f32)
    for (auto& f : traj.frames) f = f.cast<float>().cast<double>();

  const std::string kind = c.get_string("features");
  io::FeatureArchive a;
  a.frames = static_cast<std::uint32_t>(traj.frame_count());
  if (kind == "ca_distances" || kind == "ca_dihedrals") {
    const io::FeatureMatrix m =
        kind == "ca_distances" ? io::ca_distance_matrix(traj, top) : io::ca_dihedral_matrix(traj, top);
    a.tokens = 1;
    a.channels = static_cast<std::uint32_t>(m.cols());
    a.scalar.resize(static_cast<std::size_t>(m.size()));
    for (Index i = 0; i < m.size(); ++i) a.scalar[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
    a.encoder_digest = io::sha256(kind);
    std::ostringstream sel;
    for (std::size_t i : io::ca_indices(top)) sel << i << ',';
    a.selection_digest = io::sha256(sel.str());
    a.partition_digest = io::sha256(std::string_view("single-token"));
  } else if (kind == "encoder") {
    const std::string ckpt_path = c.get_string("checkpoint");
    std::optional<optim::Checkpoint> ckpt;
    if (!ckpt_path.empty()) ckpt = optim::load_checkpoint(r.input("checkpoint"));
    const encoder::EncoderConfig ec = ckpt ? ckpt->config : encoder_config(c);
    encoder::Encoder enc(ec, r.seed);
    if (ckpt) optim::restore(*ckpt, ec, {&enc.parameters()});
    a.encoder_digest = io::sha256(optim::encode_checkpoint(optim::snapshot(ec, {&enc.parameters()})));

    const std::string which = c.get_string("selection");
    if (which != "heavy" && which != "all") throw ConfigError("selection must be heavy or all");
    const io::AtomSelection sel = which == "heavy" ? io::select_heavy_atoms(top) : io::select_all_atoms(top);
    const io::CoarseGrainPartition part = io::partition_by_residue(top, sel);
    std::vector<int> z;
    for (std::size_t i : sel.indices) z.push_back(top.elements[i]);
    std::ostringstream sd;
    for (std::size_t i : sel.indices) sd << i << ',';
    a.selection_digest = io::sha256(sd.str());
    a.partition_digest = partition_digest(part);

    const std::size_t m = part.token_count();
    const std::size_t d = ec.d;
    a.tokens = static_cast<std::uint32_t>(m);
    a.channels = static_cast<std::uint32_t>(d);
    a.scalar.assign(a.frames * m * d, 0.0f);
    a.vector = std::vector<float>(a.frames * m * 3 * d, 0.0f);

    // frames are independent, so the output does not depend on the worker count
    auto work = [&](std::size_t first, std::size_t step) {
      ad::NoGradGuard guard;
      for (std::size_t f = first; f < traj.frame_count(); f += step) {
        const auto atoms = enc.forward(io::select_atoms(traj.frames[f], sel), z);
        const Matrix flat = heads::flatten_tokens(heads::pool_tokens(atoms, part));
        for (std::size_t k = 0; k < m * d; ++k) a.scalar[f * m * d + k] = static_cast<float>(flat(0, static_cast<Index>(k)));
        for (std::size_t k = 0; k < m * 3 * d; ++k)
          (*a.vector)[f * m * 3 * d + k] = static_cast<float>(flat(0, static_cast<Index>(m * d + k)));
      }
    };
    const std::size_t workers = std::max<std::size_t>(1, std::min(r.threads, traj.frame_count()));
    if (workers == 1) {
      work(0, 1);
    } else {
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
          try {
            work(w, workers);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& t : pool) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
  } else {
    throw ConfigError("unknown features '" + kind + "' (expected encoder, ca_distances or ca_dihedrals)");
  }
  a.validate();
  io::write_archive(a, r.output("archive_out"));
  r.log() << "archived " << a.frames << " frames x " << a.tokens << " tokens x " << a.channels << " channels\n";
}

// --- shared training plumbing ----------------------------------------------

struct ArchiveFeatures {
  io::FeatureArchive archive;
  Matrix flat;  // F x input width in the lobe layout
  io::Digest file_digest{};
};

ArchiveFeatures load_features(Run& r, const std::string& k) {
  const fs::path p = r.input(k);
  ArchiveFeatures af;
  af.archive = io::read_archive(p);
  af.file_digest = io::sha256(io::read_file(p));
  const auto& a = af.archive;
  const std::size_t sw = static_cast<std::size_t>(a.tokens) * a.channels;
  const std::size_t vw = a.vector ? sw * 3 : 0;
  af.flat.resize(a.frames, static_cast<Index>(sw + vw));
  for (std::size_t f = 0; f < a.frames; ++f) {
    for (std::size_t k2 = 0; k2 < sw; ++k2) af.flat(static_cast<Index>(f), static_cast<Index>(k2)) = a.scalar[f * sw + k2];
    for (std::size_t k2 = 0; k2 < vw; ++k2)
      af.flat(static_cast<Index>(f), static_cast<Index>(sw + k2)) = (*a.vector)[f * vw + k2];
  }
  return af;
}

std::unique_ptr<heads::Lobe> make_lobe(const RunConfig& c, const io::FeatureArchive& a, Index d_o, std::uint64_t seed) {
  const heads::MixerMode mode = heads::parse_mixer_mode(c.get_string("mixer"));
  if (a.vector) {
    heads::HeadConfig hc;
    hc.mixer = mode;
    hc.d = a.channels;
    hc.n_tokens = a.tokens;
    hc.n_mixer_layers = static_cast<Index>(c.get_size("n_mixer_layers"));
    hc.n_gvp_layers = static_cast<Index>(c.get_size("n_gvp_layers"));
    hc.n_attention_heads = static_cast<Index>(c.get_size("n_attention_heads"));
    hc.expansion_factor = static_cast<Index>(c.get_size("expansion_factor"));
    hc.mlp_hidden = static_cast<Index>(c.get_size("mlp_hidden"));
    hc.d_o = d_o;
    hc.dropout = c.get_float("dropout");
    hc.validate();
    return std::make_unique<heads::Geom2vecHead>(hc, seed);
  }
  if (mode != heads::MixerMode::kNone)
    throw ConfigError("mixer '" + c.get_string("mixer") + "' needs an encoder archive with vector channels");
  return std::make_unique<heads::MlpLobe>(static_cast<Index>(a.tokens) * a.channels,
                                          static_cast<Index>(c.get_size("mlp_hidden")), d_o, c.get_float("dropout"),
                                          seed);
}

std::size_t lag_frames(const RunConfig& c) {
  return io::lag_to_frames(c.get_float("lag_ns"), c.get_float("frame_interval"), c.get_size("stride"));
}

io::SplitSpec make_split(const RunConfig& c, std::size_t frames, std::uint64_t seed) {
  return io::make_split(frames, c.get_float("train_fraction"), c.get_size("n_segments"), seed);
}

// --- train-vamp ---------------------------------------------------------------

void cmd_train_vamp(Run& r) {
  const auto& c = r.cfg;
  vamp::VampConfig vc;
  vc.d_o = static_cast<Index>(c.get_size("d_o"));
  vc.lag_frames = lag_frames(c);
  vc.batch_size = c.get_size("batch_size");
  vc.max_epochs = c.get_size("max_epochs");
  vc.lr = c.get_float("lr");
  vc.optimizer = optim::parse_optimizer_mode(c.get_string("optimizer"));
  vc.weight_decay = c.get_float("weight_decay");
  vc.early_stop.train_patience = c.get_size("train_patience");
  vc.early_stop.valid_patience = c.get_size("valid_patience");
  vc.early_stop.valid_interval = c.get_size("valid_interval");
  vc.tie_weights = c.get_bool("tie_weights");
  vc.max_valid_pairs = c.get_size("max_valid_pairs");
  vc.validate();

  const ArchiveFeatures af = load_features(r, "archive");
  auto lobe = make_lobe(c, af.archive, vc.d_o, r.seed);
  std::unique_ptr<heads::Lobe> lobe_t;
  if (!vc.tie_weights) lobe_t = make_lobe(c, af.archive, vc.d_o, r.seed + 1);
  const io::SplitSpec split = make_split(c, af.archive.frames, r.seed);
  const vamp::VampResult res = vamp::train_vampnet(*lobe, lobe_t.get(), af.flat, split, vc, r.seed);

  json meta = {{"kind", "vamp_head"}, {"mixer", c.get_string("mixer")}, {"d_o", vc.d_o},
               {"best_valid_score", res.best_valid_score}, {"steps", res.steps}};
  std::vector<const nn::ParameterSet*> sets{&lobe->parameters()};
  if (lobe_t) sets.push_back(&lobe_t->parameters());
  const optim::Checkpoint model = optim::snapshot(encoder::EncoderConfig{}, sets, meta);
  const fs::path model_path = r.output("model_out");
  optim::save_checkpoint(model, model_path);

  const Matrix cvs = vamp::transform_cvs(*lobe, af.flat);
  io::write_archive(vamp::cv_archive(cvs, io::sha256(optim::encode_checkpoint(model)), af.file_digest),
                    r.output("cvs_out"));
  vamp::write_score_curve(res.curve, r.output("curve_out"));
  r.log() << std::setprecision(6) << "steps " << res.steps << ", best validation VAMP-2 " << res.best_valid_score
          << '\n';
}

// --- train-spib ---------------------------------------------------------------

void cmd_train_spib(Run& r) {
  const auto& c = r.cfg;
  spib::SpibConfig sc;
  sc.d_z = static_cast<Index>(c.get_size("d_z"));
  sc.beta = c.get_float("beta");
  sc.n_initial_states = static_cast<Index>(c.get_size("n_initial_states"));
  sc.lag_frames = lag_frames(c);
  sc.refinement_frequency = c.get_size("refinement_frequency");
  sc.n_pseudo = c.get_size("n_pseudo");
  sc.batch_size = c.get_size("batch_size");
  sc.lr = c.get_float("lr");
  sc.optimizer = optim::parse_optimizer_mode(c.get_string("optimizer"));
  sc.patience = c.get_size("patience");
  sc.max_epochs = c.get_size("max_epochs");
  sc.stable_refinements = c.get_size("stable_refinements");
  sc.decoder_hidden = static_cast<Index>(c.get_size("decoder_hidden"));
  sc.validate();

  const ArchiveFeatures af = load_features(r, "archive");
  const Matrix& x = af.flat;
  if (x.rows() < sc.n_initial_states) throw DataError("fewer frames than initial states");
  const spib::LabelSeries init = spib::kmeans_init(x, sc.n_initial_states, r.seed);
  Matrix pseudo(static_cast<Index>(sc.n_pseudo), x.cols());
  nn::Rng prng(r.seed);
  std::uniform_int_distribution<Index> pick(0, x.rows() - 1);
  for (Index i = 0; i < pseudo.rows(); ++i) pseudo.row(i) = x.row(pick(prng));
  spib::SpibModel model(make_lobe(c, af.archive, 2 * sc.d_z, r.seed), sc.d_z, init.n_labels, sc.decoder_hidden, pseudo,
                        r.seed);
  const io::SplitSpec split = make_split(c, af.archive.frames, r.seed);
  const spib::SpibResult res = spib::train_spib(model, x, init, split, sc, r.seed);

  spib::write_labels(res.labels, r.output("labels_out"));
  const io::Digest model_digest =
      io::sha256(optim::encode_checkpoint(optim::snapshot(encoder::EncoderConfig{}, {&model.encoder().parameters(),
                                                                                      &model.own_parameters()})));
  io::write_archive(vamp::cv_archive(res.ib_coordinates, model_digest, af.file_digest), r.output("ib_out"));
  {
    std::ofstream out(r.output("loss_out"));
    if (!out) throw DataError("cannot write " + r.out_path("loss_out").string());
    out << "# epoch train_loss valid_loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < res.train_loss.size(); ++e)
      out << e << ' ' << res.train_loss[e] << ' ' << (e < res.valid_loss.size() ? res.valid_loss[e] : 0.0) << '\n';
  }
  r.log() << "epochs " << res.epochs << ", states " << res.labels.n_labels << (res.converged ? "" : " (not converged)")
          << '\n';
}

// --- analyze ------------------------------------------------------------------

void cmd_analyze_pmf(Run& r) {
  const auto& c = r.cfg;
  const io::FeatureArchive a = io::read_archive(r.input("input"));
  const Matrix cv = vamp::archive_scalars(a);
  const Index cx = static_cast<Index>(c.get_size("col_x")), cy = static_cast<Index>(c.get_size("col_y"));
  if (cx >= cv.cols() || cy >= cv.cols())
    throw ConfigError("CV column out of range (archive has " + std::to_string(cv.cols()) + ")");
  Matrix pairs(cv.rows(), 2);
  pairs.col(0) = cv.col(cx);
  pairs.col(1) = cv.col(cy);
  const Index bins = static_cast<Index>(c.get_size("bins"));
  const auto units = analysis::parse_units(c.get_string("units"));
  const analysis::PmfGrid g = analysis::pmf2d(pairs, bins, bins, c.get_float("temperature"), units);
  analysis::write_grid(g, r.output("pmf_out"),
                       std::string("pmf ") + (units == analysis::EnergyUnits::kKT ? "kT" : "kcal/mol") + " T=" +
                           std::to_string(c.get_float("temperature")));
}

void cmd_analyze_contacts(Run& r) {
  const auto& c = r.cfg;
  const io::Topology top = io::load_topology(r.input("topology"));
  const io::Trajectory traj = io::load_xyz_trajectory(r.input("trajectory"), c.get_float("frame_interval"));
  io::Frame ref = traj.frames.front();
  if (!c.get_string("reference").empty()) ref = io::load_xyz_trajectory(r.input("reference"), 1.0).frames.front();
  const analysis::NativeContacts nc = analysis::native_contacts(
      ref, traj, top, c.get_float("cutoff"), c.get_size("min_separation"), c.get_float("window_ns"));
  std::ofstream out(r.output("contacts_out"));
  if (!out) throw DataError("cannot write " + r.out_path("contacts_out").string());
  out << "# contacts " << nc.contacts.size() << " window_frames " << nc.window_frames << "\n# frame q q_smooth\n"
      << std::setprecision(17);
  for (std::size_t t = 0; t < nc.q.size(); ++t) out << t << ' ' << nc.q[t] << ' ' << nc.q_smooth[t] << '\n';
}

void cmd_analyze_msm(Run& r) {
  const spib::LabelSeries ls = spib::read_labels(r.input("labels"));
  const spib::Msm msm = spib::msm_from_labels(ls, lag_frames(r.cfg));
  spib::write_msm(msm, r.output("msm_out"));
}

// --- bench ----------------------------------------------------------------------

void cmd_bench(Run& r, const std::string& grid) {
  const auto& c = r.cfg;
  analysis::BenchOptions o;
  o.hidden = parse_list(c.get_string("hidden"), "hidden");
  o.layers = parse_list(c.get_string("layers"), "layers");
  if (grid == "default") {
    o.hidden = {64, 128, 256, 384};
    o.layers = {1, 2, 3, 4, 5, 6};
  } else if (grid == "small") {
    o.hidden = {16, 32};
    o.layers = {1, 2};
  } else if (!grid.empty()) {
    throw ConfigError("unknown grid '" + grid + "' (expected default or small)");
  }
  o.n_atoms = c.get_size("n_atoms");
  o.n_frames = c.get_size("n_frames");
  o.batch = c.get_size("batch");
  o.runs = c.get_size("runs");
  o.warmup = c.get_size("warmup");
  o.memory_budget = c.get_size("memory_budget_mb") << 20;
  o.seed = r.seed;
  const std::string mode = c.get_string("mode");
  if (mode != "both" && mode != "inference" && mode != "training")
    throw ConfigError("mode must be inference, training or both");
  o.inference = mode != "training";
  o.training = mode != "inference";
  const analysis::BenchReport rep = analysis::bench_grid(o);
  analysis::write_bench_text(rep, r.output("report_out"));
  analysis::write_bench_csv(rep, r.output("csv_out"));
  std::size_t missing = 0;
  for (const auto& cell : rep.cells) missing += cell.missing ? 1 : 0;
  r.log() << rep.cells.size() << " cells, " << missing << " missing (memory budget)\n";
}

void write_manifest(Run& r) {
  json m;
  m["command"] = r.command;
  m["tool_version"] = kToolVersion;
  m["seed"] = r.seed;
  m["threads"] = r.threads;
  m["precision"] = r.f32 ? "f32" : "f64";
  m["config"] = r.cfg.values;
  m["inputs"] = r.inputs;
  json outs = json::array();
  for (const auto& p : r.outputs) outs.push_back({{"path", p.string()}, {"blob", io::git_blob_id_of_file(p)}});
  m["outputs"] = outs;
  std::string name = r.cfg.get_string("manifest");
  if (name.empty()) {
    name = r.command;
    std::replace(name.begin(), name.end(), ' ', '-');
    name += ".manifest.json";
  }
  const fs::path path = fs::path(r.cfg.get_string("out_dir")) / name;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << m.dump(2) << '\n';
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> v;
  for (const auto& [k, s] : schemas()) v.push_back(k);
  return v;
}

const Schema& schema_for(const std::string& command) {
  const auto it = schemas().find(command);
  if (it == schemas().end()) throw ConfigError("unknown command '" + command + "'");
  return it->second;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"geom2vec-style featurization, VAMPnet and SPIB pipeline", "g2v"};
  app.require_subcommand(1);
  std::string config_path, precision = "f64", grid;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "flat JSON or key=value config file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", threads, "worker cap (featurize); default 1");
  app.add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--set", sets, "override one config key, key=value");
  app.fallthrough();

  std::string command;
  const std::vector<std::pair<std::string, std::string>> simple{
      {"pretrain", "denoising pretraining of the encoder"},
      {"featurize", "encoder or CA-dihedral features for a trajectory"},
      {"train-vamp", "VAMPnet head on a feature archive"},
      {"train-spib", "SPIB state discovery on a feature archive"},
      {"make-toy", "synthetic two-basin peptide trajectory"}};
  for (const auto& [name, help] : simple)
    app.add_subcommand(name, help)->fallthrough()->callback([&, name = name]() { command = name; });
  auto* bench = app.add_subcommand("bench", "timing and memory grid");
  bench->fallthrough();
  bench->add_option("--grid", grid, "default (hidden 64-384 x layers 1-6) or small");
  bench->callback([&]() { command = "bench"; });
  auto* analyze = app.add_subcommand("analyze", "post-processing");
  analyze->require_subcommand(1)->fallthrough();
  const std::vector<std::pair<std::string, std::string>> analyses{
      {"pmf", "2D free energy surface of two CVs"},
      {"contacts", "fraction of native contacts per frame"},
      {"msm", "transition matrix from a label series"}};
  for (const auto& [name, help] : analyses)
    analyze->add_subcommand(name, help)->fallthrough()->callback([&, name = name]() { command = "analyze " + name; });

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    const Schema& schema = schema_for(command);
    json raw = config_path.empty() ? json::object() : read_config_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      raw[s.substr(0, eq)] = s.substr(eq + 1);
    }
    Run r;
    r.command = command;
    r.cfg = validate_config(raw, schema);
    r.seed = seed;
    r.threads = std::max<std::size_t>(1, threads);
    r.f32 = precision == "f32";
    r.out = &out;
    out << command << " (seed " << seed << ", " << precision << ", threads " << r.threads << ")\n";
    echo_config(r.cfg, schema, out);
    fs::create_directories(r.cfg.get_string("out_dir"));

    static const std::map<std::string, std::function<void(Run&)>> table = {
        {"make-toy", cmd_make_toy},       {"pretrain", cmd_pretrain},
        {"featurize", cmd_featurize},     {"train-vamp", cmd_train_vamp},
        {"train-spib", cmd_train_spib},   {"analyze pmf", cmd_analyze_pmf},
        {"analyze contacts", cmd_analyze_contacts}, {"analyze msm", cmd_analyze_msm}};
    if (command == "bench")
      cmd_bench(r, grid);
    else
      table.at(command)(r);
    write_manifest(r);
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const MemoryExhausted& e) {
    err << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace g2v::cli
