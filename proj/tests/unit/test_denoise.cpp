// SPDX-License-Identifier: Apache-2.0
#include "g2v/denoise/denoise.hpp"
#include "g2v/error.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>

using namespace g2v;
using namespace g2v::testing;

TEST_SUITE("denoise") {
  TEST_CASE("synthetic corpus is a set of bonded trees") {
    const auto corpus = denoise::make_synthetic_corpus(40, 5, 10, 3);
    REQUIRE(corpus.size() == 40);
    for (const auto& c : corpus) {
      const Index n = c.positions.rows();
      CHECK(n >= 5);
      CHECK(n <= 10);
      CHECK(c.positions.colwise().mean().norm() < 1e-12);
      for (int z : c.z) CHECK((z == 6 || z == 7 || z == 8));
      // every later atom hangs off an earlier one at the ideal length
      for (Index i = 1; i < n; ++i) {
        bool bonded = false;
        for (Index j = 0; j < i && !bonded; ++j)
          bonded = std::abs((c.positions.row(i) - c.positions.row(j)).norm() -
                            denoise::bond_length(c.z[i], c.z[j])) < 1e-9;
        CHECK(bonded);
      }
    }
    const auto again = denoise::make_synthetic_corpus(40, 5, 10, 3);
    CHECK(again[17].positions == corpus[17].positions);
    CHECK_THROWS_AS(denoise::make_synthetic_corpus(1, 6, 5, 0), ConfigError);
  }

  TEST_CASE("corruption adds the reported displacement") {
    const io::Frame x = io::Frame::Zero(4000, 3);
    const auto c = denoise::corrupt_frame(x, 0.2, 9);
    CHECK((c.noisy - x - c.displacement).norm() == 0.0);
    const Eigen::RowVector3d mean = c.displacement.colwise().mean();
    CHECK(mean.norm() < 0.02);
    const double sd = std::sqrt(c.displacement.array().square().mean());
    CHECK(sd == doctest::Approx(0.2).epsilon(0.03));
    CHECK(denoise::corrupt_frame(x, 0.2, 9).displacement == c.displacement);
    CHECK_THROWS_AS(denoise::corrupt_frame(x, 0.0, 9), ConfigError);
  }

  TEST_CASE("displacement statistics match a direct loop") {
    Rng rng(2);
    std::normal_distribution<double> g(0.3, 1.7);
    std::vector<io::Frame> frames;
    for (int k = 0; k < 5; ++k) frames.push_back(io::Frame::NullaryExpr(3 + k, 3, [&]() { return g(rng); }));
    double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
    double n = 0;
    for (const auto& f : frames)
      for (Index i = 0; i < f.rows(); ++i) {
        n += 1;
        for (int a = 0; a < 3; ++a) sum[a] += f(i, a);
      }
    for (const auto& f : frames)
      for (Index i = 0; i < f.rows(); ++i)
        for (int a = 0; a < 3; ++a) sq[a] += std::pow(f(i, a) - sum[a] / n, 2);
    const auto st = denoise::displacement_stats(frames);
    for (int a = 0; a < 3; ++a) {
      CHECK(st.mean[a] == doctest::Approx(sum[a] / n).epsilon(1e-12));
      CHECK(st.std[a] == doctest::Approx(std::sqrt(sq[a] / n)).epsilon(1e-12));
    }
    const io::Frame z = st.standardize(frames[0]);
    CHECK(z(1, 2) == doctest::Approx((frames[0](1, 2) - st.mean[2]) / st.std[2]));
  }

  TEST_CASE("denoise head output rotates with the input") {
    encoder::EncoderConfig ec;
    ec.d = 16;
    ec.n_heads = 4;
    ec.n_rbf = 8;
    ec.n_layers = 1;
    const encoder::Encoder enc(ec, 1);
    denoise::DenoiseHead head(16, 2);
    Rng rng(3);
    // the output projection starts at zero; give it values so the check means something
    head.parameters().assign("denoise.geb1.w2.weight", random_blocks(8, 1, rng)[0]);
    const auto s = random_system(rng, 10);
    const Eigen::Matrix3d r = random_rotation(rng);
    const Matrix a = head(enc.forward(s.x, s.z)).value();
    const Matrix b = head(enc.forward(move(s.x, r, random_translation(rng)), s.z)).value();
    REQUIRE(a.cols() == 3);
    CHECK(a.norm() > 1e-6);
    CHECK(rel_diff(Matrix(a * r.transpose()), b) < 1e-10);
  }

  TEST_CASE("short pretraining lowers validation error") {
    encoder::EncoderConfig ec;
    ec.d = 16;
    ec.n_heads = 4;
    ec.n_rbf = 16;
    ec.n_layers = 2;
    encoder::Encoder enc(ec, 5);
    denoise::DenoiseHead head(16, 6);
    const auto corpus = denoise::make_synthetic_corpus(40, 5, 10, 1);
    denoise::DenoiseConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 10;
    cfg.n_valid = 10;
    cfg.lr = 2e-3;
    const auto res = denoise::pretrain(enc, head, corpus, cfg, 7);
    CHECK_FALSE(res.diverged);
    CHECK(res.valid_mse.size() == 6);
    CHECK(res.train_mse.size() == 6);
    CHECK(res.best_valid_mse == *std::min_element(res.valid_mse.begin(), res.valid_mse.end()));
    CHECK(res.best_valid_mse < res.initial_valid_mse);
    CHECK_FALSE(res.best.params.empty());
  }

  TEST_CASE("config checks") {
    denoise::DenoiseConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.noise_sigma = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.n_valid = 5;
    encoder::EncoderConfig ec;
    ec.d = 8;
    ec.n_heads = 2;
    ec.n_rbf = 4;
    ec.n_layers = 1;
    encoder::Encoder enc(ec, 0);
    denoise::DenoiseHead head(8, 0);
    // everything would be validation
    CHECK_THROWS(denoise::pretrain(enc, head, denoise::make_synthetic_corpus(5, 3, 4, 0), cfg, 0));
  }
}
