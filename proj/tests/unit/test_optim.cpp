// SPDX-License-Identifier: Apache-2.0
#include "g2v/error.hpp"
#include "g2v/optim/optim.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace g2v;
using ad::Index;
using ad::Matrix;
using ad::Tensor;

namespace {

// Loss whose gradient with respect to p is exactly g.
void feed_gradient(const Tensor& p, const Matrix& g) { ad::sum(ad::mul(p, Tensor::constant(g))).backward(); }

// Reference Adam run written out longhand.
struct RefAdam {
  double m = 0, v = 0, vmax = 0, theta;
  int t = 0;
  explicit RefAdam(double th) : theta(th) {}
  void step(double g, const optim::OptimizerConfig& c) {
    ++t;
    theta *= 1.0 - c.lr * c.weight_decay;
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    vmax = std::max(vmax, v);
    const double mh = m / (1 - std::pow(c.beta1, t));
    if (c.mode == optim::OptimizerMode::kAdamWAmsgrad)
      theta -= c.lr * mh / (std::sqrt(vmax / (1 - std::pow(c.beta2, t))) + c.eps);
    else
      theta -= c.lr * std::atan2(mh, std::sqrt(v / (1 - std::pow(c.beta2, t))));
  }
};

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("mode names round trip") {
    for (auto m : {optim::OptimizerMode::kAdamWAmsgrad, optim::OptimizerMode::kAdamAtan2})
      CHECK(optim::parse_optimizer_mode(optim::to_string(m)) == m);
    CHECK_THROWS_AS(optim::parse_optimizer_mode("sgd"), ConfigError);
  }

  TEST_CASE("first step sizes") {
    for (auto mode : {optim::OptimizerMode::kAdamWAmsgrad, optim::OptimizerMode::kAdamAtan2}) {
      nn::ParameterSet ps;
      const Tensor p = ps.add("p", Matrix::Zero(1, 3));
      optim::OptimizerConfig cfg;
      cfg.mode = mode;
      cfg.lr = 0.01;
      optim::Optimizer opt(cfg, {&ps});
      Matrix g(1, 3);
      g << 2.0, -0.5, 0.0;
      feed_gradient(p, g);
      opt.step();
      const double unit = mode == optim::OptimizerMode::kAdamAtan2 ? M_PI / 4.0 : 1.0;
      CHECK(p.value()(0, 0) == doctest::Approx(-0.01 * unit).epsilon(1e-6));
      CHECK(p.value()(0, 1) == doctest::Approx(0.01 * unit).epsilon(1e-6));
      CHECK(p.value()(0, 2) == 0.0);
    }
  }

  TEST_CASE("multi-step trajectories match the longhand update") {
    for (auto mode : {optim::OptimizerMode::kAdamWAmsgrad, optim::OptimizerMode::kAdamAtan2}) {
      nn::ParameterSet ps;
      const Tensor p = ps.add("p", Matrix::Constant(1, 1, 0.7));
      optim::OptimizerConfig cfg;
      cfg.mode = mode;
      cfg.lr = 0.05;
      cfg.weight_decay = 0.1;
      optim::Optimizer opt(cfg, {&ps});
      RefAdam ref(0.7);
      const double grads[] = {1.0, -3.0, 0.2, 0.2, -0.01, 5.0, 0.0};
      for (double g : grads) {
        opt.zero_grad();
        feed_gradient(p, Matrix::Constant(1, 1, g));
        opt.step();
        ref.step(g, cfg);
        CHECK(p.value()(0, 0) == doctest::Approx(ref.theta).epsilon(1e-12));
      }
      CHECK(opt.step_count() == 7);
    }
  }

  TEST_CASE("missing gradients count as zero and non-finite ones abort") {
    nn::ParameterSet ps;
    const Tensor p = ps.add("p", Matrix::Ones(2, 2));
    optim::OptimizerConfig cfg;
    optim::Optimizer opt(cfg, {&ps});
    opt.step();
    CHECK((p.value().array() == 1.0).all());
    feed_gradient(p, Matrix::Constant(2, 2, std::nan("")));
    CHECK_THROWS_AS(opt.step(), NumericalError);
  }

  TEST_CASE("keep_rows trims parameter and moments") {
    nn::ParameterSet ps;
    Matrix init(4, 2);
    init << 1, 2, 3, 4, 5, 6, 7, 8;
    const Tensor p = ps.add("p", init);
    optim::Optimizer opt({}, {&ps});
    feed_gradient(p, Matrix::Ones(4, 2));
    opt.step();
    const Matrix before = p.value();
    opt.keep_rows("p", {3, 1});
    REQUIRE(p.value().rows() == 2);
    CHECK(p.value().row(0) == before.row(3));
    CHECK(p.value().row(1) == before.row(1));
    CHECK(opt.slots()[0].m.rows() == 2);
    CHECK(opt.slots()[0].v_max.rows() == 2);
    opt.keep_cols("p", {1});
    CHECK(p.value().cols() == 1);
    CHECK(p.value()(0, 0) == before(3, 1));
  }

  TEST_CASE("early stopping counts strict improvements") {
    optim::EarlyStopConfig cfg;
    cfg.train_patience = 3;
    cfg.valid_patience = 2;
    optim::EarlyStop es(cfg);
    CHECK_FALSE(es.update_train(1.0));
    CHECK_FALSE(es.update_train(1.0));  // tie is not an improvement
    CHECK_FALSE(es.update_train(0.5));
    CHECK(es.update_train(1.0));
    CHECK(es.stopped());

    optim::EarlyStop ev(cfg);
    CHECK(ev.update_valid(0.3) == std::make_pair(false, true));
    CHECK(ev.update_valid(0.4) == std::make_pair(false, true));
    CHECK(ev.update_valid(0.2) == std::make_pair(false, false));
    CHECK(ev.update_valid(0.4) == std::make_pair(true, false));
    CHECK(ev.best_valid() == 0.4);

    cfg.valid_patience = 0;
    CHECK_THROWS_AS(optim::EarlyStop{cfg}, ConfigError);
  }

  TEST_CASE("checkpoint round trip and corruption") {
    encoder::EncoderConfig ec;
    ec.d = 8;
    ec.n_heads = 2;
    ec.n_rbf = 4;
    ec.n_layers = 1;
    encoder::Encoder a(ec, 1), b(ec, 2);
    const auto ck = optim::snapshot(ec, {&a.parameters()}, {{"epoch", 3}});
    const auto bytes = optim::encode_checkpoint(ck);
    const auto back = optim::decode_checkpoint(bytes);
    CHECK(back.config == ec);
    CHECK(back.metadata["epoch"] == 3);
    REQUIRE(back.params.size() == ck.params.size());

    const auto path = std::filesystem::temp_directory_path() / "g2v_optim_test.ckpt";
    optim::save_checkpoint(ck, path);
    optim::restore(optim::load_checkpoint(path), ec, {&b.parameters()});
    std::filesystem::remove(path);
    for (std::size_t k = 0; k < a.parameters().size(); ++k)
      CHECK(a.parameters().entries()[k].second.value() == b.parameters().entries()[k].second.value());

    auto bad = bytes;
    bad[bad.size() / 2] ^= 0x01;
    CHECK_THROWS_WITH_AS(optim::decode_checkpoint(bad), "checkpoint digest mismatch", DataError);
    bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(optim::decode_checkpoint(bad), DataError);

    auto other = ec;
    other.d = 16;
    other.n_heads = 4;
    encoder::Encoder c(other, 0);
    CHECK_THROWS_AS(optim::restore(back, other, {&c.parameters()}), ConfigError);
    nn::ParameterSet extra;
    extra.add("head.w", Matrix::Zero(2, 2));
    CHECK_THROWS_AS(optim::restore(back, ec, {&extra}), ConfigError);
  }

  TEST_CASE("grad_check flags a wrong gradient") {
    nn::ParameterSet ps;
    const Tensor p = ps.add("p", Matrix::Constant(2, 2, 0.5));
    auto good = [&]() { return ad::sum(ad::square(p)); };
    CHECK(optim::grad_check(good, {&ps}).max_rel_error < 1e-8);
    // stop the gradient through one factor: analytic is half the true value
    auto wrong = [&]() { return ad::sum(ad::mul(p, Tensor::constant(p.value()))); };
    CHECK(optim::grad_check(wrong, {&ps}).max_rel_error > 0.4);
  }
}
