#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsim/nn.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace qsim;

namespace {

/// Plain loop-nest forward pass, independent of the tape.
Eigen::VectorXd naive_forward(const MlpSpec& spec, const MlpParams& params, Eigen::VectorXd x) {
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto w = params.weights[l].matrix();
    Eigen::VectorXd next = Eigen::VectorXd::Zero(w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double acc = params.biases[l].at(j);
      for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[i] * w(i, j);
      next[j] = acc;
    }
    const bool last = l + 1 == params.weights.size();
    const Activation act = last ? spec.final_activation : spec.hidden_activation;
    for (Eigen::Index j = 0; j < next.size(); ++j) {
      if (act == Activation::ReLU) next[j] = std::max(0.0, next[j]);
      if (act == Activation::Tanh) next[j] = std::tanh(next[j]);
    }
    x = next;
  }
  return x;
}

}  // namespace

TEST_CASE("all-zero parameters with identity output give zero") {
  MlpSpec spec{{4, 3, 2}, Activation::ReLU, Activation::Identity};
  MlpParams params = MlpParams::zeros(spec);
  Eigen::VectorXd out = mlp_eval(spec, params, Eigen::Vector4d(1.0, -2.0, 0.5, 3.0));
  CHECK(out.isZero());
}

TEST_CASE("single identity layer reproduces its input") {
  MlpSpec spec{{3, 3}, Activation::Identity, Activation::Identity};
  MlpParams params = MlpParams::zeros(spec);
  params.weights[0].matrix() = Eigen::Matrix3d::Identity();
  const Eigen::Vector3d x(0.3, -1.2, 4.0);
  CHECK(mlp_eval(spec, params, x).isApprox(x));
}

TEST_CASE("random two-layer relu net matches the hand-rolled forward pass") {
  Rng rng(99);
  MlpSpec spec{{5, 8, 3}, Activation::ReLU, Activation::Identity};
  MlpParams params = MlpParams::init(spec, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x[i] = rng.normal();
    CHECK(mlp_eval(spec, params, x).isApprox(naive_forward(spec, params, x), 1e-12));
  }
}

TEST_CASE("mlp_forward validates widths and finiteness") {
  MlpSpec spec{{3, 2}, Activation::ReLU, Activation::Identity};
  MlpParams params = MlpParams::zeros(spec);
  CHECK_THROWS(mlp_eval(spec, params, Eigen::Vector2d(1, 2)));
  Eigen::Vector3d bad(1.0, std::nan(""), 0.0);
  CHECK_THROWS(mlp_eval(spec, params, bad));
  MlpSpec degenerate;
  degenerate.layer_widths = {4};
  CHECK_THROWS(degenerate.validate());
}

TEST_CASE("initialization is inside the fan-in bound and seed-deterministic") {
  MlpSpec spec{{16, 8}, Activation::ReLU, Activation::Identity};
  Rng a(7), b(7);
  MlpParams pa = MlpParams::init(spec, a), pb = MlpParams::init(spec, b);
  const double bound = 1.0 / std::sqrt(16.0);
  for (Eigen::Index i = 0; i < pa.weights[0].size(); ++i) {
    CHECK(std::abs(pa.weights[0].at(i)) <= bound);
    CHECK(pa.weights[0].at(i) == pb.weights[0].at(i));  // bitwise
  }
}

TEST_CASE("sgd step: lr 0.1, param 1, grad 2 -> 0.8") {
  Tensor p = Tensor::scalar(1.0, true);
  Optimizer opt({p}, {OptimizerKind::Sgd, 0.1});
  backward(scale(p, 2.0));
  opt.step();
  CHECK(p.value() == doctest::Approx(0.8));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("zero gradient leaves parameter values unchanged") {
  Tensor p = Tensor::scalar(3.0, true);
  Optimizer opt({p}, {OptimizerKind::Adam, 0.01});
  backward(mul(p, Tensor::scalar(0.0)));  // gradient identically 0
  opt.step();
  CHECK(p.value() == 3.0);
}

TEST_CASE("adam first step moves by about lr against the gradient") {
  // hand evaluation at t=1: m_hat = g, v_hat = g^2, step = lr * g/(|g|+eps)
  Tensor p = Tensor::scalar(0.0, true);
  const double lr = 0.0005;
  Optimizer opt({p}, {OptimizerKind::Adam, lr});
  backward(p);  // d(p)/dp = 1
  opt.step();
  CHECK(p.value() == doctest::Approx(-lr).epsilon(1e-6));
  CHECK(std::abs(p.value() + lr / (1.0 + 1e-8)) < 1e-15);
}

TEST_CASE("optimizer rejects non-finite gradients") {
  Tensor p = Tensor::scalar(1.0, true);
  Optimizer opt({p}, {OptimizerKind::Sgd, 0.1});
  backward(scale(p, 1.0));
  p.node()->grad[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(opt.step(), std::runtime_error);
}

TEST_CASE("identical seeds give bitwise-identical training arithmetic") {
  auto run_once = [] {
    Rng rng(2024);
    MlpSpec spec{{4, 6, 2}, Activation::Tanh, Activation::Identity};
    MlpParams params = MlpParams::init(spec, rng);
    Optimizer opt(params.all(), {OptimizerKind::Adam, 0.001});
    Eigen::MatrixXd x(3, 4), y(3, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    for (int it = 0; it < 5; ++it) {
      opt.zero_grad();
      backward(mse(mlp_forward(spec, params, Tensor::from_matrix(x)), Tensor::from_matrix(y)));
      opt.step();
    }
    return params.weights[0].to_vector();
  };
  const Eigen::VectorXd first = run_once(), second = run_once();
  for (Eigen::Index i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "qsim_test_checkpoint.bin";
  Rng rng(5);
  MlpSpec spec{{3, 4}, Activation::ReLU, Activation::Identity};
  MlpParams params = MlpParams::init(spec, rng);
  save_checkpoint(path.string(), {{"w0", params.weights[0]}, {"b0", params.biases[0]}});

  const auto loaded = load_checkpoint(path.string());
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name == "w0");
  CHECK(loaded[0].tensor.shape() == params.weights[0].shape());
  for (Eigen::Index i = 0; i < params.weights[0].size(); ++i)
    CHECK(loaded[0].tensor.at(i) == params.weights[0].at(i));
  fs::remove(path);

  CHECK_THROWS(load_checkpoint((fs::temp_directory_path() / "missing_ckpt.bin").string()));
}
