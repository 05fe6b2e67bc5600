#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qsim/rng.hpp"
#include "qsim/tensor.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace qsim;

namespace {

/// Central finite differences on every element of every leaf.
double max_fd_rel_error(const std::function<Tensor()>& build_loss, std::vector<Tensor> leaves) {
  Tensor loss = build_loss();
  for (Tensor& p : leaves) p.zero_grad();
  backward(loss);
  const double eps = 1e-5;
  double worst = 0.0;
  for (Tensor& p : leaves) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.array()[i];
      p.array()[i] = saved + eps;
      const double up = build_loss().value();
      p.array()[i] = saved - eps;
      const double down = build_loss().value();
      p.array()[i] = saved;
      const double fd = (up - down) / (2 * eps);
      const double g = p.has_grad() ? p.grad()[i] : 0.0;
      worst = std::max(worst, std::abs(g - fd) / std::max({1.0, std::abs(g), std::abs(fd)}));
    }
  }
  return worst;
}

Tensor random_leaf(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.array()[i] = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("shapes and scalar accessors") {
  CHECK(shape_size({}) == 1);
  CHECK(shape_size({3, 4}) == 12);
  CHECK(shape_size({0}) == 0);

  Tensor s = Tensor::scalar(2.5);
  CHECK(s.is_scalar());
  CHECK(s.value() == 2.5);

  Tensor m = Tensor::from_matrix(Eigen::MatrixXd::Identity(2, 3));
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.at(0) == 1.0);
  CHECK(m.at(4) == 1.0);  // row-major (1,1)

  std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS(Tensor::from_array({2, 2}, two));
}

TEST_CASE("matmul matches Eigen and rejects bad shapes") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(3, 4), b = Eigen::MatrixXd::Random(4, 2);
  Tensor out = matmul(Tensor::from_matrix(a), Tensor::from_matrix(b));
  Eigen::MatrixXd expected = a * b;
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) CHECK(out.matrix()(i, j) == doctest::Approx(expected(i, j)));
  CHECK_THROWS(matmul(Tensor::from_matrix(a), Tensor::from_matrix(a)));
}

TEST_CASE("constant loss leaves unrelated parameters without gradient") {
  Tensor w = Tensor::from_vector(Eigen::Vector3d(1, 2, 3), true);
  Tensor other = Tensor::from_vector(Eigen::Vector2d(1, 1), true);
  Tensor loss = sum(other);
  w.zero_grad();
  backward(loss);
  CHECK_FALSE(w.has_grad());  // no dependence -> gradient is identically zero
  CHECK(other.grad()[0] == 1.0);
}

TEST_CASE("sum of squares has gradient 2w") {
  Tensor w = Tensor::from_vector(Eigen::Vector3d(1.0, -2.0, 0.5), true);
  backward(sum(mul(w, w)));
  CHECK(w.grad()[0] == doctest::Approx(2.0));
  CHECK(w.grad()[1] == doctest::Approx(-4.0));
  CHECK(w.grad()[2] == doctest::Approx(1.0));
}

TEST_CASE("repeated backward without zeroing accumulates") {
  Tensor w = Tensor::from_vector(Eigen::Vector2d(1.0, 1.0), true);
  backward(sum(w));
  backward(sum(w));
  CHECK(w.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("shared subexpression gradients accumulate once per path") {
  Tensor x = Tensor::scalar(3.0, true);
  // z = x*x + x  ->  dz/dx = 2x + 1 = 7
  backward(add(mul(x, x), x));
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("backward rejects non-scalar losses and detached graphs") {
  Tensor w = Tensor::from_vector(Eigen::Vector2d(1.0, 2.0), true);
  CHECK_THROWS(backward(mul(w, w)));
  Tensor detached = Tensor::from_vector(Eigen::Vector2d(1.0, 2.0), false);
  CHECK_THROWS(backward(sum(detached)));
}

TEST_CASE("activation forward values") {
  Tensor x = Tensor::from_vector(Eigen::Vector3d(-1.0, 0.0, 2.0));
  CHECK(relu(x).to_vector().isApprox(Eigen::Vector3d(0, 0, 2)));
  CHECK(qsim::abs(x).to_vector().isApprox(Eigen::Vector3d(1, 0, 2)));
  CHECK(elu(x).at(0) == doctest::Approx(std::expm1(-1.0)));
  CHECK(elu(x).at(2) == doctest::Approx(2.0));
  CHECK(qsim::tanh(x).at(2) == doctest::Approx(std::tanh(2.0)));
}

TEST_CASE("finite-difference check across every op") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({4, 2}, rng);
    Tensor bias = random_leaf({2}, rng);
    Tensor c = random_leaf({3, 2}, rng);

    auto loss = [&] {
      Tensor h = add(matmul(a, b), bias);         // broadcast add
      Tensor mixed = mul(elu(h), qsim::tanh(c));  // elementwise
      Tensor cat = hcat(std::vector<Tensor>{relu(mixed), qsim::abs(h)});
      Tensor r0 = row(cat, 1);
      std::vector<Eigen::Index> picks = {0, 3, 2};
      Tensor sel = select_columns(cat, picks);
      std::vector<Tensor> scalars = {sum(r0), mean(cat), sum(sel)};
      Tensor stacked = stack_scalars(scalars);
      return add(mean(stacked), scale(sum(sum_rows(reshape(mixed, {2, 3}))), 0.5));
    };
    CHECK(max_fd_rel_error(loss, {a, b, bias, c}) < 1e-6);
  }
}

TEST_CASE("NoGradGuard suppresses taping") {
  Tensor w = Tensor::from_vector(Eigen::Vector2d(1.0, 2.0), true);
  NoGradGuard guard;
  Tensor y = sum(mul(w, w));
  CHECK_FALSE(y.requires_grad());
  CHECK_FALSE(y.has_tape());
}

TEST_CASE("check_finite flags NaN and Inf") {
  Tensor ok = Tensor::from_vector(Eigen::Vector2d(1.0, 2.0));
  CHECK_NOTHROW(check_finite(ok, "values"));
  Tensor bad = Tensor::from_vector(Eigen::Vector2d(1.0, std::nan("")));
  CHECK_THROWS_AS(check_finite(bad, "values"), std::runtime_error);
}

TEST_CASE("rng streams are deterministic and name-separated") {
  Rng a = Rng::substream(123, "env");
  Rng b = Rng::substream(123, "env");
  Rng c = Rng::substream(123, "explore");
  bool diverged = false;
  for (int i = 0; i < 16; ++i) {
    const std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) diverged = true;
  }
  CHECK(diverged);

  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    const std::int64_t k = u.uniform_int(7);
    CHECK(k >= 0);
    CHECK(k < 7);
  }
}

TEST_CASE("rng normal moments are sane") {
  Rng rng(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200'000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.02));
}
