#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "laspa/graph.hpp"
#include "laspa/rng.hpp"
#include "support/fd.hpp"

using laspa::Mat;
using laspa::Rng;
using laspa::ag::Graph;
using laspa::ag::Var;
using laspa::testsupport::fd_grad;
using laspa::testsupport::rel_err;

namespace {

Mat<double> randm(Rng& r, int rows, int cols, double scale = 1.0) {
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * r.gaussian();
  return m;
}

// Checks d mean(expr(a, b)) / d{a, b} against central differences.
template <typename Build>
void check_binary(Mat<double> a0, Mat<double> b0, Build build,
                  double tol = 1e-7) {
  auto scalar = [&] {
    Graph<double> g;
    auto a = g.input(a0, true);
    auto b = g.input(b0, true);
    return g.val(g.mean_all(build(g, a, b)))(0, 0);
  };
  Mat<double> fa = fd_grad(a0, scalar);
  Mat<double> fb = fd_grad(b0, scalar);
  Graph<double> g;
  auto a = g.input(a0, true);
  auto b = g.input(b0, true);
  g.backward(g.mean_all(build(g, a, b)));
  REQUIRE(rel_err(g.grad(a), fa) < tol);
  REQUIRE(rel_err(g.grad(b), fb) < tol);
}

template <typename Build>
void check_unary(Mat<double> a0, Build build, double tol = 1e-7) {
  auto scalar = [&] {
    Graph<double> g;
    auto a = g.input(a0, true);
    return g.val(g.mean_all(build(g, a)))(0, 0);
  };
  Mat<double> fa = fd_grad(a0, scalar);
  Graph<double> g;
  auto a = g.input(a0, true);
  g.backward(g.mean_all(build(g, a)));
  REQUIRE(rel_err(g.grad(a), fa) < tol);
}

}  // namespace

TEST_CASE("arithmetic ops match finite differences") {
  Rng r(1);
  auto A = randm(r, 4, 5), B = randm(r, 4, 5);
  check_binary(A, B, [](auto& g, auto a, auto b) { return g.add(a, b); });
  check_binary(A, B, [](auto& g, auto a, auto b) { return g.sub(a, b); });
  check_binary(A, B, [](auto& g, auto a, auto b) { return g.mul(a, b); });
  check_unary(A, [](auto& g, auto a) { return g.scale(a, 2.5); });
  check_unary(A, [](auto& g, auto a) { return g.add_scalar(a, -1.25); });
}

TEST_CASE("matrix products match finite differences") {
  Rng r(2);
  check_binary(randm(r, 3, 4), randm(r, 4, 5),
               [](auto& g, auto a, auto b) { return g.matmul(a, b); });
  check_binary(randm(r, 3, 4), randm(r, 5, 4),
               [](auto& g, auto a, auto b) { return g.matmul_nt(a, b); });
}

TEST_CASE("broadcast ops match finite differences") {
  Rng r(3);
  check_binary(randm(r, 4, 6), randm(r, 1, 6),
               [](auto& g, auto a, auto b) { return g.add_rowvec(a, b); });
  check_binary(randm(r, 4, 6), randm(r, 4, 1),
               [](auto& g, auto a, auto b) { return g.mul_colvec(a, b); });
  Mat<double> c = randm(r, 4, 1);
  c = c.array().abs() + 0.5;  // keep the divisor away from zero
  check_binary(randm(r, 4, 6), c,
               [](auto& g, auto a, auto b) { return g.div_colvec(a, b); });
}

TEST_CASE("unary ops match finite differences") {
  Rng r(4);
  auto A = randm(r, 5, 4);
  check_unary(A, [](auto& g, auto a) { return g.relu(a); }, 1e-6);
  check_unary(A, [](auto& g, auto a) { return g.sigmoid(a); });
  check_unary(A, [](auto& g, auto a) { return g.tanh_v(a); });
  check_unary(A, [](auto& g, auto a) { return g.exp_v(a); });
  check_unary(A, [](auto& g, auto a) { return g.square(a); });
  check_unary(A, [](auto& g, auto a) { return g.abs_v(a); });
  check_unary(A, [](auto& g, auto a) { return g.cos_v(a); });
  check_unary(A, [](auto& g, auto a) { return g.min_scalar(a, 0.3); });
  Mat<double> P = A.array().abs().matrix() + Mat<double>::Constant(5, 4, 0.5);
  check_unary(P, [](auto& g, auto a) { return g.log_v(a); });
  check_unary(P, [](auto& g, auto a) { return g.sqrt_v(a); });
  check_unary(P, [](auto& g, auto a) { return g.guarded_inv_sqrt(a, 1e-12); });
  Mat<double> U = randm(r, 5, 4, 0.4);  // inside (-1, 1) for acos
  check_unary(U, [](auto& g, auto a) { return g.acos_clamped(a, -0.999999, 0.999999); });
}

TEST_CASE("guarded_inv_sqrt zeroes tiny-variance entries") {
  Graph<double> g;
  Mat<double> v(1, 3);
  v << 1e-13, 4.0, 0.25;
  auto y = g.guarded_inv_sqrt(g.constant(v), 1e-12);
  REQUIRE(g.val(y)(0, 0) == 0.0);
  REQUIRE(g.val(y)(0, 1) == Catch::Approx(0.5));
  REQUIRE(g.val(y)(0, 2) == Catch::Approx(2.0));
}

TEST_CASE("softmax rows: stochastic, shift-invariant, FD-correct") {
  Rng r(5);
  auto A = randm(r, 6, 7);
  check_unary(A, [](auto& g, auto a) {
    auto s = g.softmax_rows(a);
    return g.mul(s, s);  // nonlinear readout so the gradient is nontrivial
  });
  Graph<double> g;
  auto s = g.softmax_rows(g.constant(A));
  for (int i = 0; i < 6; ++i) {
    REQUIRE(g.val(s).row(i).minCoeff() >= 0.0);
    REQUIRE(std::abs(g.val(s).row(i).sum() - 1.0) < 1e-12);
  }
  Mat<double> shifted = A;
  shifted.array() += 17.5;
  Graph<double> g2;
  auto s2 = g2.softmax_rows(g2.constant(shifted));
  REQUIRE((g.val(s) - g2.val(s2)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("logsumexp and gather match finite differences") {
  Rng r(6);
  auto A = randm(r, 5, 4);
  check_unary(A, [](auto& g, auto a) { return g.logsumexp_rows(a); });
  std::vector<int> idx{0, 3, 1, 2, 0};
  check_unary(A, [idx](auto& g, auto a) { return g.gather_cols(a, idx); });
}

TEST_CASE("reductions match finite differences") {
  Rng r(7);
  auto A = randm(r, 5, 3);
  check_unary(A, [](auto& g, auto a) { return g.sum_all(a); });
  check_unary(A, [](auto& g, auto a) { return g.square(g.colmean(a)); });
  check_unary(A, [](auto& g, auto a) { return g.square(g.rowsum(a)); });
  check_unary(A, [](auto& g, auto a) { return g.square(g.center_cols(a)); });
}

TEST_CASE("shape ops match finite differences") {
  Rng r(8);
  check_binary(randm(r, 4, 3), randm(r, 4, 2), [](auto& g, auto a, auto b) {
    return g.square(g.hconcat(a, b));
  });
  check_binary(randm(r, 2, 3), randm(r, 3, 3), [](auto& g, auto a, auto b) {
    return g.square(g.vstack({a, b}));
  });
  auto A = randm(r, 4, 6);
  check_unary(A, [](auto& g, auto a) { return g.slice_cols(a, 1, 3); });
  check_unary(A, [](auto& g, auto a) { return g.slice_rows(a, 2, 2); });
}

TEST_CASE("im2col forward places patches with zero padding") {
  // 1 image, 3x3, 1 channel, k=3, stride 1, pad 1 -> center patch is the image
  Graph<double> g;
  Mat<double> x(9, 1);
  for (int i = 0; i < 9; ++i) x(i, 0) = i + 1;
  auto cols = g.im2col(g.constant(x), 1, 3, 3, 1, 3, 1, 1);
  REQUIRE(g.val(cols).rows() == 9);
  REQUIRE(g.val(cols).cols() == 9);
  // Output row 4 = patch centered at (1,1) = whole image flattened.
  for (int i = 0; i < 9; ++i) REQUIRE(g.val(cols)(4, i) == i + 1);
  // Corner patch (0,0): top-left entries are padding zeros.
  REQUIRE(g.val(cols)(0, 0) == 0.0);
  REQUIRE(g.val(cols)(0, 4) == 1.0);
}

TEST_CASE("im2col gradient matches finite differences") {
  Rng r(9);
  auto X = randm(r, 2 * 5 * 4, 3);  // B=2, H=5, W=4, C=3
  check_unary(X, [](auto& g, auto a) {
    return g.square(g.im2col(a, 2, 5, 4, 3, 3, 2, 1));
  });
}

TEST_CASE("time_stats_pool: values and gradient") {
  Rng r(10);
  const int B = 2, To = 6, Mo = 3, C = 2;
  auto X = randm(r, B * To * Mo, C);
  Graph<double> g;
  auto y = g.time_stats_pool(g.input(X, false), B, To, Mo, 1e-12);
  REQUIRE(g.val(y).rows() == B);
  REQUIRE(g.val(y).cols() == 2 * Mo * C);
  // Hand-check one mean and std.
  double s = 0, s2 = 0;
  for (int t = 0; t < To; ++t) {
    double v = X((0 * To + t) * Mo + 1, 1);
    s += v;
    s2 += v * v;
  }
  double mu = s / To;
  double var = s2 / To - mu * mu;
  REQUIRE(g.val(y)(0, 1 * C + 1) == Catch::Approx(mu));
  REQUIRE(g.val(y)(0, Mo * C + 1 * C + 1) ==
          Catch::Approx(std::sqrt(var + 1e-12)));
  check_unary(X, [&](auto& gg, auto a) {
    return gg.square(gg.time_stats_pool(a, B, To, Mo, 1e-12));
  }, 1e-6);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Graph<double> g;
  auto a = g.input(Mat<double>::Ones(2, 2), true);
  REQUIRE_THROWS_AS(g.backward(a), std::invalid_argument);
}

TEST_CASE("gradients accumulate across fan-out") {
  // f = mean(a + a) => df/da = 2/size
  Graph<double> g;
  auto a = g.input(Mat<double>::Ones(2, 3), true);
  g.backward(g.mean_all(g.add(a, a)));
  REQUIRE(g.grad(a).isApproxToConstant(2.0 / 6.0, 1e-14));
}

TEST_CASE("constants receive no gradient work") {
  Graph<double> g;
  auto a = g.input(Mat<double>::Ones(2, 2), true);
  auto c = g.constant(Mat<double>::Ones(2, 2));
  g.backward(g.mean_all(g.mul(a, c)));
  REQUIRE(g.grad(c).size() == 0);
  REQUIRE(g.grad(a).size() == 4);
}
