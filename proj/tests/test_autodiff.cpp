#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "kat/reference.hpp"
#include "kat/rng.hpp"
#include "kat/tape.hpp"
#include "support/oracles.hpp"

using namespace kat;

namespace {

double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
  REQUIRE(a.numel() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("matmul identity and zero") {
  Rng rng(1);
  Tensor a = oracle::random_tensor(rng, {3, 3});
  Tape tape;
  auto ia = tape.leaf(a);
  auto ii = tape.leaf(Tensor::identity(3));
  auto prod = tape.matmul(ia, ii);
  for (std::size_t i = 0; i < 9; ++i) CHECK(tape.value(prod)[i] == a[i]);

  auto iz = tape.leaf(Tensor({3, 3}, 0.0));
  auto zero = tape.matmul(ia, iz);
  for (std::size_t i = 0; i < 9; ++i) CHECK(tape.value(zero)[i] == 0.0);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  Rng rng(2);
  Tensor a = oracle::random_tensor(rng, {5, 4});
  Tensor b = oracle::random_tensor(rng, {4, 3});
  Tape tape;
  auto c = tape.matmul(tape.leaf(a), tape.leaf(b));
  auto expect = ref::matmul(a.values(), b.values(), 5, 4, 3);
  CHECK(max_abs_diff(tape.value(c), expect) < 1e-12);
}

TEST_CASE("matmul transpose flags against the oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6),
                      n = 1 + rng.below(6);
    Tensor a = oracle::random_tensor(rng, {m, k});
    Tensor b = oracle::random_tensor(rng, {k, n});
    auto expect = ref::matmul(a.values(), b.values(), m, k, n);
    Tensor at = a.transposed(), bt = b.transposed();
    Tape tape;
    CHECK(max_abs_diff(
              tape.value(tape.matmul(tape.leaf(a), tape.leaf(b))), expect) <
          1e-12);
    CHECK(max_abs_diff(tape.value(tape.matmul(tape.leaf(at), tape.leaf(b),
                                              true, false)),
                       expect) < 1e-12);
    CHECK(max_abs_diff(tape.value(tape.matmul(tape.leaf(a), tape.leaf(bt),
                                              false, true)),
                       expect) < 1e-12);
    CHECK(max_abs_diff(tape.value(tape.matmul(tape.leaf(at), tape.leaf(bt),
                                              true, true)),
                       expect) < 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  auto a = tape.leaf(Tensor({5, 4}));
  auto b = tape.leaf(Tensor({3, 3}));
  bool threw = false;
  try {
    tape.matmul(a, b);
  } catch (const dimension_error& e) {
    threw = true;
    const std::string msg = e.what();
    CHECK(msg.find("[5x4]") != std::string::npos);
    CHECK(msg.find("[3x3]") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("softmax trivial rows") {
  Tape tape;
  auto s = tape.leaf(Tensor({1, 4}, 7.0));
  auto y = tape.softmax_scaled(s, 1.0);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(tape.value(y)[j] == doctest::Approx(0.25).epsilon(1e-15));

  // Huge logit does not overflow thanks to max subtraction.
  auto big = tape.leaf(Tensor::row({1000.0, 0.0}));
  auto yb = tape.softmax_scaled(big, 1.0);
  CHECK(tape.value(yb)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tape.value(yb)[1] <= 1e-300);
}

TEST_CASE("softmax matches direct formula and rows sum to 1") {
  Rng rng(4);
  const double tau = std::sqrt(5.0);
  Tensor s = oracle::random_tensor(rng, {3, 5}, 2.0);
  Tape tape;
  auto y = tape.softmax_scaled(tape.leaf(s), tau);
  auto expect = ref::softmax_rows(s.values(), 3, 5, tau);
  CHECK(max_abs_diff(tape.value(y), expect) < 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      const double v = tape.value(y).at(i, j);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(tape.softmax_scaled(tape.leaf(s), 0.0), parameter_error);
  CHECK_THROWS_AS(tape.softmax_scaled(tape.leaf(s), -1.0), parameter_error);
}

TEST_CASE("layer norm trivial cases") {
  Tape tape;
  auto gamma = tape.leaf(Tensor({2}, 1.0));
  auto beta = tape.leaf(Tensor::from_data({2}, {0.5, -0.5}));
  // Constant row: zero variance, output collapses to beta.
  auto x = tape.leaf(Tensor({1, 2}, 3.0));
  auto y = tape.layer_norm(x, gamma, beta, 1e-6);
  CHECK(tape.value(y)[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tape.value(y)[1] == doctest::Approx(-0.5).epsilon(1e-9));

  auto beta0 = tape.leaf(Tensor({2}, 0.0));
  auto x2 = tape.leaf(Tensor::row({1.0, 3.0}));
  auto y2 = tape.layer_norm(x2, gamma, beta0, 1e-6);
  CHECK(tape.value(y2)[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(tape.value(y2)[1] == doctest::Approx(1.0).epsilon(1e-5));

  auto bad = tape.leaf(Tensor({3}, 1.0));
  CHECK_THROWS_AS(tape.layer_norm(x2, bad, beta0, 1e-6), dimension_error);
}

TEST_CASE("gelu values") {
  Tape tape;
  auto x = tape.leaf(Tensor::row({0.0, 10.0, -10.0}));
  auto y = tape.gelu(x);
  CHECK(tape.value(y)[0] == 0.0);
  CHECK(std::abs(tape.value(y)[1] - 10.0) < 1e-6);
  CHECK(std::abs(tape.value(y)[2]) < 1e-6);
}

TEST_CASE("cross entropy analytic cases") {
  Tape tape;
  auto uniform = tape.leaf(Tensor({1, 5}, 0.3));
  auto l1 = tape.cross_entropy(uniform, 2);
  CHECK(tape.value(l1)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  auto sat = tape.leaf(Tensor::row({20.0, 0.0}));
  auto l2 = tape.cross_entropy(sat, 0);
  CHECK(tape.value(l2)[0] == doctest::Approx(2.061e-9).epsilon(1e-3));

  CHECK_THROWS_AS(tape.cross_entropy(sat, 2), index_error);
}

TEST_CASE("cross entropy matches direct formula") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + rng.below(6);
    Tensor z = oracle::random_tensor(rng, {1, c}, 3.0);
    const std::size_t label = rng.below(c);
    Tape tape;
    auto loss = tape.cross_entropy(tape.leaf(z), label);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j]);
    const double expect = -std::log(std::exp(z[label]) / denom);
    CHECK(std::abs(tape.value(loss)[0] - expect) < 1e-12);
  }
}

TEST_CASE("backward on sum gives ones; detached factors give zero") {
  Rng rng(6);
  Tensor a = oracle::random_tensor(rng, {3, 4}, 1.0, true);
  Tape tape;
  auto ia = tape.leaf(a);
  auto s = tape.sum(ia);
  tape.backward(s);
  for (std::size_t i = 0; i < 12; ++i) CHECK(tape.grad(ia)[i] == 1.0);

  // loss = sum(0 * x) has zero gradient.
  Tape tape2;
  auto ix = tape2.leaf(a);
  auto zero = tape2.leaf(Tensor({3, 4}, 0.0));
  auto loss = tape2.sum(tape2.mul(ix, zero));
  tape2.backward(loss);
  for (std::size_t i = 0; i < 12; ++i) CHECK(tape2.grad(ix)[i] == 0.0);

  // Leaves the loss never touches report a zero gradient.
  Tape tape3;
  auto used = tape3.leaf(a);
  auto unused = tape3.leaf(a);
  auto l3 = tape3.sum(used);
  tape3.backward(l3);
  for (std::size_t i = 0; i < 12; ++i) CHECK(tape3.grad(unused)[i] == 0.0);
}

TEST_CASE("backward requires scalar loss") {
  Tape tape;
  auto a = tape.leaf(Tensor({2, 2}, 1.0, true));
  CHECK_THROWS_AS(tape.backward(a), contract_error);
}

TEST_CASE("non-finite values are an error state") {
  Tape tape;
  Tensor bad({2}, 0.0);
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(tape.leaf(bad), numeric_error);

  // exp overflow inside an op surfaces as a numeric error, not Inf.
  auto x = tape.leaf(Tensor::row({1e308, 1.0}));
  auto two = tape.leaf(Tensor::row({2.0, 1.0}));
  CHECK_THROWS_AS(tape.mul(x, tape.mul(x, two)) /* 2e616 overflows */,
                  numeric_error);
}

TEST_CASE("per-op gradients match central finite differences") {
  Rng rng(7);
  const double h = 1e-5;
  const double tol = 1e-6;

  // build(tape, param_leaf_id) -> loss id; the param leaf is created first so
  // its id is stable across the analytic and finite-difference runs.
  auto check_grad = [&](Tensor& param, auto&& build) {
    Tape tape;
    auto pid = tape.leaf(param);
    auto loss_id = build(tape, pid);
    tape.backward(loss_id);
    const Tensor analytic = tape.grad(pid);
    Tensor fd = oracle::central_diff(
        param,
        [&]() {
          Tape t2;
          auto p2 = t2.leaf(param);
          return t2.value(build(t2, p2))[0];
        },
        h);
    for (std::size_t i = 0; i < analytic.numel(); ++i)
      CHECK(oracle::rel_err(analytic[i], fd[i]) < tol);
  };

  Tensor x = oracle::random_tensor(rng, {4, 4}, 1.0, true);
  Tensor w = oracle::random_tensor(rng, {4, 4});
  Tensor probe = oracle::random_tensor(rng, {4, 4});

  SUBCASE("gelu") {
    check_grad(x, [&](Tape& t, Tape::Id p) {
      return t.sum(t.mul(t.gelu(p), t.leaf(probe)));
    });
  }
  SUBCASE("softmax_scaled") {
    check_grad(x, [&](Tape& t, Tape::Id p) {
      return t.sum(t.mul(t.softmax_scaled(p, 1.7), t.leaf(probe)));
    });
  }
  SUBCASE("matmul") {
    check_grad(x, [&](Tape& t, Tape::Id p) {
      return t.sum(t.mul(t.matmul(p, t.leaf(w)), t.leaf(probe)));
    });
  }
  SUBCASE("layer_norm x") {
    Tensor gamma = oracle::random_tensor(rng, {4}, 1.0);
    Tensor beta = oracle::random_tensor(rng, {4}, 1.0);
    check_grad(x, [&](Tape& t, Tape::Id p) {
      return t.sum(t.mul(
          t.layer_norm(p, t.leaf(gamma), t.leaf(beta), 1e-6), t.leaf(probe)));
    });
  }
  SUBCASE("layer_norm gamma/beta") {
    Tensor gamma = oracle::random_tensor(rng, {4}, 1.0, true);
    Tensor xin = oracle::random_tensor(rng, {4, 4});
    check_grad(gamma, [&](Tape& t, Tape::Id p) {
      return t.sum(
          t.mul(t.layer_norm(t.leaf(xin), p, t.leaf(Tensor({4}, 0.1)), 1e-6),
                t.leaf(probe)));
    });
  }
  SUBCASE("cross_entropy") {
    Tensor z = oracle::random_tensor(rng, {1, 4}, 2.0, true);
    check_grad(z, [&](Tape& t, Tape::Id p) { return t.cross_entropy(p, 1); });
  }
  SUBCASE("broadcast, slice, concat, rowvec") {
    Tensor v = oracle::random_tensor(rng, {1, 6}, 1.0, true);
    Tensor pr = oracle::random_tensor(rng, {3, 6});
    check_grad(v, [&](Tape& t, Tape::Id p) {
      auto b = t.broadcast_rows(p, 3);
      auto left = t.slice_cols(b, 0, 2);
      auto right = t.slice_cols(b, 2, 4);
      auto back = t.concat_cols({left, right});
      auto shifted = t.add_rowvec(back, t.leaf(Tensor({6}, 0.25)));
      return t.sum(t.mul(shifted, t.leaf(pr)));
    });
  }
}

TEST_CASE("re-running the same tape is bit-identical") {
  Rng rng(8);
  Tensor a = oracle::random_tensor(rng, {6, 6}, 1.0, true);
  Tensor b = oracle::random_tensor(rng, {6, 6});
  auto run = [&]() {
    Tape tape;
    auto ia = tape.leaf(a);
    auto prod = tape.matmul(ia, tape.leaf(b));
    auto y = tape.softmax_scaled(prod, 2.0);
    auto loss = tape.sum(tape.gelu(y));
    tape.backward(loss);
    std::vector<double> out = tape.value(y).values();
    const Tensor& g = tape.grad(ia);
    out.insert(out.end(), g.values().begin(), g.values().end());
    return out;
  };
  auto r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i)
    CHECK(std::memcmp(&r1[i], &r2[i], sizeof(double)) == 0);
}

TEST_CASE("shape-only tape builds the same graph without values") {
  Rng rng(9);
  Tensor a = oracle::random_tensor(rng, {8, 8});
  Tensor b = oracle::random_tensor(rng, {8, 8});
  Tape values;
  values.matmul(values.leaf(a), values.leaf(b));

  Tape shapes(Tape::Mode::kShapeOnly);
  auto c = shapes.matmul(shapes.leaf(a), shapes.leaf(b));
  CHECK(shapes.matmul_flops() == values.matmul_flops());
  CHECK(shapes.shape(c) == std::vector<std::size_t>{8, 8});
  CHECK_THROWS_AS(shapes.value(c), contract_error);
  CHECK_THROWS_AS(shapes.backward(c), contract_error);
}
