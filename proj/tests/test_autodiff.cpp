#include <doctest.h>

#include <cmath>
#include <functional>

#include "wsvad/autodiff.hpp"
#include "wsvad/layers.hpp"
#include "wsvad/rng.hpp"

using namespace wsvad;
using ad::Tape;
using ad::Var;

namespace {

// Reduce a matrix output to a scalar with fixed random weights so gradients
// are non-uniform across entries.
Var weighted_sum(Tape& t, Var y, std::uint64_t salt = 99) {
  const Mat& v = t.value(y);
  Rng rng = named_rng(salt, "reduce");
  Mat w = random_matrix(rng, v.rows(), v.cols(), 1.0);
  return t.sum_all(t.cwise_mul(y, t.constant(w)));
}

// Central finite differences of a scalar-valued builder wrt one input matrix.
void check_gradient(int rows, int cols,
                    const std::function<Var(Tape&, Var)>& build,
                    std::uint64_t seed = 1, double tol = 1e-6, double input_scale = 1.0) {
  Rng rng = named_rng(seed, "fd_input");
  Mat x0 = random_matrix(rng, rows, cols, input_scale);

  ad::ParameterStore store;
  ad::Parameter& p = store.add("x", x0);

  Tape t;
  Var loss = build(t, t.leaf(p));
  REQUIRE(t.value(loss).size() == 1);
  store.zero_grad();
  t.backward(loss);
  const Mat analytic = p.grad;

  Mat fd(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double theta = p.value(r, c);
      const double h = 1e-6 * std::max(1.0, std::abs(theta));
      p.value(r, c) = theta + h;
      Tape tp;
      const double f_plus = tp.scalar_value(build(tp, tp.leaf(p)));
      p.value(r, c) = theta - h;
      Tape tm;
      const double f_minus = tm.scalar_value(build(tm, tm.leaf(p)));
      p.value(r, c) = theta;
      fd(r, c) = (f_plus - f_minus) / (2.0 * h);
    }

  const double denom = std::max({analytic.norm(), fd.norm(), 1e-12});
  const double rel = (analytic - fd).norm() / denom;
  CHECK(rel < tol);
}

}  // namespace

TEST_CASE("elementwise and structural ops match finite differences") {
  check_gradient(3, 4, [](Tape& t, Var x) {
    return weighted_sum(t, t.add(x, t.scale(x, 2.0)));
  });
  check_gradient(3, 4, [](Tape& t, Var x) {
    return weighted_sum(t, t.sub(t.add_const(x, 0.5), t.cwise_mul(x, x)));
  });
  check_gradient(4, 3, [](Tape& t, Var x) {
    Rng rng = named_rng(7, "w");
    Mat w = random_matrix(rng, 3, 5, 1.0);
    return weighted_sum(t, t.matmul(x, t.constant(w)));
  });
  check_gradient(4, 3, [](Tape& t, Var x) {
    Rng rng = named_rng(8, "w");
    Mat w = random_matrix(rng, 5, 4, 1.0);
    return weighted_sum(t, t.matmul(t.constant(w), x));
  });
  check_gradient(3, 4, [](Tape& t, Var x) { return weighted_sum(t, t.transpose(x)); });
  check_gradient(3, 4, [](Tape& t, Var x) {
    return weighted_sum(t, t.hconcat(x, t.cwise_mul(x, x)));
  });
  check_gradient(4, 3, [](Tape& t, Var x) {
    return weighted_sum(t, t.vconcat({t.slice_rows(x, 0, 2), t.slice_rows(x, 1, 3), x}));
  });
  check_gradient(3, 6, [](Tape& t, Var x) {
    return weighted_sum(t, t.slice_cols(x, 1, 4));
  });
  check_gradient(2, 3, [](Tape& t, Var x) {
    return weighted_sum(t, t.scatter_rows(x, 5, 2));
  });
  check_gradient(4, 3, [](Tape& t, Var x) {
    Vec w(4);
    w << 0.5, 2.0, -1.0, 0.25;
    return weighted_sum(t, t.row_scale(x, w));
  });
  check_gradient(4, 3, [](Tape& t, Var x) {
    return weighted_sum(t, t.add_row_broadcast(x, t.slice_rows(x, 1, 1)));
  });
}

TEST_CASE("matmul where both operands carry gradients") {
  check_gradient(3, 3, [](Tape& t, Var x) {
    return weighted_sum(t, t.matmul(x, t.transpose(x)));
  });
}

TEST_CASE("nonlinearities match finite differences") {
  check_gradient(3, 4, [](Tape& t, Var x) { return weighted_sum(t, t.gelu(x)); });
  check_gradient(3, 4, [](Tape& t, Var x) { return weighted_sum(t, t.sigmoid(x)); });
  check_gradient(3, 4, [](Tape& t, Var x) { return weighted_sum(t, t.relu(x)); });
  check_gradient(3, 4, [](Tape& t, Var x) {
    return weighted_sum(t, t.log(t.add_const(t.sigmoid(x), 0.1)));
  });
}

TEST_CASE("reductions match finite differences") {
  check_gradient(3, 4, [](Tape& t, Var x) { return t.sum_all(t.cwise_mul(x, x)); });
  check_gradient(3, 4, [](Tape& t, Var x) { return t.mean_all(t.gelu(x)); });
  check_gradient(4, 3, [](Tape& t, Var x) { return weighted_sum(t, t.mean_rows(x)); });
  check_gradient(3, 4, [](Tape& t, Var x) { return t.entry(t.cwise_mul(x, x), 2, 1); });
  check_gradient(3, 2, [](Tape& t, Var x) {
    std::vector<Var> s = {t.entry(x, 0, 0), t.entry(x, 2, 1), t.sum_all(x)};
    return weighted_sum(t, t.stack_scalars(s));
  });
  check_gradient(3, 4, [](Tape& t, Var x) {
    Var denom = t.add_const(t.sum_all(t.sigmoid(x)), 0.3);
    return weighted_sum(t, t.div_by_scalar(x, denom));
  });
}

TEST_CASE("softmax rows sums to one and matches finite differences") {
  Tape t;
  Rng rng = named_rng(3, "sm");
  Mat x = random_matrix(rng, 5, 7, 2.0);
  Var y = t.softmax_rows(t.constant(x));
  for (int i = 0; i < 5; ++i) CHECK(t.value(y).row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));

  check_gradient(4, 5, [](Tape& tp, Var v) { return weighted_sum(tp, tp.softmax_rows(v)); });

  // masked entries get probability zero and no gradient
  check_gradient(3, 4, [](Tape& tp, Var v) {
    Mat mask = Mat::Zero(3, 4);
    mask(0, 1) = mask(2, 3) = -std::numeric_limits<double>::infinity();
    return weighted_sum(tp, tp.softmax_rows(v, &mask));
  });
  Mat mask = Mat::Zero(1, 3);
  mask(0, 2) = -std::numeric_limits<double>::infinity();
  Tape t2;
  Var z = t2.softmax_rows(t2.constant(Mat::Ones(1, 3)), &mask);
  CHECK(t2.value(z)(0, 2) == 0.0);
  CHECK(t2.value(z)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("logsumexp is stable and matches finite differences") {
  Tape t;
  Mat big(1, 3);
  big << 1000.0, 1001.0, 999.0;
  Var v = t.logsumexp_row(t.constant(big));
  CHECK(std::isfinite(t.scalar_value(v)));
  check_gradient(1, 6, [](Tape& tp, Var x) { return tp.logsumexp_row(x); });
}

TEST_CASE("layer norm and l2 normalize match finite differences") {
  check_gradient(4, 6, [](Tape& t, Var x) { return weighted_sum(t, t.layer_norm_rows(x)); });
  check_gradient(3, 5, [](Tape& t, Var x) { return weighted_sum(t, t.l2_normalize_rows(x)); });

  // zero row maps to zero
  Tape t;
  Var y = t.l2_normalize_rows(t.constant(Mat::Zero(1, 4)));
  CHECK(t.value(y).norm() == 0.0);
}

TEST_CASE("cosine pairs: values and gradients") {
  Tape t;
  Mat a(2, 3);
  a << 1, 0, 0, 0, 2, 0;
  Var c = t.cosine_pairs(t.constant(a), t.constant(a), true);
  CHECK(t.value(c)(0, 0) == doctest::Approx(1.0));
  CHECK(t.value(c)(0, 1) == doctest::Approx(0.0));

  // zero-norm guard: 0 off-diagonal, 1 on the self diagonal
  Mat z(2, 3);
  z << 0, 0, 0, 1, 1, 0;
  Tape t2;
  Var c2 = t2.cosine_pairs(t2.constant(z), t2.constant(z), true);
  CHECK(t2.value(c2)(0, 0) == 1.0);
  CHECK(t2.value(c2)(0, 1) == 0.0);
  CHECK(t2.value(c2)(1, 0) == 0.0);

  check_gradient(4, 3, [](Tape& tp, Var x) {
    Rng rng = named_rng(12, "b");
    Mat b = random_matrix(rng, 2, 3, 1.0);
    return weighted_sum(tp, tp.cosine_pairs(x, tp.constant(b)));
  });
  check_gradient(4, 3, [](Tape& tp, Var x) {
    Rng rng = named_rng(13, "a");
    Mat a2 = random_matrix(rng, 2, 3, 1.0);
    return weighted_sum(tp, tp.cosine_pairs(tp.constant(a2), x));
  });
  // self-similarity: gradient flows through both sides
  check_gradient(4, 3, [](Tape& tp, Var x) {
    return weighted_sum(tp, tp.cosine_pairs(x, x, true));
  });
}

TEST_CASE("topk mean col selects the k largest and routes gradient to them") {
  Tape t;
  Mat m(5, 2);
  m << 0.9, 0.0, 0.1, 0.0, 0.8, 0.0, 0.2, 0.0, 0.95, 0.0;
  Var v = t.topk_mean_col(t.constant(m), 0, 2, 5);
  CHECK(t.scalar_value(v) == doctest::Approx((0.95 + 0.9) / 2));

  // valid_rows restriction: the 0.95 at row 4 is out of range
  Tape t2;
  Var v2 = t2.topk_mean_col(t2.constant(m), 0, 2, 4);
  CHECK(t2.scalar_value(v2) == doctest::Approx((0.9 + 0.8) / 2));

  check_gradient(6, 3, [](Tape& tp, Var x) {
    return tp.topk_mean_col(x, 1, 3, 6);
  });
}

TEST_CASE("bce values and gradient") {
  Tape t;
  Mat p(1, 1);
  p << 0.85;
  CHECK(t.scalar_value(t.bce(t.constant(p), 1)) == doctest::Approx(-std::log(0.85)));
  CHECK(t.scalar_value(t.bce(t.constant(p), 0)) == doctest::Approx(-std::log(0.15)));

  check_gradient(1, 1, [](Tape& tp, Var x) { return tp.bce(tp.sigmoid(x), 1); });
  check_gradient(1, 1, [](Tape& tp, Var x) { return tp.bce(tp.sigmoid(x), 0); });
}

TEST_CASE("stop_gradient blocks the path") {
  ad::ParameterStore store;
  Rng rng = named_rng(4, "sg");
  ad::Parameter& p = store.add("x", random_matrix(rng, 2, 2, 1.0));
  Tape t;
  Var x = t.leaf(p);
  Var loss = t.sum_all(t.cwise_mul(t.stop_gradient(x), x));
  store.zero_grad();
  t.backward(loss);
  // d/dx (c * x) = c, the detached value
  CHECK((p.grad - p.value).norm() == doctest::Approx(0.0));
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  ad::ParameterStore store;
  Mat x0(1, 1);
  x0 << 3.0;
  ad::Parameter& p = store.add("x", x0);
  Tape t;
  Var x = t.leaf(p);
  Var y = t.add(t.cwise_mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1
  store.zero_grad();
  t.backward(y);
  CHECK(p.grad(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("adamw applies decoupled weight decay") {
  ad::ParameterStore store;
  Mat v(1, 1);
  v << 2.0;
  ad::Parameter& p = store.add("x", v);
  p.grad.setZero();

  ad::AdamW::Config cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  ad::AdamW opt(cfg);
  opt.step(store);
  // zero gradient: only the decay term moves the parameter
  CHECK(p.value(0, 0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("adamw step direction follows the gradient sign") {
  ad::ParameterStore store;
  Mat v(1, 2);
  v << 1.0, -1.0;
  ad::Parameter& p = store.add("x", v);
  p.zero_grad();
  p.grad(0, 0) = 5.0;
  p.grad(0, 1) = -5.0;
  ad::AdamW::Config cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  ad::AdamW opt(cfg);
  opt.step(store);
  CHECK(p.value(0, 0) < 1.0);
  CHECK(p.value(0, 1) > -1.0);
}
