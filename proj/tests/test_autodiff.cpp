#include <doctest.h>

#include <Eigen/Core>
#include <functional>

#include "panofocus/autodiff.hpp"
#include "panofocus/errors.hpp"
#include "panofocus/prototyper.hpp"
#include "panofocus/rng.hpp"

using namespace panofocus;
using autodiff::Mat;
using autodiff::Tape;

namespace {

Mat random_mat(SeededRng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.gaussian();
  return m;
}

// Checks one op against central differences: `build` maps the parameter to a
// scalar tape output. Independent oracle for the tape's backward rules.
double check_op(Mat param, const std::function<Tape::NodeId(Tape&, Tape::NodeId)>& build) {
  Mat analytic;
  {
    Tape t;
    const auto leaf = t.leaf(param);
    const auto out = build(t, leaf);
    t.backward(out);
    analytic = t.grad(leaf);
  }
  const auto loss = [&]() {
    Tape t;
    return t.scalar(build(t, t.leaf(param)));
  };
  return gradient_check(loss, param, analytic, 1e-6);
}

}  // namespace

TEST_CASE("tape gradients match finite differences per op") {
  SeededRng rng(7);
  const Mat a = random_mat(rng, 3, 4);
  const Mat b = random_mat(rng, 4, 5);
  const Mat c = random_mat(rng, 3, 4);

  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.sum_all(t.matmul(x, t.constant(b)));
        }) < 1e-7);
  CHECK(check_op(b, [&](Tape& t, auto x) {
          return t.sum_all(t.matmul(t.constant(a), x));
        }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.mean_all(t.hadamard(x, t.add(x, t.constant(c))));
        }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.sum_all(t.scale(t.sub(x, t.constant(c)), -2.5));
        }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) { return t.sum_all(t.transpose(x)); }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.mean_all(t.hadamard(t.softmax_rows(x), t.constant(c)));
        }) < 1e-6);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.mean_all(t.hadamard(t.gelu(x), t.constant(c)));
        }) < 1e-6);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.sum_all(t.hadamard(t.add_row_broadcast(x, t.constant(Mat::Ones(1, 4))),
                                      t.constant(c)));
        }) < 1e-7);
}

TEST_CASE("tape gradients for stacking, slicing and gathering") {
  SeededRng rng(8);
  const Mat a = random_mat(rng, 3, 4);
  const Mat w = random_mat(rng, 6, 4);
  const Mat mix6 = random_mat(rng, 6, 4);
  const Mat mix3 = random_mat(rng, 3, 4);

  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.sum_all(t.hadamard(t.vstack({x, t.constant(a)}), t.constant(mix6)));
        }) < 1e-6);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.sum_all(t.hadamard(t.hstack({x, x}), t.constant(Mat::Ones(3, 8))));
        }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.mean_all(t.rows(x, 1, 2));
        }) < 1e-7);
  CHECK(check_op(a, [&](Tape& t, auto x) {
          return t.mean_all(t.cols(x, 1, 3));
        }) < 1e-7);
  CHECK(check_op(w, [&](Tape& t, auto x) {
          return t.sum_all(t.hadamard(t.gather_rows(x, {4, 0, 4}), t.constant(mix3)));
        }) < 1e-6);
  CHECK(check_op(a, [&](Tape& t, auto x) { return t.mean_all(t.mean_rows(x)); }) < 1e-7);
}

TEST_CASE("guarded rowwise division gradients and guard behavior") {
  SeededRng rng(9);
  Mat num = random_mat(rng, 3, 4);
  Mat den(3, 1);
  den << 2.0, 0.5, 3.0;

  Mat analytic;
  {
    Tape t;
    const auto n = t.leaf(num);
    const auto out = t.sum_all(t.rowwise_div_guarded(n, t.constant(den), 1e-12));
    t.backward(out);
    analytic = t.grad(n);
  }
  const auto loss = [&]() {
    Tape t;
    return t.scalar(t.sum_all(t.rowwise_div_guarded(t.leaf(num), t.constant(den), 1e-12)));
  };
  CHECK(gradient_check(loss, num, analytic, 1e-6) < 1e-7);

  // denominator gradient
  Mat den_param = den;
  Mat den_analytic;
  {
    Tape t;
    const auto d = t.leaf(den_param);
    const auto out = t.sum_all(t.rowwise_div_guarded(t.constant(num), d, 1e-12));
    t.backward(out);
    den_analytic = t.grad(d);
  }
  const auto den_loss = [&]() {
    Tape t;
    return t.scalar(t.sum_all(t.rowwise_div_guarded(t.constant(num), t.leaf(den_param), 1e-12)));
  };
  CHECK(gradient_check(den_loss, den_param, den_analytic, 1e-6) < 1e-7);

  // a guarded row yields zeros and no gradient
  Mat tiny_den(3, 1);
  tiny_den << 2.0, 1e-15, 3.0;
  Tape t;
  int guards = 0;
  const auto n = t.leaf(num);
  const auto out = t.rowwise_div_guarded(n, t.constant(tiny_den), 1e-12, &guards);
  CHECK(guards == 1);
  CHECK(t.value(out).row(1).isZero(0.0));
  t.backward(t.sum_all(out));
  CHECK(t.grad(n).row(1).isZero(0.0));
}

TEST_CASE("stable BCE matches the closed form and its gradient") {
  Mat logits = Mat::Zero(2, 3);
  Mat targets(2, 3);
  targets << 1, 0, 1, 0, 0, 1;
  Tape t;
  const auto z = t.leaf(logits);
  const auto out = t.bce_with_logits_mean(z, targets);
  CHECK(t.scalar(out) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  t.backward(out);
  // d/dz = (sigmoid(0) - t)/N = (0.5 - t)/6
  CHECK(t.grad(z)(0, 0) == doctest::Approx((0.5 - 1.0) / 6.0));
  CHECK(t.grad(z)(0, 1) == doctest::Approx(0.5 / 6.0));

  SeededRng rng(10);
  Mat z2 = random_mat(rng, 4, 5);
  Mat targets2(4, 5);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) targets2(i, j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Mat analytic;
  {
    Tape tt;
    const auto zz = tt.leaf(z2);
    const auto o = tt.bce_with_logits_mean(zz, targets2);
    tt.backward(o);
    analytic = tt.grad(zz);
  }
  const auto loss = [&]() {
    Tape tt;
    return tt.scalar(tt.bce_with_logits_mean(tt.leaf(z2), targets2));
  };
  CHECK(gradient_check(loss, z2, analytic, 1e-6) < 1e-7);
}

TEST_CASE("quadratic toy loss is exact to roundoff") {
  SeededRng rng(11);
  Mat w = random_mat(rng, 4, 4);
  const Mat x = random_mat(rng, 4, 1);
  Mat analytic;
  {
    Tape t;
    const auto wl = t.leaf(w);
    const auto y = t.matmul(wl, t.constant(x));
    const auto loss = t.scale(t.sum_all(t.hadamard(y, y)), 0.5);
    t.backward(loss);
    analytic = t.grad(wl);
  }
  const auto loss = [&]() {
    Tape t;
    const auto y = t.matmul(t.leaf(w), t.constant(x));
    return t.scalar(t.scale(t.sum_all(t.hadamard(y, y)), 0.5));
  };
  CHECK(gradient_check(loss, w, analytic, 1e-5) < 1e-8);
  // closed form: grad = (W x) x^T
  CHECK((analytic - (w * x) * x.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient_check rejects non-deterministic closures") {
  Mat p = Mat::Zero(1, 1);
  Mat g = Mat::Zero(1, 1);
  int calls = 0;
  const auto loss = [&]() { return static_cast<double>(calls++); };
  CHECK_THROWS_AS(gradient_check(loss, p, g, 1e-5), ValidationError);
}

TEST_CASE("gradient_check rejects non-positive steps but runs degraded ones") {
  Mat p = Mat::Zero(1, 1);
  Mat g = Mat::Zero(1, 1);
  const auto loss = [&]() { return 1.0; };
  CHECK_THROWS_AS(gradient_check(loss, p, g, 0.0), ValidationError);
  CHECK_THROWS_AS(gradient_check(loss, p, g, -1e-5), ValidationError);
  CHECK(gradient_check(loss, p, g, 1e-1) == 0.0);  // constant loss, any step
}

TEST_CASE("coarse steps degrade the check as expected") {
  SeededRng rng(12);
  Mat w = random_mat(rng, 3, 3);
  const Mat x = random_mat(rng, 3, 1);
  // cubic loss has nonzero third derivative, so truncation shows up at big eps
  const auto build = [&](Tape& t, Tape::NodeId wl) {
    const auto y = t.matmul(wl, t.constant(x));
    return t.sum_all(t.hadamard(y, t.hadamard(y, y)));
  };
  Mat analytic;
  {
    Tape t;
    const auto wl = t.leaf(w);
    const auto out = build(t, wl);
    t.backward(out);
    analytic = t.grad(wl);
  }
  const auto loss = [&]() {
    Tape t;
    return t.scalar(build(t, t.leaf(w)));
  };
  const double fine = gradient_check(loss, w, analytic, 1e-5);
  const double coarse = gradient_check(loss, w, analytic, 1e-1);
  CHECK(fine < 1e-8);
  CHECK(coarse > fine);
}
