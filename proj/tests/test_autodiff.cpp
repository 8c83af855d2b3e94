#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "transit/autodiff.hpp"
#include "transit/rng.hpp"

using transit::Rng;
using transit::ad::Mat;
using transit::ad::Tape;
using transit::ad::Var;

namespace {

Mat randm(Rng& rng, int r, int c, double scale = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

// Deterministic non-uniform weighting that reduces any matrix to a scalar. Weights
// differ per entry so transposed or misrouted gradients cannot cancel out.
Var scalarize(Tape& t, Var v) {
  Mat w = t.val(v);  // copy: adding nodes may invalidate references into the tape
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      w(i, j) = 0.3 + 0.1 * static_cast<double>((i * 7 + j * 3) % 11);
  Eigen::Index cols = w.cols();
  Var weighted = t.cmul(v, t.constant(std::move(w)));
  Var m = t.mean_rows(weighted);
  return t.matmul(m, t.constant(Mat::Ones(cols, 1)));
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval_scalar(const Builder& build, const std::vector<Mat>& xs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(xs.size());
  for (const Mat& x : xs) vars.push_back(tape.param(x));
  Var root = build(tape, vars);
  REQUIRE(tape.val(root).rows() == 1);
  REQUIRE(tape.val(root).cols() == 1);
  return tape.val(root)(0, 0);
}

// Central-difference check of every coordinate of every input against the tape.
void check_gradients(const Builder& build, const std::vector<Mat>& xs, double h = 1e-6,
                     double tol = 1e-3) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(xs.size());
  for (const Mat& x : xs) vars.push_back(tape.param(x));
  Var root = build(tape, vars);
  tape.backward(root, Mat::Ones(1, 1));

  for (size_t p = 0; p < xs.size(); ++p) {
    Mat analytic = tape.grad(vars[p]);
    for (Eigen::Index i = 0; i < xs[p].rows(); ++i) {
      for (Eigen::Index j = 0; j < xs[p].cols(); ++j) {
        std::vector<Mat> plus = xs, minus = xs;
        plus[p](i, j) += h;
        minus[p](i, j) -= h;
        double numeric = (eval_scalar(build, plus) - eval_scalar(build, minus)) / (2.0 * h);
        double a = analytic(i, j);
        double denom = std::max({1e-4, std::abs(a), std::abs(numeric)});
        INFO("input ", p, " entry (", i, ",", j, "): analytic ", a, " numeric ", numeric);
        CHECK(std::abs(a - numeric) / denom <= tol);
      }
    }
  }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("arithmetic op gradients match central differences") {
  Rng rng(11);
  std::vector<Mat> ab{randm(rng, 3, 4), randm(rng, 3, 4)};

  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.add(v[0], v[1]));
  }, ab);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.sub(v[0], v[1]));
  }, ab);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.cmul(v[0], v[1]));
  }, ab);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.scale(v[0], -1.7));
  }, {ab[0]});
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.add_rowvec(v[0], v[1]));
  }, {randm(rng, 4, 3), randm(rng, 1, 3)});
}

TEST_CASE("matmul gradients match central differences") {
  Rng rng(12);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.matmul(v[0], v[1]));
  }, {randm(rng, 3, 5), randm(rng, 5, 2)});
}

TEST_CASE("elementwise nonlinearity gradients match central differences") {
  Rng rng(13);
  Mat x = randm(rng, 3, 4);

  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.relu(v[0]));
  }, {x});
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.leaky_relu(v[0], 0.2));
  }, {x});
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.sigmoid(v[0]));
  }, {x});
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.softplus(v[0]));
  }, {x});
}

TEST_CASE("softplus and sigmoid stay finite at extreme inputs") {
  Tape t;
  Mat x(1, 4);
  x << -800.0, -40.0, 40.0, 800.0;
  Var sp = t.softplus(t.constant(x));
  CHECK(t.val(sp)(0, 0) == 0.0);
  CHECK(t.val(sp)(0, 3) == 800.0);
  CHECK(std::isfinite(t.val(sp)(0, 1)));
  Var sg = t.sigmoid(t.constant(x));
  CHECK(t.val(sg)(0, 0) == 0.0);
  CHECK(t.val(sg)(0, 3) == 1.0);
}

TEST_CASE("softmax rows sum to one and gradients match") {
  Rng rng(14);
  Mat x = randm(rng, 3, 5, 2.0);
  Tape t;
  Var sm = t.softmax_rows(t.constant(x));
  for (int i = 0; i < 3; ++i)
    CHECK(t.val(sm).row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

  check_gradients([](Tape& tt, const std::vector<Var>& v) {
    return scalarize(tt, tt.softmax_rows(v[0]));
  }, {x});
}

TEST_CASE("concatenation gradients match central differences") {
  Rng rng(15);
  std::vector<Mat> xs{randm(rng, 3, 2), randm(rng, 3, 4), randm(rng, 3, 1)};
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.concat_cols({v[0], v[1], v[2]}));
  }, xs);

  std::vector<Mat> ys{randm(rng, 2, 3), randm(rng, 1, 3), randm(rng, 4, 3)};
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.concat_rows({v[0], v[1], v[2]}));
  }, ys);
}

TEST_CASE("repeat and tile lay rows out as documented") {
  Tape t;
  Mat x(2, 1);
  x << 1.0, 2.0;
  Var rep = t.repeat_rows(t.constant(x), 3);
  Mat want_rep(6, 1);
  want_rep << 1, 1, 1, 2, 2, 2;
  CHECK(t.val(rep) == want_rep);

  Mat y(4, 1);
  y << 1.0, 2.0, 3.0, 4.0;
  Var tiled = t.tile_rows_grouped(t.constant(y), 2, 2);
  Mat want_tile(8, 1);
  want_tile << 1, 2, 1, 2, 3, 4, 3, 4;
  CHECK(t.val(tiled) == want_tile);
}

TEST_CASE("repeat and tile gradients match central differences") {
  Rng rng(16);
  Mat x = randm(rng, 4, 3);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.repeat_rows(v[0], 3));
  }, {x});
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.tile_rows_grouped(v[0], 2, 3));
  }, {x});
}

TEST_CASE("rows_to_matrix reshapes row-major and differentiates") {
  Tape t;
  Mat x(6, 1);
  x << 1, 2, 3, 4, 5, 6;
  Var m = t.rows_to_matrix(t.constant(x), 3);
  Mat want(2, 3);
  want << 1, 2, 3, 4, 5, 6;
  CHECK(t.val(m) == want);

  Rng rng(17);
  check_gradients([](Tape& tt, const std::vector<Var>& v) {
    return scalarize(tt, tt.rows_to_matrix(v[0], 4));
  }, {randm(rng, 12, 1)});
}

TEST_CASE("bmm_grouped multiplies each block independently") {
  Rng rng(18);
  Mat a = randm(rng, 6, 3), b = randm(rng, 6, 4);
  Tape t;
  Var out = t.bmm_grouped(t.constant(a), t.constant(b), 3);
  for (int g = 0; g < 2; ++g) {
    Mat want = a.middleRows(3 * g, 3) * b.middleRows(3 * g, 3);
    CHECK((t.val(out).middleRows(3 * g, 3) - want).cwiseAbs().maxCoeff() <= 1e-12);
  }

  check_gradients([](Tape& tt, const std::vector<Var>& v) {
    return scalarize(tt, tt.bmm_grouped(v[0], v[1], 3));
  }, {a, b});
}

TEST_CASE("gather_rows with repeated indices accumulates gradient") {
  Rng rng(19);
  Mat x = randm(rng, 5, 3);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.gather_rows(v[0], {0, 2, 1, 2, 4, 2}));
  }, {x});
}

TEST_CASE("aggregate_rows handles overlapping and empty groups") {
  Mat x(4, 1);
  x << 1, 2, 4, 8;
  Tape t;
  Var agg = t.aggregate_rows(t.constant(x), {{0, 1}, {1, 2, 3}, {}});
  Mat want(3, 1);
  want << 3, 14, 0;
  CHECK(t.val(agg) == want);

  Rng rng(20);
  check_gradients([](Tape& tt, const std::vector<Var>& v) {
    return scalarize(tt, tt.aggregate_rows(v[0], {{0, 1}, {1, 2, 3}, {}, {3, 0}}));
  }, {randm(rng, 4, 2)});
}

TEST_CASE("grouped log-softmax normalizes within each group") {
  Rng rng(21);
  Mat x = randm(rng, 8, 1, 2.0);
  Tape t;
  Var ls = t.log_softmax_grouped(t.constant(x), {3, 1, 4});
  const Mat& y = t.val(ls);
  CHECK(std::exp(y(0, 0)) + std::exp(y(1, 0)) + std::exp(y(2, 0)) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y(3, 0) == 0.0);  // singleton group
  double tail = 0.0;
  for (int i = 4; i < 8; ++i) tail += std::exp(y(i, 0));
  CHECK(tail == doctest::Approx(1.0).epsilon(1e-12));

  check_gradients([](Tape& tt, const std::vector<Var>& v) {
    return scalarize(tt, tt.log_softmax_grouped(v[0], {3, 1, 4}));
  }, {x});
}

TEST_CASE("mean_rows gradients match central differences") {
  Rng rng(22);
  check_gradients([](Tape& t, const std::vector<Var>& v) {
    return scalarize(t, t.mean_rows(v[0]));
  }, {randm(rng, 5, 4)});
}

TEST_CASE("a variable used on two paths receives both gradients") {
  Mat x(1, 1);
  x << 3.0;
  Tape t;
  Var v = t.param(x);
  // f = x + x^2, df/dx = 1 + 2x = 7.
  Var root = t.add(v, t.cmul(v, v));
  t.backward(root, Mat::Ones(1, 1));
  CHECK(t.grad(v)(0, 0) == doctest::Approx(7.0).epsilon(1e-12));

  Rng rng(23);
  check_gradients([](Tape& tt, const std::vector<Var>& v2) {
    return scalarize(tt, tt.add(tt.matmul(v2[0], v2[1]), tt.matmul(v2[0], v2[1])));
  }, {randm(rng, 2, 3), randm(rng, 3, 2)});
}

TEST_CASE("matrix-valued backward seeds weight the root entries") {
  Rng rng(24);
  Mat a = randm(rng, 2, 3), b = randm(rng, 3, 2), seed = randm(rng, 2, 2);
  Tape t;
  Var va = t.param(a), vb = t.param(b);
  Var prod = t.matmul(va, vb);
  t.backward(prod, seed);
  Mat ga_want = seed * b.transpose();
  Mat gb_want = a.transpose() * seed;
  CHECK((t.grad(va) - ga_want).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((t.grad(vb) - gb_want).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("constants receive no gradient and block propagation") {
  Tape t;
  Var c = t.constant(Mat::Ones(2, 2));
  Var p = t.param(Mat::Ones(2, 2));
  Var root = scalarize(t, t.cmul(c, p));
  t.backward(root, Mat::Ones(1, 1));
  CHECK(t.grad(c).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.grad(p).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("a composed attention-style block differentiates end to end") {
  // Mimics one attention head: scores from two projections plus pair features,
  // softmax per row, then message aggregation. Exercises op interplay.
  Rng rng(25);
  int n = 3, d = 2, k = 4;
  std::vector<Mat> xs{randm(rng, n, d), randm(rng, d, k), randm(rng, d, k),
                      randm(rng, n * n, k), randm(rng, k, 1)};
  check_gradients([n](Tape& t, const std::vector<Var>& v) {
    Var q = t.matmul(v[0], v[1]);
    Var key = t.matmul(v[0], v[2]);
    Var z = t.add(t.add(t.repeat_rows(q, n), t.tile_rows_grouped(key, n, n)), v[3]);
    Var e = t.matmul(t.leaky_relu(z, 0.2), v[4]);
    Var attn = t.softmax_rows(t.rows_to_matrix(e, n));
    return scalarize(t, t.bmm_grouped(attn, key, n));
  }, xs, 1e-6, 2e-3);
}

}  // TEST_SUITE
