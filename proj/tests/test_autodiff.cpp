#include <doctest.h>

#include "asvgp/autodiff.hpp"

#include <random>

using asvgp::ad::check_gradients;
using asvgp::ad::GradientMap;
using asvgp::ad::Matrix;
using asvgp::ad::Tape;
using asvgp::ad::Var;
using asvgp::ad::Vector;

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64 &rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      m(i, j) = gauss(rng);
    }
  }
  return m;
}

Matrix random_spd(int n, std::mt19937_64 &rng) {
  Matrix b = random_matrix(n, n, rng);
  return b * b.transpose() + n * Matrix::Identity(n, n);
}

// Independent dense inverse via Gauss-Jordan elimination with partial
// pivoting; used as an oracle, never in library code.
Matrix gauss_jordan_inverse(Matrix a) {
  const int n = static_cast<int>(a.rows());
  Matrix inv = Matrix::Identity(n, n);
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) {
        pivot = r;
      }
    }
    a.row(col).swap(a.row(pivot));
    inv.row(col).swap(inv.row(pivot));
    double p = a(col, col);
    a.row(col) /= p;
    inv.row(col) /= p;
    for (int r = 0; r < n; ++r) {
      if (r == col) {
        continue;
      }
      double f = a(r, col);
      a.row(r) -= f * a.row(col);
      inv.row(r) -= f * inv.row(col);
    }
  }
  return inv;
}

} // namespace

TEST_CASE("forward: quadratic, identity logdet, trace of A A^-1") {
  Tape t;
  Matrix x(3, 1);
  x << 1, 2, 3;
  Var vx = t.parameter("x", x);
  Var quad = t.transpose(vx) * vx;
  CHECK(quad.scalar() == doctest::Approx(14.0).epsilon(1e-14));

  Var ld = asvgp::ad::logdet_spd(t, t.constant(Matrix::Identity(3, 3)));
  CHECK(ld.scalar() == doctest::Approx(0.0).epsilon(1e-14));

  std::mt19937_64 rng(7);
  Matrix a = random_spd(4, rng);
  Matrix a_inv = gauss_jordan_inverse(a);
  Var tr = t.trace(t.matmul(t.constant(a), t.constant(a_inv)));
  CHECK(tr.scalar() == doctest::Approx(4.0).epsilon(1e-10));
}

TEST_CASE("backward: quadratic and diagonal logdet") {
  Tape t;
  Matrix x(3, 1);
  x << 1, 2, 3;
  Var vx = t.parameter("x", x);
  GradientMap g = t.backward(t.transpose(vx) * vx);
  Vector expect(3);
  expect << 2, 4, 6;
  CHECK((g.at("x") - expect).cwiseAbs().maxCoeff() < 1e-14);

  Tape t2;
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = 4.0;
  Var va = t2.parameter("A", a);
  GradientMap g2 = t2.backward(asvgp::ad::logdet_spd(t2, va));
  CHECK(g2.at("A")(0, 0) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(g2.at("A")(1, 1) == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(std::abs(g2.at("A")(0, 1)) < 1e-10);
}

TEST_CASE("cholesky logdet gradient matches finite differences") {
  std::mt19937_64 rng(11);
  Matrix a = random_spd(5, rng);
  auto build = [](Tape &t, const std::map<std::string, Matrix> &p) {
    return asvgp::ad::logdet_spd(t, t.parameter("A", p.at("A")));
  };
  double err = check_gradients(build, {{"A", a}}, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("check_gradients: elementwise exp and constants") {
  std::mt19937_64 rng(3);
  Matrix x = random_matrix(4, 1, rng);
  auto build = [](Tape &t, const std::map<std::string, Matrix> &p) {
    return t.sum(t.exp(t.parameter("x", p.at("x"))));
  };
  CHECK(check_gradients(build, {{"x", x}}, 1e-6) < 1e-6);

  auto build_const = [](Tape &t, const std::map<std::string, Matrix> &p) {
    (void)t.parameter("x", p.at("x"));
    return t.constant(3.5);
  };
  CHECK(check_gradients(build_const, {{"x", x}}, 1e-6) == 0.0);
}

TEST_CASE("every primitive passes finite differences on random instances") {
  using Builder =
      std::function<Var(Tape &, const std::map<std::string, Matrix> &)>;
  std::mt19937_64 rng(42);

  auto p = [](Tape &t, const std::map<std::string, Matrix> &pt,
              const std::string &name) { return t.parameter(name, pt.at(name)); };

  std::map<std::string, Builder> builders;
  builders["add"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.add(p(t, pt, "a"), p(t, pt, "b")));
  };
  builders["sub"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.sub(p(t, pt, "a"), p(t, pt, "b")));
  };
  builders["scalar_mul"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.matmul(p(t, pt, "s"), p(t, pt, "a")));
  };
  builders["matmul"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.matmul(p(t, pt, "a"), t.transpose(p(t, pt, "b"))));
  };
  builders["cmul"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.cmul(p(t, pt, "a"), p(t, pt, "b")));
  };
  builders["transpose"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.square(t.transpose(p(t, pt, "a"))));
  };
  builders["exp"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.exp(p(t, pt, "a")));
  };
  builders["log"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.log(t.exp(p(t, pt, "a"))));
  };
  builders["logistic"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.logistic(p(t, pt, "a")));
  };
  builders["square"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.square(p(t, pt, "a")));
  };
  builders["sqrt"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.sqrt(t.exp(p(t, pt, "a"))));
  };
  builders["trace_diag"] = [&](Tape &t, const auto &pt) {
    Var m = t.matmul(p(t, pt, "a"), t.transpose(p(t, pt, "a")));
    return t.add(t.trace(m), t.sum(t.square(t.diag_part(m))));
  };
  builders["diag_embed"] = [&](Tape &t, const auto &pt) {
    Var v = p(t, pt, "v");
    return t.sum(t.square(t.matmul(t.diag_embed(v), p(t, pt, "a"))));
  };
  builders["cholesky"] = [&](Tape &t, const auto &pt) {
    // Weighted sum keeps every gradient entry away from zero; an
    // unweighted sum of squares collapses to trace(A).
    Var w = t.constant(pt.at("w"));
    return t.sum(t.cmul(w, t.cholesky(p(t, pt, "spd"))));
  };
  builders["tri_solve_lower"] = [&](Tape &t, const auto &pt) {
    Var l = t.cholesky(p(t, pt, "spd"));
    return t.sum(t.square(t.tri_solve_lower(l, p(t, pt, "a"))));
  };
  builders["tri_solve_lower_transpose"] = [&](Tape &t, const auto &pt) {
    Var l = t.cholesky(p(t, pt, "spd"));
    return t.sum(t.square(t.tri_solve_lower_transpose(l, p(t, pt, "a"))));
  };
  builders["gather"] = [&](Tape &t, const auto &pt) {
    Var g = t.gather(p(t, pt, "a"), {0, 2}, {1, 3});
    return t.sum(t.square(g));
  };
  builders["quadratic_form"] = [&](Tape &t, const auto &pt) {
    Var l = t.cholesky(p(t, pt, "spd"));
    Var c = t.tri_solve_lower(l, p(t, pt, "v"));
    return t.sum(t.square(c));
  };
  builders["clamp"] = [&](Tape &t, const auto &pt) {
    return t.sum(t.square(t.clamp(p(t, pt, "a"), -0.4, 0.4)));
  };

  for (const auto &[name, build] : builders) {
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      // Entries bounded away from zero so no gradient entry is
      // structurally tiny relative to central-difference noise.
      std::uniform_real_distribution<double> unif(0.5, 2.0);
      auto positive = [&](int r, int c) {
        Matrix m(r, c);
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) {
            m(i, j) = unif(rng);
          }
        }
        return m;
      };
      std::map<std::string, Matrix> pt;
      pt["a"] = positive(4, 4);
      pt["b"] = positive(4, 4);
      pt["v"] = positive(4, 1);
      pt["s"] = positive(1, 1);
      pt["w"] = positive(4, 4);
      pt["spd"] = random_spd(4, rng);
      worst = std::max(worst, check_gradients(build, pt, 1e-5));
    }
    INFO("primitive: " << name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("backward is pure and deterministic") {
  std::mt19937_64 rng(5);
  Matrix a = random_spd(6, rng);
  Tape t;
  Var va = t.parameter("A", a);
  Var out = asvgp::ad::logdet_spd(t, va);
  GradientMap g1 = t.backward(out);
  GradientMap g2 = t.backward(out);
  CHECK((g1.at("A") - g2.at("A")).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("logdet via cholesky agrees with eigenvalue oracle up to n=64") {
  std::mt19937_64 rng(9);
  for (int n : {2, 8, 32, 64}) {
    Matrix a = random_spd(n, rng);
    Tape t;
    double ld = asvgp::ad::logdet_spd(t, t.constant(a)).scalar();
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    double oracle = es.eigenvalues().array().log().sum();
    CHECK(std::abs(ld - oracle) < 1e-10 * std::max(1.0, std::abs(oracle)));
  }
}

TEST_CASE("errors: shape mismatch and non-SPD cholesky") {
  Tape t;
  Var a = t.constant(Matrix::Zero(2, 3));
  Var b = t.constant(Matrix::Zero(2, 3));
  CHECK_THROWS_AS((void)t.matmul(a, b), asvgp::ad::ShapeError);
  CHECK_THROWS_AS((void)t.backward(a), asvgp::ad::ShapeError);

  Matrix bad = Matrix::Identity(3, 3);
  bad(2, 2) = -5.0;
  try {
    (void)t.cholesky(t.constant(bad));
    CHECK(false);
  } catch (const asvgp::ad::CholeskyError &e) {
    CHECK(e.min_eigenvalue < 0.0);
  }
}
