#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "cuolab/model.hpp"
#include "doctest.h"

using namespace cuolab;
using std::numbers::pi;

namespace {
ModelParams base() {
  ModelParams p;
  p.t = 1.0;
  p.eps_c = {0.2, 0.2};
  p.eps_o = {-0.3, -0.3};
  p.beta = 1.0;
  p.h = 4.0;
  return validate_params(p);
}
}  // namespace

TEST_CASE("validate_params") {
  ModelParams p;
  p.beta = 1.0;
  p.h = 4.0;
  CHECK(validate_params(p).n_time == 4);
  p.h = 3.0;
  CHECK_THROWS_AS(validate_params(p), std::invalid_argument);
  p.h = 4.0;
  p.beta = 0.0;
  CHECK_THROWS(validate_params(p));
  p.beta = 1.0;
  p.L = 0;
  CHECK_THROWS(validate_params(p));
  p.L = 1;
  p.eps_c = {0.5, -0.5};
  p.eps_o = {0.5, 0.5};
  CHECK(validate_params(p).e_max == doctest::Approx(1.0));
  p.eps_c = {2.5, 0.0};
  CHECK(validate_params(p).e_max == doctest::Approx(2.5));
}

TEST_CASE("grids") {
  CHECK(momentum_grid(2).size() == 4);
  auto w = matsubara_grid(1.0, 2);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == doctest::Approx(-pi));
  CHECK(w[1] == doctest::Approx(pi));
  auto w2 = matsubara_grid(2.0, 4);
  REQUIRE(w2.size() == 4);
  CHECK(w2[0] == doctest::Approx(-1.5 * pi));
  CHECK(w2[3] == doctest::Approx(1.5 * pi));
  for (double x : matsubara_grid(1.0, 16)) CHECK(std::abs(x) < pi * 16);
}

TEST_CASE("kinetic matrix special points") {
  ModelParams p = base();
  Momentum kpp{1, 1, 2};
  auto M = kinetic_matrix(p, kpp, Spin::Up);
  CHECK(std::abs(M(0, 1)) < 1e-15);
  CHECK(std::abs(M(0, 2)) < 1e-15);
  CHECK(kpp.is_pi_pi());
  p.eps_c = {0, 0};
  p.eps_o = {0, 0};
  auto M0 = kinetic_matrix(p, Momentum{0, 0, 2}, Spin::Up);
  CHECK(std::abs(M0(0, 1) - 2.0) < 1e-15);
  CHECK(std::abs(M0(2, 0) - 2.0) < 1e-15);
  auto A = eigenvalues_A(p, Momentum{0, 0, 2}, Spin::Up);
  CHECK(A[1] == doctest::Approx(2 * std::sqrt(2.0)));
  CHECK(A[2] == doctest::Approx(-2 * std::sqrt(2.0)));
  CHECK(std::abs(dispersion_E(1.0, Momentum{0, 0, 1}) - 8.0) < 1e-14);
  CHECK(std::abs(dispersion_E(2.3, Momentum{1, 1, 2})) < 1e-14);
}

TEST_CASE("eigen data against dense solver") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0), ang(0.0, 2 * pi);
  double worst_eig = 0, worst_unit = 0, worst_diag = 0;
  for (int it = 0; it < 1000; ++it) {
    ModelParams p = base();
    p.t = u(rng);
    p.eps_c = {u(rng), u(rng)};
    p.eps_o = {u(rng), u(rng)};
    Momentum k = Momentum::real(ang(rng), ang(rng));
    Spin s = it % 2 ? Spin::Up : Spin::Down;
    auto M = kinetic_matrix(p, k, s);
    CHECK((M - M.adjoint()).cwiseAbs().maxCoeff() < 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es(M);
    auto A = eigenvalues_A(p, k, s);
    std::array<double, 3> sorted = A;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 3; ++i) worst_eig = std::max(worst_eig, std::abs(sorted[i] - es.eigenvalues()(i)));
    auto U = unitary_U(p, k, s);
    worst_unit = std::max(worst_unit, (U.adjoint() * U - Eigen::Matrix3cd::Identity()).cwiseAbs().maxCoeff());
    Eigen::Matrix3cd D = Eigen::Matrix3cd::Zero();
    for (int i = 0; i < 3; ++i) D(i, i) = A[i];
    worst_diag = std::max(worst_diag, (U.adjoint() * M * U - D).cwiseAbs().maxCoeff());
  }
  CHECK(worst_eig < 1e-12);
  CHECK(worst_unit < 1e-12);
  CHECK(worst_diag < 1e-12);
}

TEST_CASE("degenerate branch returns identity") {
  ModelParams p = base();
  Momentum kpp{2, 2, 4};
  CHECK((unitary_U(p, kpp, Spin::Up) - Eigen::Matrix3cd::Identity()).norm() == 0.0);
  auto A = eigenvalues_A(p, kpp, Spin::Up);
  CHECK(A[0] == 0.2);
  CHECK(A[1] == -0.3);
  p.t = 0.0;
  auto A0 = eigenvalues_A(p, Momentum{1, 0, 4}, Spin::Up);
  CHECK(A0[0] == 0.2);
}

TEST_CASE("dispersion bounds and periodicity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ang(0.0, 2 * pi), im(-1.0, 1.0);
  const double t = 1.3;
  for (int it = 0; it < 1000; ++it) {
    const double r = 0.8;
    const cplx k1(ang(rng), r * im(rng)), k2(ang(rng), r * im(rng));
    const cplx E = dispersion_E(t, k1, k2);
    CHECK(std::abs(E) <= 8 * t * t + 8 * t * t * std::sinh(2 * r) + 1e-12);
    CHECK(std::abs(E.imag()) <= 4 * t * t * std::sinh(2 * r) + 1e-12);
    CHECK(E.real() >= -4 * t * t * std::sinh(2 * r) - 1e-12);
    CHECK(std::abs(dispersion_E(t, k1 + 2 * pi, k2 - 4 * pi) - E) < 1e-12);
  }
  ModelParams p = base();
  auto A = eigenvalues_A(p, Momentum{1, 2, 5}, Spin::Up);
  auto B = eigenvalues_A(p, Momentum{6, -3, 5}, Spin::Up);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(A[i] - B[i]) < 1e-12);
}

TEST_CASE("f_scale") {
  CHECK(f_scale(1.0, 1.0, 0.0) == 0.0);
  CHECK(f_scale(1.0, 1.0, 8 / (pi * pi)) == doctest::Approx(0.5 * std::asinh(1.0)).epsilon(1e-14));
  CHECK(f_scale(1.0, 1.0, 0.3) < f_scale(1.0, 1.0, 0.31));
}

TEST_CASE("field indexing round trip") {
  ModelParams p = base();
  p.L = 2;
  p = validate_params(p);
  for (int i = 0; i < num_fields(p); ++i) CHECK(field_index(p, field_from_index(p, i)) == i);
}
