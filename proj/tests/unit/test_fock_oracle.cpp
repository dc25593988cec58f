#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "cuolab/fock_oracle.hpp"
#include "doctest.h"

using namespace cuolab;

namespace {
ModelParams small(double uc = 0.0, double uo = 0.0) {
  ModelParams p;
  p.t = 1.0;
  p.eps_c = {0.2, 0.2};
  p.eps_o = {-0.3, -0.3};
  p.U_c = uc;
  p.U_o = uo;
  p.beta = 1.0;
  p.h = 2.0;
  return validate_params(p);
}

double hermitian_residual(const Eigen::SparseMatrix<cplx>& m) {
  Eigen::MatrixXcd d(m);
  return (d - d.adjoint()).cwiseAbs().maxCoeff();
}
}  // namespace

TEST_CASE("canonical anticommutation") {
  const int n = 6;
  std::mt19937 rng(3);
  Eigen::SparseMatrix<cplx> id(1 << n, 1 << n);
  id.setIdentity();
  for (int it = 0; it < 50; ++it) {
    const int i = rng() % n, j = rng() % n;
    auto ai = annihilator(n, i), aj = annihilator(n, j), ajd = creator(n, j);
    Eigen::MatrixXcd acomm = Eigen::MatrixXcd(ai * ajd + ajd * ai);
    Eigen::MatrixXcd expect = i == j ? Eigen::MatrixXcd(id) : Eigen::MatrixXcd::Zero(1 << n, 1 << n);
    CHECK((acomm - expect).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::MatrixXcd(ai * aj + aj * ai).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("H0 single-particle spectrum matches eigenvalues_A") {
  ModelParams p = small();
  p.eps_c = {0, 0};
  p.eps_o = {0, 0};
  auto h0 = build_h0(p);
  CHECK(hermitian_residual(h0.mat) < 1e-13);
  // one-particle states of one spin: masks with a single bit among up modes
  std::vector<int> idx;
  for (int m = 0; m < 6; ++m)
    if (mode_from_index(1, m).spin == Spin::Up) idx.push_back(1 << m);
  Eigen::MatrixXcd dense(h0.mat), sub(3, 3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) sub(a, b) = dense(idx[a], idx[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(sub);
  auto A = eigenvalues_A(p, Momentum{0, 0, 1}, Spin::Up);
  std::sort(A.begin(), A.end());
  for (int i = 0; i < 3; ++i) CHECK(es.eigenvalues()(i) == doctest::Approx(A[i]).epsilon(1e-12));
}

TEST_CASE("H0 at L=2 is diagonal for t=0 and hermitian") {
  ModelParams p = small();
  p.L = 2;
  p.t = 0.0;
  p = validate_params(p);
  CHECK_THROWS_AS(build_h0(p), std::length_error);
}

TEST_CASE("V and H_lambda") {
  ModelParams p = small();
  CHECK(build_v(p).mat.nonZeros() == 0);
  p.U_c = 1.0;
  auto v = build_v(p);
  const int up = mode_index(1, {0, 0, 0, Spin::Up}), dn = mode_index(1, {0, 0, 0, Spin::Down});
  CHECK(std::abs(v.mat.coeff((1 << up) | (1 << dn), (1 << up) | (1 << dn)) - 1.0) < 1e-15);
  ExternalIndices e{{0, 0, 0, Spin::Up}, {0, 0, 0, Spin::Down}, {1, 0, 0, Spin::Up}, {1, 0, 0, Spin::Down}};
  auto h = build_h_lambda(p, e, 0.0);
  Eigen::SparseMatrix<cplx> diff = h.mat - build_h0(p).mat - v.mat;
  CHECK(Eigen::MatrixXcd(diff).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(hermitian_residual(build_h_lambda(p, e, 0.7).mat) < 1e-14);
}

TEST_CASE("thermal expectation basics") {
  ModelParams p = small(0.6, 1.4);
  p.eps_c = {-0.3, -0.3};
  p.eps_o = {-0.7, -0.7};
  InteractingOracle o(p);
  Eigen::SparseMatrix<cplx> id(64, 64);
  id.setIdentity();
  CHECK(std::abs(o.expectation({id, "1"}) - 1.0) < 1e-12);
  for (int m = 0; m < 6; ++m) {
    Eigen::SparseMatrix<cplx> n = creator(6, m) * annihilator(6, m);
    CHECK(std::abs(o.expectation({n, "n"}) - 0.5) < 1e-12);
  }
  ModelParams hot = small(0.5, 0.5);
  hot.beta = 1e-4;
  hot.h = 2e4;
  hot = validate_params(hot);
  Eigen::SparseMatrix<cplx> n0 = creator(6, 0) * annihilator(6, 0);
  CHECK(std::abs(thermal_expectation(hot, {build_h0(hot).mat + build_v(hot).mat, "H"}, {n0, "n"}) - 0.5) < 1e-3);
}

TEST_CASE("free two-point oracle") {
  ModelParams p = small();
  FreeTwoPointOracle o(p);
  const Mode cu{0, 0, 0, Spin::Up};
  CHECK(o(cu, 0.25, {0, 0, 0, Spin::Down}, 0.0) == cplx(0.0));
  ModelParams p0 = p;
  p0.t = 0.0;
  FreeTwoPointOracle o0(p0);
  CHECK(std::abs(o0(cu, 0.5, cu, 0.5) - 1.0 / (1.0 + std::exp(0.2))) < 1e-13);

  // compare with the full 64-state construction
  InteractingOracle full(p);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const Mode ma{a, 0, 0, Spin::Up}, mb{b, 0, 0, Spin::Up};
      Eigen::SparseMatrix<cplx> op = creator(6, mode_index(1, ma)) * annihilator(6, mode_index(1, mb));
      CHECK(std::abs(o(ma, 0.0, mb, 0.0) - full.expectation({op, "x"})) < 1e-12);
    }
  // anti-periodicity in the time difference
  const Mode o1{1, 0, 0, Spin::Up};
  CHECK(std::abs(o(cu, 0.75, o1, 0.0) + o(cu, 0.0, o1, 0.25)) < 1e-12);
}

TEST_CASE("free two-point oracle L=2 translation invariance") {
  ModelParams p = small();
  p.L = 2;
  p = validate_params(p);
  FreeTwoPointOracle o(p);
  const Mode a{0, 0, 0, Spin::Down}, b{1, 1, 0, Spin::Down};
  const Mode a2{0, 1, 1, Spin::Down}, b2{1, 0, 1, Spin::Down};
  CHECK(std::abs(o(a, 0.5, b, 0.25) - o(a2, 0.5, b2, 0.25)) < 1e-12);
}

TEST_CASE("four point: Wick at U=0, vanishing for repeated index, reality") {
  ModelParams p = small();
  InteractingOracle o(p);
  FreeTwoPointOracle g(p);
  const Mode X1{0, 0, 0, Spin::Up}, X2{1, 0, 0, Spin::Down}, Y2{2, 0, 0, Spin::Down}, Y1{1, 0, 0, Spin::Up};
  ManyBodyOperator q = build_quartic(p, {X1, X2, Y1, Y2});
  // <c*X1 c*X2 cY2 cY1> = <c*X1 cY1><c*X2 cY2> - <c*X1 cY2><c*X2 cY1>
  const cplx wick = g(X1, 0, Y1, 0) * g(X2, 0, Y2, 0) - g(X1, 0, Y2, 0) * g(X2, 0, Y1, 0);
  CHECK(std::abs(o.expectation(q) - wick) < 1e-12);
  CHECK(o.four_point_hc({X1, X1, Y1, Y2}) == 0.0);
  ManyBodyOperator qi = build_quartic(small(0.5, 0.3), {X1, X2, Y1, Y2});
  InteractingOracle oi(small(0.5, 0.3));
  Eigen::SparseMatrix<cplx> herm = qi.mat + Eigen::SparseMatrix<cplx>(qi.mat.adjoint());
  CHECK(std::abs(oi.expectation({herm, "h"}).imag()) < 1e-12);
}

TEST_CASE("pairing and spin correlators") {
  CHECK(pairing_terms(PairingFlavor::S, 1, 0, 0, 0, 1, 0, 0).size() == 1);
  auto terms = pairing_terms(PairingFlavor::SStar, 1, 0, 0, 0, 1, 0, 0);
  CHECK(terms.size() == 16);
  for (const auto& t : terms) {
    CHECK(t.ext.X2 == terms[0].ext.X2);
    CHECK(t.ext.Y2 == terms[0].ext.Y2);
  }
  ModelParams p = small(0.4, 0.4);
  const double s = pairing_correlation(p, PairingFlavor::S, 0, 0, 0, 1, 0, 0);
  const double ss = pairing_correlation(p, PairingFlavor::SStar, 0, 0, 0, 1, 0, 0);
  CHECK(ss == doctest::Approx(4.0 * s));
  // d-wave coefficients cancel at L=1
  CHECK(std::abs(pairing_correlation(p, PairingFlavor::D, 0, 0, 0, 1, 0, 0)) < 1e-14);

  // spin-spin at coinciding site, U=0, eps=0: Wick value n(1-n) summed: 1/2 <n_up(1-n_dn) + n_dn(1-n_up)>
  ModelParams p0 = small();
  p0.eps_c = {0, 0};
  p0.eps_o = {0, 0};
  FreeTwoPointOracle g(p0);
  const Mode up{0, 0, 0, Spin::Up}, dn{0, 0, 0, Spin::Down};
  const double n = g(up, 0, up, 0).real();
  CHECK(n == doctest::Approx(g(dn, 0, dn, 0).real()));
  const double wick = n * (1 - n);  // <S+S- + S-S+>/2 with independent spins
  CHECK(spin_spin_correlation(p0, 0, 0, 0, 0, 0, 0) == doctest::Approx(wick).epsilon(1e-12));
}
