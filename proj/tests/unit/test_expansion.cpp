#include <chrono>
#include <cmath>

#include "cuolab/expansion.hpp"
#include "doctest.h"

using namespace cuolab;

namespace {

ModelParams base(int L, int n_time, cplx uc, cplx uo, double beta = 1.0) {
  ModelParams p;
  p.t = 1.0;
  p.eps_c = {0.2, 0.2};
  p.eps_o = {-0.3, -0.3};
  p.beta = beta;
  p.L = L;
  p.h = n_time / beta;
  p.U_c = uc;
  p.U_o = uo;
  return validate_params(p);
}

// Cu up, O down -> O up, Cu down: a pair-hopping four-point function.
ExternalIndices ext1() {
  return {{0, 0, 0, Spin::Up}, {1, 0, 0, Spin::Down}, {2, 0, 0, Spin::Up}, {0, 0, 0, Spin::Down}};
}

double rel(cplx a, cplx b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("interaction kernel antisymmetry over every argument") {
  const ModelParams p = base(1, 2, 0.7, -0.4);
  const InteractionKernel k = build_interaction_kernel(p, ext1());
  const int n = num_modes(1);
  int nonzero = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          const LambdaLinear u = k(a, b, c, d), s1 = k(b, a, c, d), s2 = k(a, b, d, c);
          CHECK(s1.c0 == -u.c0);
          CHECK(s1.lp == -u.lp);
          CHECK(s1.lm == -u.lm);
          CHECK(s2.c0 == -u.c0);
          CHECK(s2.lp == -u.lp);
          nonzero += !u.is_zero();
        }
  CHECK(nonzero == 3 * 4 + 8);
  // lambda anchoring: V carries lambda_1 psibar_X1 psibar_X2 psi_Y2 psi_Y1 with weight -(1/h) per slice
  auto s = full_space(p);
  const JetPoly v = build_v(p, k, s);
  const ExternalIndices e = ext1();
  auto pos = [&](const Mode& m, int t) { return s->position({m.orb, m.x1, m.x2, m.spin, t}); };
  const JetPoly q = JetPoly::monomial(
      s, {s->id(0, true, pos(e.X1, 1)), s->id(0, true, pos(e.X2, 1)), s->id(0, false, pos(e.Y2, 1)),
          s->id(0, false, pos(e.Y1, 1))},
      Jet(1.0));
  const auto& [mask, one] = *q.terms().begin();
  CHECK(std::abs(v.coeff(mask).lambda_coeff(1) - one.scalar() * (-1.0 / p.h)) < 1e-15);
}

TEST_CASE("zero couplings give V = 0 at lambda = 0 and P = 1") {
  const ModelParams p = base(1, 2, 0.0, 0.0);
  auto s = full_space(p);
  CHECK(build_v0(p, build_interaction_kernel(p, ext1()), s).size() == 0);
  const CovarianceMatrix C = covariance_full(p);
  CHECK(std::abs(partition_engine(p, ext1(), C).P - 1.0) < 1e-15);
  CHECK(std::abs(partition_series(p, ext1(), C).P - 1.0) < 1e-15);
  CHECK(std::abs(partition_hs(p, ext1(), C).P - 1.0) < 1e-15);
  CHECK(partition_hs(p, ext1(), C).terms == 1);
}

TEST_CASE("initial free kernel bound") {
  const ModelParams p = base(1, 2, 0.6, -0.25);
  auto s = full_space(p);
  const JetPoly v = build_v(p, build_interaction_kernel(p, ext1()), s);
  const double n = kernel_norms(extract_kernel(v, 2, p.h, 0, 0), p.h).one_infty_norm;
  CHECK(n > 0.0);
  CHECK(n <= 1.5 * 0.6 + 1e-14);
}

TEST_CASE("evaluator triangle at L=1, beta h=2 including the lambda coefficients") {
  const ModelParams p = base(1, 2, 0.3, -0.2);
  const CovarianceMatrix C = covariance_full(p);
  const PartitionValue e = partition_engine(p, ext1(), C), s = partition_series(p, ext1(), C),
                       h = partition_hs(p, ext1(), C);
  CHECK(rel(e.P, s.P) < 1e-10);
  CHECK(rel(e.P, h.P) < 1e-10);
  CHECK(rel(e.dP_plus, s.dP_plus) < 1e-10);
  CHECK(rel(e.dP_plus, h.dP_plus) < 1e-10);
  CHECK(rel(e.dP_minus, s.dP_minus) < 1e-10);
  CHECK(rel(e.dP_minus, h.dP_minus) < 1e-10);
  CHECK(std::abs(e.dP_plus) > 1e-3);
  // the transfer-matrix form is exact up to the covariance assembly error
  const PartitionValue t = partition_hs(p, ext1(), C, {HsMode::TransferMatrix});
  CHECK(rel(e.P, t.P) < 1e-8);
  CHECK(rel(e.dP_plus, t.dP_plus) < 1e-8);
  CHECK(rel(e.dP_minus, t.dP_minus) < 1e-8);
  CHECK_THROWS_AS(partition_engine(base(1, 4, 0.3, -0.2), ext1(), covariance_full(base(1, 4, 0.3, -0.2))),
                  std::length_error);
}

TEST_CASE("series and auxiliary fields agree at beta h = 4") {
  const ModelParams p = base(1, 4, 0.4, 0.3);
  const CovarianceMatrix C = covariance_full(p);
  const PartitionValue s = partition_series(p, ext1(), C), h = partition_hs(p, ext1(), C),
                       t = partition_hs(p, ext1(), C, {HsMode::TransferMatrix});
  CHECK(rel(s.P, h.P) < 1e-10);
  CHECK(rel(s.dP(), h.dP()) < 1e-10);
  CHECK(rel(s.P, t.P) < 1e-8);
  CHECK(rel(s.dP(), t.dP()) < 1e-8);
  // truncation: the certified remainder covers the omitted orders
  for (int cap : {1, 2, 4}) {
    const PartitionValue tr = partition_series(p, ext1(), C, {cap});
    CHECK(std::abs(tr.P - s.P) <= tr.tail_bound);
    CHECK(std::abs(tr.dP() - s.dP()) <= tr.tail_bound);
  }
  HsOptions small;
  small.max_aux_fields = 4;
  CHECK_THROWS_AS(partition_hs(p, ext1(), C, small), std::length_error);
}

TEST_CASE("first order in U_c is the equal-time density product") {
  const ModelParams p = base(1, 2, 0.01, 0.0);
  const CovarianceMatrix C = covariance_full(p);
  const PartitionValue tr = partition_series(p, ext1(), C, {1});
  cplx expect = 1.0;
  for (int t = 0; t < p.n_time; ++t) {
    const FieldIndex up{0, 0, 0, Spin::Up, t}, dn{0, 0, 0, Spin::Down, t};
    expect -= p.U_c / p.h * C(up, up) * C(dn, dn);
  }
  CHECK(std::abs(tr.P - expect) < 1e-15);
  CHECK(std::abs(partition_engine(p, ext1(), C).P - expect) < 1e-3 * 0.01);
}

TEST_CASE("U = 0: correlation is the free Wick four-point") {
  for (int nt : {2, 4}) {
    const ModelParams p = base(1, nt, 0.0, 0.0);
    const PartitionValue v = partition_series(p, ext1(), covariance_full(p));
    double im = 1.0;
    const double c = correlation_from_partition(p, v, &im);
    CHECK(std::abs(c - four_point_hc(p, ext1())) < 1e-9);
    CHECK(std::abs(im) < 1e-10);
  }
}

TEST_CASE("correlation is real and converges in h") {
  const ModelParams p = base(1, 4, 0.5, 0.5);
  const double ref = four_point_hc(p, ext1());
  const CorrelationResult r = correlation_from_log_derivative(p, ext1(), Evaluator::HsTransfer, {4, 8, 16, 32}, ref);
  for (const auto& pt : r.sweep) CHECK(std::abs(pt.imag) < 1e-10);
  for (size_t i = 1; i < r.sweep.size(); ++i)
    CHECK(std::abs(r.sweep[i].correlation - ref) < std::abs(r.sweep[i - 1].correlation - ref));
  CHECK(std::abs(r.extrapolated - ref) < std::abs(r.sweep.back().correlation - ref));
  CHECK_THROWS_AS(correlation_from_log_derivative(p, ext1(), Evaluator::HsTransfer, {4, 16}), std::invalid_argument);
  PartitionValue bad;
  bad.P = -1.0;
  CHECK_THROWS_AS(correlation_from_partition(p, bad), std::domain_error);
}

// Flow instances keep U_o = 0 so that V, and with it every J and G, lives on 8 of the 12 fields.
TEST_CASE("single-scale flow: J equals G kernel by kernel") {
  FlowInput in{base(1, 2, 1e-3, 0.0), ext1(), make_cutoff(8.0, 1.0, 2.0)};
  REQUIRE(in.cut.num_scales() == 1);
  const ScaleFlow f = j_flow(in);
  const int l = in.cut.N_beta;
  CHECK(kernel_max_diff(f.at(l).J, g_flow(in, l), in.p.h) < 1e-10);
  CHECK(kernel_max_diff(f.at(l + 1).J, g_flow(in, l + 1), in.p.h) == 0.0);
  CHECK(f.at(l).tail_estimate < 1e-12);
  // first Taylor coefficient is the free integral
  auto s = full_space(in.p);
  const Eigen::MatrixXcd C = restrict_covariance(sliced_covariance(in.p, in.cut, l), *s);
  const JetPoly V = f.at(l + 1).J;
  const JetPoly t1 = z_component(log_poly(convolve(exp_poly(V * Jet::z(3)), C, 0)), 1);
  CHECK(kernel_max_diff(t1, convolve(V, C, 0), in.p.h) < 1e-15);
}

TEST_CASE("V = 0 gives a vanishing flow at lambda = 0") {
  FlowInput in{base(1, 2, 0.0, 0.0), ext1(), make_cutoff(8.0, 1.0, 2.0)};
  const ScaleFlow f = j_flow(in, 3);
  for (const auto& lv : f.levels) CHECK(jet_component(lv.J, 0, 0).size() == 0);
}

TEST_CASE("two-scale flow telescopes") {
  // beta = 0.5, h = 4, M = 2.1: N_beta = 1, N_h = 2
  FlowInput in{base(1, 2, 2e-3, 0.0, 0.5), ext1(), make_cutoff(2.1, 0.5, 4.0)};
  REQUIRE(in.cut.num_scales() == 2);
  const ScaleFlow f = j_flow(in);
  for (int l = in.cut.N_beta; l <= in.cut.N_h; ++l) CHECK(kernel_max_diff(f.at(l).J, g_flow(in, l), in.p.h) < 1e-10);
}

TEST_CASE("second Taylor coefficient through the interpolation formula") {
  const ModelParams p = base(1, 2, 0.2, -0.1);
  auto s = full_space(p);
  const Poly V = build_v0(p, build_interaction_kernel(p, ext1()), s);
  const Eigen::MatrixXcd C = restrict_covariance(covariance_full(p), *s);
  const Poly bk = tree_order_two(V, C);
  const JetPoly t2 = z_component(log_poly(convolve(exp_poly(to_jet(V) * Jet::z(2)), C, 0)), 2);
  CHECK(bk.max_abs_diff(jet_component(t2, 0, 0)) < 1e-13);
  CHECK(bk.size() > 0);
}

TEST_CASE("inductive and Schwinger probes") {
  const ModelParams p0 = base(1, 2, 0.0, 0.0);
  const TheoremConstants tc = theorem_constants(p0, 1.0, 0.95);
  const double u = 1e-3 * tc.threshold;
  FlowInput in{base(1, 2, u, 0.0), ext1(), make_cutoff(tc.M, 1.0, 2.0)};
  const ScaleFlow f = j_flow(in);
  const InductiveReport r = inductive_bound_probe(f, tc.alpha, tc.c0, tc.M);
  CHECK(r.pass);
  CHECK(r.max_q2 > 0.0);
  CHECK(r.max_q2 <= r.seed_bound * (1 + 1e-12));
  CHECK(std::abs(r.seed_bound - std::pow(tc.M, -in.cut.N_beta) * tc.alpha * tc.alpha * tc.c0 * tc.c0 * 1.5 * u) <=
        1e-12 * r.seed_bound);
  const SchwingerReport sw = schwinger_bound_probe(f, tc.c0);
  CHECK(sw.pass);
  CHECK(std::abs(sw.lhs_plus - sw.lhs_minus) <= 1e-9 * sw.lhs_plus);

  FlowInput zero{p0, ext1(), make_cutoff(tc.M, 1.0, 2.0)};
  const ScaleFlow fz = j_flow(zero, 2);
  const InductiveReport rz = inductive_bound_probe(fz, tc.alpha, tc.c0, tc.M);
  CHECK(rz.max_q1 == 0.0);
  CHECK(rz.max_q2 == 0.0);
  // U = 0: (1/beta)|dJ_0/dlambda_1| is the free Wick four-point
  const SchwingerReport s0 = schwinger_bound_probe(fz, tc.c0);
  InteractingOracle o(p0);
  const double wick = std::abs(o.expectation(build_quartic(p0, ext1())));
  CHECK(std::abs(s0.lhs_plus - wick) < 1e-9);
}

TEST_CASE("interpolated determinant bound") {
  const ModelParams p = base(1, 2, 0.0, 0.0, 0.5);
  const Cutoff cut = make_cutoff(2.1, 0.5, 4.0);
  for (int l = cut.N_beta; l <= cut.N_h; ++l) {
    const DeterminantBoundReport r = determinant_bound_probe(p, cut, l, {}, 30, 3);
    CHECK(r.pass);
    CHECK(r.fitted_c0 <= r.c0);
    CHECK(r.fitted_c0 > 0.0);
  }
}
