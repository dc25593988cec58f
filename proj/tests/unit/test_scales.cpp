#include <cmath>
#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>

#include "cuolab/scales.hpp"
#include "doctest.h"

using namespace cuolab;
using std::numbers::pi;

namespace {
ModelParams params(int L, int nt, double beta = 1.0) {
  ModelParams p;
  p.t = 1.0;
  p.eps_c = {0.2, 0.2};
  p.eps_o = {-0.3, -0.3};
  p.beta = beta;
  p.L = L;
  p.h = nt / beta;
  return validate_params(p);
}
}  // namespace

TEST_CASE("bump function") {
  CHECK(bump_phi(0.0) == 1.0);
  CHECK(bump_phi(3.0) == 0.0);
  CHECK(bump_phi(1.5) > 0.0);
  CHECK(bump_phi(1.5) < 1.0);
  CHECK(bump_phi(1.5, 1) < 0.0);
  // phi = 1/(1 + e^{g}) with g = 1/(2-x) - 1/(x-1): strict decrease of phi on (1,2)
  // is strict increase of g; phi itself rounds to 0 or 1 within ~1e-3 of the ends.
  double prev = 1.0, gprev = -INFINITY;
  for (int i = 1; i < 10000; ++i) {
    const double x = 1.0 + i / 10000.0;
    const double v = bump_phi(x);
    const double g = 1.0 / (2.0 - x) - 1.0 / (x - 1.0);
    CHECK(g > gprev);
    CHECK(v <= prev);
    if (v > 1e-300 && prev < 1.0 - 1e-12) CHECK(v < prev);
    prev = v;
    gprev = g;
    CHECK(std::abs(bump_phi(-x) - v) < 1e-15);
  }
  // derivatives against central differences of the next lower order
  for (double x : {1.2, 1.5, 1.77, -1.4}) {
    const double d = 1e-5;
    for (int k = 1; k <= 4; ++k) {
      const double fd = (bump_phi(x + d, k - 1) - bump_phi(x - d, k - 1)) / (2 * d);
      CHECK(bump_phi(x, k) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("chi derivative bound scales as M^-2m") {
  for (int m = 0; m <= 4; ++m) {
    std::vector<double> c;
    for (double M : {4.0, 8.0, 16.0}) {
      double worst = 0.0;
      for (int i = 0; i <= 20000; ++i) {
        const double x = M + (M * M - M) * i / 20000.0;
        worst = std::max(worst, std::abs(chi(M, x, m)));
      }
      c.push_back(worst * std::pow(M, 2 * m));
    }
    // c(M) converges to the phi-derivative sup: spread bounded
    CHECK(*std::max_element(c.begin(), c.end()) / *std::min_element(c.begin(), c.end()) < 2.5);
  }
}

TEST_CASE("cutoff cut and partition of unity") {
  Cutoff s = make_cutoff(4.0, 1.0, 64.0);
  CHECK(s.N_beta == 1);
  CHECK(s.N_h == 3);
  CHECK_FALSE(s.clamped);
  for (double beta : {0.05, 0.3, 1.0, 2.0, 7.0}) {
    Cutoff t = make_cutoff(4.0, beta, 4096.0);
    CHECK(1.0 / beta < std::pow(4.0, t.N_beta));
    CHECK(std::pow(4.0, t.N_beta) <= std::max(1.0, 1.0 / beta) * 4.0 + 1e-12);
    for (int l = t.N_beta; l <= t.N_h; ++l) CHECK(std::pow(4.0, l) <= 2 * 4096.0);
  }
  CHECK(make_cutoff(4.0, 1.0, 2.0).clamped == false);
  CHECK(make_cutoff(4.0, 0.1, 2.0).clamped);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-200.0, 200.0);
  const double h = 64.0;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double om = u(rng);
    double sum = 0.0;
    for (int l = s.N_beta; l <= s.N_h; ++l) {
      const double c = chi_l(s, h, om, l);
      CHECK(c >= 0.0);
      sum += c;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
    const double r = matsubara_radius(h, om);
    for (int l = s.N_beta + 1; l <= s.N_h; ++l) {
      if (r <= std::pow(4.0, l) || r >= std::pow(4.0, l + 2)) CHECK(chi_l(s, h, om, l) == 0.0);
    }
    if (r <= std::pow(4.0, s.N_beta + 1)) CHECK(chi_l(s, h, om, s.N_beta) == 1.0);
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("support count") {
  const Cutoff s = make_cutoff(4.0, 1.0, 64.0);
  double lo = 1e9, hi = 0.0;
  for (int l = s.N_beta; l <= s.N_h; ++l) {
    const double c = support_count(s, 64.0, 1.0, l);
    CHECK(c <= 64.0);
    const double r = c / std::pow(4.0, l + 2);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  CHECK(hi / lo < 10.0);
}

TEST_CASE("slices sum to the full covariance, including complex shift") {
  ModelParams p = params(3, 16);
  const Cutoff s = make_cutoff(4.0, p.beta, p.h);
  for (Shift sh : {Shift{}, Shift{cplx(0.0, 0.2), cplx(0.0)}}) {
    auto set = sliced_covariances(p, s, sh);
    CHECK(set.slices.size() == static_cast<size_t>(s.num_scales()));
    CHECK(set.sum().max_abs_diff(covariance_full(p, sh)) < 1e-10);
  }
  ModelParams q = params(2, 2, 0.1);
  const Cutoff one = make_cutoff(4.0, q.beta, q.h);
  CHECK(one.num_scales() == 1);
  CHECK(sliced_covariance(q, one, one.N_beta).max_abs_diff(covariance_full(q)) == 0.0);
}

TEST_CASE("kernel norms") {
  SparseKernel f0;
  f0.ordered[{{}, {}}] = cplx(-2.0, 0.0);
  CHECK(kernel_norms(f0, 3.0).one_norm == 2.0);
  CHECK(kernel_norms(f0, 3.0).one_infty_norm == 2.0);

  // delta kernel h^2 1_{X=Y=X0}: anchored sum = h^2 / h
  const double h = 4.0;
  DenseKernel d = DenseKernel::zeros(1, 5);
  d({2}, {2}) = h * h;
  CHECK(kernel_norm_1_infty(d, h) == doctest::Approx(h));
  CHECK(kernel_norm_1(d, h) == doctest::Approx(1.0));

  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  for (int m = 1; m <= 3; ++m) {
    const int n = 5;
    SparseKernel k;
    k.m = m;
    for (int it = 0; it < 20; ++it) {
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<int> X(all.begin(), all.begin() + m);
      std::shuffle(all.begin(), all.end(), rng);
      std::vector<int> Y(all.begin(), all.begin() + m);
      std::sort(X.begin(), X.end());
      std::sort(Y.begin(), Y.end());
      k.ordered[{X, Y}] = cplx(g(rng), g(rng));
    }
    const KernelNorms sparse = kernel_norms(k, h);
    const DenseKernel dense = to_dense(k, n);
    CHECK(std::abs(sparse.one_norm - kernel_norm_1(dense, h)) < 1e-12 * sparse.one_norm);
    CHECK(std::abs(sparse.one_infty_norm - kernel_norm_1_infty(dense, h)) < 1e-12 * sparse.one_infty_norm);
    CHECK(kernel_norm_1(dense, h) <= n / h * kernel_norm_1_infty(dense, h) * (1 + 1e-12));
  }
  // non-antisymmetric random dense kernels
  for (int it = 0; it < 20; ++it) {
    DenseKernel r = DenseKernel::zeros(2, 4);
    for (auto& v : r.data) v = cplx(g(rng), g(rng));
    CHECK(kernel_norm_1(r, h) <= 4 / h * kernel_norm_1_infty(r, h) * (1 + 1e-12));
  }
}

TEST_CASE("covariance norms agree with the dense kernel") {
  ModelParams p = params(2, 4);
  const CovarianceMatrix c = covariance_full(p);
  const Eigen::MatrixXcd m = c.dense();
  DenseKernel d = DenseKernel::zeros(1, static_cast<int>(m.rows()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) d({i}, {j}) = m(i, j);
  CHECK(covariance_norm_1_infty(c) == doctest::Approx(kernel_norm_1_infty(d, p.h)).epsilon(1e-12));
  CHECK(covariance_norm_1(c) == doctest::Approx(kernel_norm_1(d, p.h)).epsilon(1e-12));
}

TEST_CASE("Gram representation and Gram bound") {
  ModelParams p = params(3, 8);
  const Cutoff s = make_cutoff(4.0, p.beta, p.h);
  std::mt19937_64 rng(21);
  const int nf = num_fields(p);
  for (Shift sh : {Shift{}, Shift{cplx(0.1, 0.15), cplx(0.0)}}) {
    for (int l = s.N_beta; l <= s.N_h; ++l) {
      GramBuilder gb(p, s, l, sh);
      const CovarianceMatrix c = sliced_covariance(p, s, l, sh);
      double worst = 0.0;
      for (int it = 0; it < 20; ++it) {
        const FieldIndex X = field_from_index(p, static_cast<int>(rng() % nf));
        const FieldIndex Y = field_from_index(p, static_cast<int>(rng() % nf));
        const GramVectors a = gb(X), b = gb(Y);
        worst = std::max(worst, std::abs(gb.inner(a.f, b.g) - c(X, Y)));
        double expect = 0.0;
        for (double om : matsubara_grid(p.beta, p.n_time)) expect += chi_l(s, p.h, om, l);
        CHECK(std::abs(std::pow(gb.norm(a.g), 2) - expect / p.beta) < 1e-12);
      }
      CHECK(worst < 1e-10);
      for (int n = 1; n <= 6; ++n) {
        std::vector<FieldIndex> X(n), Y(n);
        Eigen::MatrixXcd D(n, n);
        double bound = 1.0;
        std::vector<GramVectors> gx, gy;
        for (int j = 0; j < n; ++j) {
          X[j] = field_from_index(p, static_cast<int>(rng() % nf));
          Y[j] = field_from_index(p, static_cast<int>(rng() % nf));
          gx.push_back(gb(X[j]));
          gy.push_back(gb(Y[j]));
          bound *= gb.norm(gx.back().f) * gb.norm(gy.back().g);
        }
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) D(j, k) = c(X[j], Y[k]);
        CHECK(std::abs(D.determinant()) <= bound * (1 + 1e-10) + 1e-300);
      }
    }
  }
}

TEST_CASE("theorem constants") {
  ModelParams p = params(1, 2);
  TheoremConstants prev = theorem_constants(p, 1.0, 0.95, 0, 0, 1.0);
  std::vector<double> lx, l1, l2;
  for (int e = 1; e <= 10; ++e) {
    TheoremConstants c = theorem_constants(p, 1.0, 0.95, 0, 0, e);
    CHECK(c.f1 >= prev.f1);
    CHECK(c.f2 >= prev.f2);
    prev = c;
    if (e >= 4) {
      lx.push_back(std::log(e));
      l1.push_back(std::log(c.f1));
      l2.push_back(std::log(c.f2));
    }
  }
  auto slope = [&](const std::vector<double>& y) {
    return (y.back() - y.front()) / (lx.back() - lx.front());
  };
  CHECK(slope(l1) == doctest::Approx(44.0).epsilon(1e-9));
  CHECK(slope(l2) == doctest::Approx(36.0).epsilon(1e-9));
  ModelParams hot = p;
  hot.beta = 1e-3;
  CHECK(theorem_constants(hot, 1.0, 0.95).threshold > 100 * theorem_constants(p, 1.0, 0.95).threshold);
  CHECK(theorem_decay_rate(1.0, 1.0) == doctest::Approx(std::log(2.0) / (8 * std::numbers::e)));
  CHECK(theorem_decay_rate(1.0, 0.25) > theorem_decay_rate(1.0, 1.0));
  const TheoremConstants c = theorem_constants(p, 2.0, 0.5, 256.0, 1.0);
  CHECK(c.c0 == doctest::Approx(2.0 / (0.5 * 0.25) * std::pow(256.0, 9)));
}

TEST_CASE("bound probes: norm slope and tadpole shape where the top slice is full") {
  // beta h = 128: 2h = M^{7/2}, slices 2 and 3 are fully inside the lattice range; slice 4 is empty
  ModelParams p = params(2, 128);
  const Cutoff s = make_cutoff(4.0, p.beta, p.h);
  const BoundReport r = bound_probes(p, s, {}, 4, 6, 3);
  REQUIRE(r.rows.size() == static_cast<size_t>(s.num_scales()));
  CHECK(r.rows.back().norm_1_infty == 0.0);
  for (const auto& row : r.rows) CHECK(std::isfinite(row.l1_ratio));
  CHECK(r.norm_slope >= -1.2);
  CHECK(r.norm_slope <= -0.8);
  CHECK(r.tadpole_spread < 10.0);
  CHECK(r.support_spread == INFINITY);
}
