#include "cuolab/covariance.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <fftw3.h>

namespace cuolab {

using std::numbers::pi;

namespace {
const cplx I(0.0, 1.0);
}

// --- storage ---------------------------------------------------------------

CovarianceMatrix CovarianceMatrix::zeros(const ModelParams& p, Shift shift, std::string tag) {
  CovarianceMatrix c;
  c.L = p.L;
  c.n_time = p.n_time;
  c.beta = p.beta;
  c.h = p.h;
  c.shift = shift;
  c.tag = std::move(tag);
  c.data.assign(static_cast<size_t>(2) * 9 * p.L * p.L * c.time_span(), cplx(0.0));
  return c;
}

cplx CovarianceMatrix::operator()(const FieldIndex& X, const FieldIndex& Y) const {
  if (X.spin != Y.spin) return 0.0;
  return at(spin_index(X.spin), X.orb, Y.orb, X.x1 - Y.x1, X.x2 - Y.x2, X.time - Y.time);
}

Eigen::MatrixXcd CovarianceMatrix::dense() const {
  const int n = num_fields();
  ModelParams p;
  p.L = L;
  p.n_time = n_time;
  Eigen::MatrixXcd m(n, n);
  for (int i = 0; i < n; ++i) {
    const FieldIndex X = field_from_index(p, i);
    for (int j = 0; j < n; ++j) m(i, j) = (*this)(X, field_from_index(p, j));
  }
  return m;
}

Eigen::MatrixXcd CovarianceMatrix::dense(const std::vector<FieldIndex>& rows,
                                         const std::vector<FieldIndex>& cols) const {
  Eigen::MatrixXcd m(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j) m(i, j) = (*this)(rows[i], cols[j]);
  return m;
}

CovarianceMatrix& CovarianceMatrix::operator+=(const CovarianceMatrix& o) {
  if (o.data.size() != data.size()) throw std::invalid_argument("covariance size mismatch");
  for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
  return *this;
}

double CovarianceMatrix::max_abs_diff(const CovarianceMatrix& o) const {
  if (o.data.size() != data.size()) throw std::invalid_argument("covariance size mismatch");
  double m = 0.0;
  for (size_t i = 0; i < data.size(); ++i) m = std::max(m, std::abs(data[i] - o.data[i]));
  return m;
}

// --- O_j series --------------------------------------------------------------

namespace {

constexpr int kMaxTerms = 200;
constexpr double kRelStop = 1e-16;

// sum_{n >= n0} X^n / ((2n+e)! h^(2n+f))
OSeriesValue power_series(cplx X, double h, int e, int f, int n0) {
  OSeriesValue out;
  cplx term = std::pow(X, n0);
  double fact = 1.0;
  for (int m = 2; m <= 2 * n0 + e; ++m) fact *= m;
  term /= fact * std::pow(h, 2 * n0 + f);
  const double ax = std::abs(X);
  for (int n = n0; n < n0 + kMaxTerms; ++n) {
    out.value += term;
    ++out.terms;
    const double ratio = ax / ((2.0 * n + e + 1) * (2.0 * n + e + 2) * h * h);
    if (term == 0.0 || (std::abs(term) < kRelStop * std::abs(out.value) && ratio < 0.5)) {
      out.tail = std::abs(term) * ratio / (1.0 - ratio);
      return out;
    }
    term *= X / ((2.0 * n + e + 1) * (2.0 * n + e + 2) * h * h);
  }
  out.converged = false;
  return out;
}

// sum_{n >= n0} S_n / ((2n+e)! h^(2n+f)),  S_n = sum_{m=1}^n C(n,m) E^(m-1) Q^(n-m).
// S_1 = 1, S_{n+1} = Q^n + X S_n with X = Q + E.
OSeriesValue binomial_series(cplx Q, cplx X, double h, int e, int f, int n0) {
  OSeriesValue out;
  cplx S = 1.0, Qn = Q;  // S_1, Q^1
  for (int n = 1; n < n0; ++n) {
    S = Qn + X * S;
    Qn *= Q;
  }
  double fact = 1.0;
  for (int m = 2; m <= 2 * n0 + e; ++m) fact *= m;
  double inv = 1.0 / (fact * std::pow(h, 2 * n0 + f));
  const double m_abs = std::max(std::abs(X), std::abs(Q));
  for (int n = n0; n < n0 + kMaxTerms; ++n) {
    const cplx term = S * inv;
    out.value += term;
    ++out.terms;
    const double step = 1.0 / ((2.0 * n + e + 1) * (2.0 * n + e + 2) * h * h);
    // |S_n| <= n m^(n-1): majorant ratio
    const double ratio = m_abs * step * (n + 1.0) / n;
    if ((term == 0.0 && S == 0.0 && Qn == 0.0) ||
        (std::abs(term) < kRelStop * std::abs(out.value) && ratio < 0.5)) {
      const double major = n * std::pow(m_abs, n - 1) * inv;
      out.tail = major * ratio / (1.0 - ratio);
      return out;
    }
    S = Qn + X * S;
    Qn *= Q;
    inv *= step;
  }
  out.converged = false;
  return out;
}

struct OContext {
  double delta;
  cplx Q, E, X;
};

OContext o_context(const ModelParams& p, Spin s, cplx k1, cplx k2) {
  const double ec = p.eps_c[spin_index(s)], eo = p.eps_o[spin_index(s)];
  OContext c;
  c.delta = 0.5 * (ec - eo);
  c.Q = c.delta * c.delta;
  c.E = dispersion_E(p.t, k1, k2);
  c.X = c.Q + c.E;
  return c;
}

OSeriesValue combine(const OSeriesValue& a, cplx ca, const OSeriesValue& b, cplx cb) {
  OSeriesValue o;
  o.value = ca * a.value + cb * b.value;
  o.tail = std::abs(ca) * a.tail + std::abs(cb) * b.tail;
  o.terms = std::max(a.terms, b.terms);
  o.converged = a.converged && b.converged;
  return o;
}

}  // namespace

std::array<OSeriesValue, 5> o_series_all(const ModelParams& p, Spin s, cplx k1, cplx k2) {
  const OContext c = o_context(p, s, k1, k2);
  const double h = p.h;
  std::array<OSeriesValue, 5> o;
  const OSeriesValue even1 = power_series(c.X, h, 0, -1, 1);
  const OSeriesValue odd0 = power_series(c.X, h, 1, 0, 1);
  o[0] = combine(power_series(c.X, h, 0, -2, 2), -2.0, {}, 0.0);
  o[1] = combine(even1, -1.0, odd0, c.delta);
  o[2] = odd0;
  o[3] = binomial_series(c.Q, c.X, h, 0, -2, 2);
  o[4] = combine(binomial_series(c.Q, c.X, h, 1, -1, 1), -c.delta, {}, 0.0);
  return o;
}

OSeriesValue o_series(const ModelParams& p, int j, Spin s, cplx k1, cplx k2) {
  if (j < 1 || j > 5) throw std::invalid_argument("O_j index must be in 1..5");
  return o_series_all(p, s, k1, k2)[j - 1];
}

// --- B matrices ---------------------------------------------------------------

namespace {

struct BContext {
  double t, h;
  cplx a, a2, br, O3;
};

cplx n12(const BContext& c, cplx k1, cplx) { return c.t * (1.0 + std::exp(I * k1)) * c.a * (1.0 + c.O3); }
cplx n22(const BContext& c, cplx k1, cplx) { return 2.0 * c.t * c.t * (1.0 + std::cos(k1)) * c.br; }
cplx n23(const BContext& c, cplx k1, cplx k2) {
  return c.t * c.t * (1.0 + std::exp(-I * k1)) * (1.0 + std::exp(I * k2)) * c.br;
}

}  // namespace

BMatrixEvaluation b_matsubara(const ModelParams& p, const Momentum& k, double omega, Spin s) {
  const double ec = p.eps_c[spin_index(s)], eo = p.eps_o[spin_index(s)], h = p.h;
  const cplx k1 = k.k1(), k2 = k.k2();
  const auto O = o_series_all(p, s, k1, k2);
  const OContext oc = o_context(p, s, k1, k2);

  BContext c;
  c.t = p.t;
  c.h = h;
  c.a = std::exp(-I * omega / h + (ec + eo) / (2.0 * h));
  c.a2 = std::exp(-2.0 * I * omega / h + (ec + 3.0 * eo) / (2.0 * h));
  c.br = 0.5 * c.a + 0.5 * c.a2 + (c.a + c.a2) * O[3].value + (c.a - c.a2) * O[4].value;
  c.O3 = O[2].value;

  const cplx D = h * h * (1.0 - c.a) * (1.0 - c.a) - c.a * oc.X + c.a * O[0].value;
  const cplx N11 = h * (1.0 - c.a) + oc.delta * c.a + c.a * O[1].value;
  const cplx go = 1.0 / (h * (1.0 - std::exp(-I * omega / h + eo / h)));

  BMatrixEvaluation out;
  out.k = k;
  out.omega = omega;
  out.sigma = s;
  out.denominator_flag = std::abs(D) < 1e-14;
  for (const auto& o : O) {
    out.series_flag = out.series_flag || !o.converged;
    out.series_truncation_error = std::max(out.series_truncation_error, o.tail);
  }
  Eigen::Matrix3cd& B = out.value;
  B(0, 0) = N11 / D;
  B(0, 1) = n12(c, k1, k2) / D;
  B(0, 2) = n12(c, k2, k1) / D;
  B(1, 0) = n12(c, -k1, -k2) / D;
  B(2, 0) = n12(c, -k2, -k1) / D;
  B(1, 1) = go * (1.0 + n22(c, k1, k2) / D);
  B(2, 2) = go * (1.0 + n22(c, k2, k1) / D);
  B(1, 2) = go * n23(c, k1, k2) / D;
  B(2, 1) = go * n23(c, -k1, -k2) / D;
  // O_j enter linearly with coefficients of size <= |a| / |D|; scale the tail accordingly.
  out.series_truncation_error *= 4.0 * std::max({1.0, std::abs(c.a), std::abs(c.a2)}) *
                                 std::max(1.0, std::abs(p.t) * std::abs(p.t) * 8.0) / std::abs(D) *
                                 std::max(1.0, std::abs(go));
  return out;
}

Eigen::Matrix3cd b_eigenform(const ModelParams& p, const Momentum& k, double omega, Spin s) {
  const auto A = eigenvalues_A(p, k, s);
  const Eigen::Matrix3cd U = unitary_U(p, k, s);
  Eigen::Matrix3cd B = Eigen::Matrix3cd::Zero();
  for (int g = 0; g < 3; ++g) {
    const cplx den = p.h * (1.0 - std::exp(-I * omega / p.h + A[g] / p.h));
    for (int r = 0; r < 3; ++r)
      for (int e = 0; e < 3; ++e) B(r, e) += std::conj(U(r, g)) * U(e, g) / den;
  }
  return B;
}

cplx d_infinity(const ModelParams& p, cplx k1, cplx k2, double omega, Spin s) {
  const double ec = p.eps_c[spin_index(s)], eo = p.eps_o[spin_index(s)];
  const cplx z = I * omega - 0.5 * (ec + eo);
  return z * z - 0.25 * (ec - eo) * (ec - eo) - dispersion_E(p.t, k1, k2);
}

Eigen::Matrix3cd b_infinity(const ModelParams& p, cplx k1, cplx k2, double omega, Spin s) {
  const double eo = p.eps_o[spin_index(s)], t = p.t;
  const cplx D = d_infinity(p, k1, k2, omega, s);
  const cplx g = I * omega - eo;
  auto b12 = [&](cplx q1, cplx) { return t * (1.0 + std::exp(I * q1)) / D; };
  auto b22 = [&](cplx q1, cplx) { return 1.0 / g + 2.0 * t * t * (1.0 + std::cos(q1)) / (g * D); };
  auto b23 = [&](cplx q1, cplx q2) {
    return t * t * (1.0 + std::exp(-I * q1)) * (1.0 + std::exp(I * q2)) / (g * D);
  };
  Eigen::Matrix3cd B;
  B(0, 0) = g / D;
  B(0, 1) = b12(k1, k2);
  B(0, 2) = b12(k2, k1);
  B(1, 0) = b12(-k1, -k2);
  B(2, 0) = b12(-k2, -k1);
  B(1, 1) = b22(k1, k2);
  B(2, 2) = b22(k2, k1);
  B(1, 2) = b23(k1, k2);
  B(2, 1) = b23(-k1, -k2);
  return B;
}

// --- assembly -----------------------------------------------------------------

namespace {

// Sum g[n1][n2] e^{-2 pi i (n1 d1 + n2 d2)/L} for every (d1, d2), in place.
class GridTransform {
 public:
  GridTransform(int L, SumMethod method) : L_(L), method_(method) {
    if (method_ == SumMethod::Fft) {
      buf_ = fftw_alloc_complex(static_cast<size_t>(L) * L);
      plan_ = fftw_plan_dft_2d(L, L, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    } else {
      phase_.resize(L);
      for (int j = 0; j < L; ++j) phase_[j] = std::exp(-2.0 * pi * I * static_cast<double>(j) / static_cast<double>(L));
    }
  }
  ~GridTransform() {
    if (plan_) fftw_destroy_plan(plan_);
    if (buf_) fftw_free(buf_);
  }
  GridTransform(const GridTransform&) = delete;
  GridTransform& operator=(const GridTransform&) = delete;

  void apply(std::vector<cplx>& g) const {
    const int n = L_ * L_;
    if (method_ == SumMethod::Fft) {
      std::memcpy(buf_, g.data(), sizeof(cplx) * n);
      fftw_execute(plan_);
      std::memcpy(static_cast<void*>(g.data()), buf_, sizeof(cplx) * n);
      return;
    }
    std::vector<cplx> out(n, 0.0);
    for (int d1 = 0; d1 < L_; ++d1)
      for (int d2 = 0; d2 < L_; ++d2) {
        cplx acc = 0.0;
        for (int n1 = 0; n1 < L_; ++n1)
          for (int n2 = 0; n2 < L_; ++n2) acc += g[n1 * L_ + n2] * phase_[(n1 * d1 + n2 * d2) % L_];
        out[d1 * L_ + d2] = acc;
      }
    g.swap(out);
  }

 private:
  int L_;
  SumMethod method_;
  fftw_complex* buf_ = nullptr;
  fftw_plan plan_ = nullptr;
  std::vector<cplx> phase_;
};

// Fill c from per-momentum kernels kern(s, n1, n2) -> [rho][eta][dt] values, scaled by 1/L^2.
template <class Kernel>
void transform_into(CovarianceMatrix& c, SumMethod method, Kernel&& kern) {
  const int L = c.L, span = c.time_span(), nk = L * L;
  GridTransform tr(L, method);
  for (int s = 0; s < 2; ++s) {
    // g[(rho*3+eta)*span + dt][k]
    std::vector<std::vector<cplx>> g(9 * span, std::vector<cplx>(nk, 0.0));
    for (int n1 = 0; n1 < L; ++n1)
      for (int n2 = 0; n2 < L; ++n2) kern(s, n1, n2, g, n1 * L + n2);
    for (int re = 0; re < 9; ++re)
      for (int dt = 0; dt < span; ++dt) {
        auto& v = g[re * span + dt];
        tr.apply(v);
        for (int d1 = 0; d1 < L; ++d1)
          for (int d2 = 0; d2 < L; ++d2)
            c.at(s, re / 3, re % 3, d1, d2, dt - (c.n_time - 1)) = v[d1 * L + d2] / static_cast<double>(nk);
      }
  }
}

double time_ordered_factor(double d, double A, double beta) {
  if (d >= 0.0) {
    if (A > 0.0) return std::exp((d - beta) * A) / (1.0 + std::exp(-beta * A));
    return std::exp(d * A) / (1.0 + std::exp(beta * A));
  }
  if (A < 0.0) return -std::exp((d + beta) * A) / (1.0 + std::exp(beta * A));
  return -std::exp(d * A) / (1.0 + std::exp(-beta * A));
}

}  // namespace

CovarianceMatrix covariance_weighted(const ModelParams& p, Shift shift, const std::function<double(double)>& weight,
                                     std::string tag, SumMethod method, AssemblyReport* report) {
  CovarianceMatrix c = CovarianceMatrix::zeros(p, shift, std::move(tag));
  const auto omegas = matsubara_grid(p.beta, p.n_time);
  const int span = c.time_span(), nt = p.n_time;
  std::vector<double> w(omegas.size());
  for (size_t i = 0; i < omegas.size(); ++i) w[i] = weight ? weight(omegas[i]) : 1.0;
  // phase[m][dt] = e^{i dt omega_m / h}
  std::vector<std::vector<cplx>> phase(omegas.size(), std::vector<cplx>(span));
  for (size_t m = 0; m < omegas.size(); ++m)
    for (int dt = 0; dt < span; ++dt) phase[m][dt] = std::exp(I * omegas[m] * ((dt - (nt - 1)) / p.h));
  AssemblyReport rep;
  transform_into(c, method, [&](int s, int n1, int n2, std::vector<std::vector<cplx>>& g, int col) {
    const Spin sp = static_cast<Spin>(s);
    const double sh = p.shat(sp);
    const Momentum k = Momentum{n1, n2, p.L}.shifted(sh * shift[0], sh * shift[1]);
    for (size_t m = 0; m < omegas.size(); ++m) {
      if (w[m] == 0.0) continue;
      const BMatrixEvaluation b = b_matsubara(p, k, omegas[m], sp);
      rep.denominator_flags += b.denominator_flag;
      rep.series_flags += b.series_flag;
      rep.max_truncation_error = std::max(rep.max_truncation_error, b.series_truncation_error);
      for (int re = 0; re < 9; ++re) {
        const cplx v = w[m] * b.value(re / 3, re % 3) / p.beta;
        for (int dt = 0; dt < span; ++dt) g[re * span + dt][col] += v * phase[m][dt];
      }
    }
  });
  if (report) *report = rep;
  return c;
}

CovarianceMatrix covariance_full(const ModelParams& p, Shift shift, SumMethod method, AssemblyReport* report) {
  return covariance_weighted(p, shift, nullptr, "full", method, report);
}

cplx covariance_entry(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y, Shift shift,
                      const std::function<double(double)>& weight, bool* flag) {
  if (X.spin != Y.spin) return 0.0;
  const Spin s = X.spin;
  const double sh = p.shat(s);
  const int L = p.L, d1 = X.x1 - Y.x1, d2 = X.x2 - Y.x2;
  const double dtau = (X.time - Y.time) / p.h;
  cplx acc = 0.0;
  bool bad = false;
  for (double om : matsubara_grid(p.beta, p.n_time)) {
    const double wt = weight ? weight(om) : 1.0;
    if (wt == 0.0) continue;
    const cplx tph = wt * std::exp(I * om * dtau);
    for (int n1 = 0; n1 < L; ++n1)
      for (int n2 = 0; n2 < L; ++n2) {
        const Momentum k = Momentum{n1, n2, L}.shifted(sh * shift[0], sh * shift[1]);
        const BMatrixEvaluation b = b_matsubara(p, k, om, s);
        bad = bad || b.denominator_flag;
        const double kd = 2.0 * pi * wrap(n1 * d1 + n2 * d2, L) / L;
        acc += std::exp(-I * kd) * tph * b.value(X.orb, Y.orb);
      }
  }
  if (flag) *flag = bad;
  return acc / (p.beta * L * L);
}

Eigen::Matrix3cd time_ordered_kernel(const ModelParams& p, const Momentum& k, Spin s, double d) {
  const auto A = eigenvalues_A(p, k, s);
  const Eigen::Matrix3cd U = unitary_U(p, k, s);
  Eigen::Matrix3cd K = Eigen::Matrix3cd::Zero();
  for (int g = 0; g < 3; ++g) {
    const double f = time_ordered_factor(d, A[g], p.beta);
    for (int r = 0; r < 3; ++r)
      for (int e = 0; e < 3; ++e) K(r, e) += f * std::conj(U(r, g)) * U(e, g);
  }
  return K;
}

CovarianceMatrix covariance_time_ordered(const ModelParams& p) {
  CovarianceMatrix c = CovarianceMatrix::zeros(p, {}, "time_ordered");
  const int span = c.time_span(), nt = p.n_time;
  transform_into(c, SumMethod::Fft, [&](int s, int n1, int n2, std::vector<std::vector<cplx>>& g, int col) {
    const Momentum k{n1, n2, p.L};
    for (int dt = 0; dt < span; ++dt) {
      const Eigen::Matrix3cd K = time_ordered_kernel(p, k, static_cast<Spin>(s), (dt - (nt - 1)) / p.h);
      for (int re = 0; re < 9; ++re) g[re * span + dt][col] = K(re / 3, re % 3);
    }
  });
  return c;
}

cplx time_ordered_entry(const ModelParams& p, int rho, int eta, Spin s, int d1, int d2, double d) {
  const int L = p.L;
  cplx acc = 0.0;
  for (int n1 = 0; n1 < L; ++n1)
    for (int n2 = 0; n2 < L; ++n2) {
      const double kd = 2.0 * pi * wrap(n1 * d1 + n2 * d2, L) / L;
      acc += std::exp(-I * kd) * time_ordered_kernel(p, Momentum{n1, n2, L}, s, d)(rho, eta);
    }
  return acc / static_cast<double>(L * L);
}

QuadratureResult covariance_infinite_L(const ModelParams& p, int rho, int eta, Spin s, int d1, int d2, double d,
                                       int n, double tol, int n_max) {
  auto midpoint = [&](int m) {
    cplx acc = 0.0;
    const double hstep = 2.0 * pi / m;
    for (int i = 0; i < m; ++i) {
      const double k1 = -pi + (i + 0.5) * hstep;
      for (int j = 0; j < m; ++j) {
        const double k2 = -pi + (j + 0.5) * hstep;
        acc += std::exp(-I * (d1 * k1 + d2 * k2)) * time_ordered_kernel(p, Momentum::real(k1, k2), s, d)(rho, eta);
      }
    }
    return acc / static_cast<double>(m * m);
  };
  QuadratureResult r;
  cplx coarse = midpoint(n);
  for (int m = n; m <= n_max; m *= 2) {
    const cplx fine = midpoint(2 * m);
    r.value = fine;
    r.error = std::abs(fine - coarse);
    r.n = 2 * m;
    if (r.error <= tol * std::max(1.0, std::abs(fine))) {
      r.converged = true;
      break;
    }
    coarse = fine;
  }
  return r;
}

// --- contour identity -----------------------------------------------------------

void gauss_legendre(int n, double a, double b, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5)), dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    x[i] = mid - half * z;
    x[n - 1 - i] = mid + half * z;
    w[i] = w[n - 1 - i] = 2.0 * half / ((1.0 - z * z) * dp * dp);
  }
}

ContourCheck contour_shift_identity_check(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y,
                                          const ContourOptions& opt) {
  if (opt.n < 1) throw std::invalid_argument("contour check needs n >= 1");
  const int L = p.L, q = opt.q - 1;
  const double r = f_scale(p.t, p.beta, opt.eps / 2.0) / opt.n;
  const double sh = p.shat(X.spin);
  Shift base{};
  base[opt.p_dir - 1] += opt.w;

  ContourCheck out;
  const int dq = q == 0 ? X.x1 - Y.x1 : X.x2 - Y.x2;
  const cplx mult = static_cast<double>(L) / (2.0 * pi) * (std::exp(I * (2.0 * pi * dq / L)) - 1.0);
  bool flag = false;
  out.lhs = std::pow(mult, opt.n) * covariance_entry(p, X, Y, base, opt.weight, &flag);
  out.flag = flag;

  auto rhs_with = [&](int ng, int nt) {
    std::vector<double> th, wt;
    gauss_legendre(ng, 0.0, 2.0 * pi / L, th, wt);
    std::vector<cplx> node, weight;
    for (int i = 0; i < ng; ++i)
      for (int j = 0; j < nt; ++j) {
        const double phi = 2.0 * pi * j / nt;
        node.push_back(th[i] + r * std::exp(I * phi));
        // (L/2pi) dtheta * (1/2pi i) dz/(z-theta)^2 with dz = i r e^{i phi} dphi
        weight.push_back(static_cast<double>(L) / (2.0 * pi) * wt[i] * std::exp(-I * phi) / (r * nt));
      }
    const size_t m = node.size();
    std::vector<size_t> idx(opt.n, 0);
    cplx acc = 0.0;
    while (true) {
      cplx u = 0.0, wprod = 1.0;
      for (int j = 0; j < opt.n; ++j) {
        u += node[idx[j]];
        wprod *= weight[idx[j]];
      }
      Shift s = base;
      s[q] += sh * u;
      bool f = false;
      acc += wprod * covariance_entry(p, X, Y, s, opt.weight, &f);
      flag = flag || f;
      int j = 0;
      while (j < opt.n && ++idx[j] == m) idx[j++] = 0;
      if (j == opt.n) break;
    }
    return acc;
  };

  int ng = opt.gl_start, nt = opt.trap_start;
  cplx prev = rhs_with(ng, nt);
  out.rhs = prev;
  while (ng * 2 <= opt.gl_max && nt * 2 <= opt.trap_max) {
    ng *= 2;
    nt *= 2;
    const cplx cur = rhs_with(ng, nt);
    const double change = std::abs(cur - prev);
    out.rhs = cur;
    prev = cur;
    if (change < opt.tol) {
      out.converged = true;
      break;
    }
  }
  out.gl_nodes = ng;
  out.trap_nodes = nt;
  out.diff = std::abs(out.lhs - out.rhs);
  out.flag = out.flag || flag;
  return out;
}

// --- export ---------------------------------------------------------------------

void export_binary(const CovarianceMatrix& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const char magic[8] = {'C', 'U', 'O', 'C', 'O', 'V', '1', '\0'};
  f.write(magic, 8);
  const std::int32_t L = c.L, nbh = c.n_time;
  f.write(reinterpret_cast<const char*>(&L), 4);
  f.write(reinterpret_cast<const char*>(&nbh), 4);
  for (const cplx& s : c.shift) {
    const double re = s.real(), im = s.imag();
    f.write(reinterpret_cast<const char*>(&re), 8);
    f.write(reinterpret_cast<const char*>(&im), 8);
  }
  const Eigen::MatrixXcd m = c.dense();
  const std::int64_t rows = m.rows(), cols = m.cols();
  f.write(reinterpret_cast<const char*>(&rows), 8);
  f.write(reinterpret_cast<const char*>(&cols), 8);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      const double re = m(i, j).real(), im = m(i, j).imag();
      f.write(reinterpret_cast<const char*>(&re), 8);
      f.write(reinterpret_cast<const char*>(&im), 8);
    }
}

void export_csv(const CovarianceMatrix& c, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(17);
  f << "spin,rho,eta,d1,d2,dt,re,im\n";
  for (int s = 0; s < 2; ++s)
    for (int r = 0; r < 3; ++r)
      for (int e = 0; e < 3; ++e)
        for (int d1 = 0; d1 < c.L; ++d1)
          for (int d2 = 0; d2 < c.L; ++d2)
            for (int dt = -(c.n_time - 1); dt <= c.n_time - 1; ++dt) {
              const cplx v = c.at(s, r, e, d1, d2, dt);
              f << s << ',' << r + 1 << ',' << e + 1 << ',' << d1 << ',' << d2 << ',' << dt << ',' << v.real() << ','
                << v.imag() << '\n';
            }
}

}  // namespace cuolab
