#include "cuolab/scales.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cuolab {

namespace {

using std::numbers::pi;
constexpr cplx I{0.0, 1.0};

// Truncated Taylor series in dx, order 4.
struct Jet {
  std::array<double, 5> c{};
  static Jet var(double x) { return Jet{{x, 1.0, 0.0, 0.0, 0.0}}; }
  static Jet cst(double x) { return Jet{{x, 0.0, 0.0, 0.0, 0.0}}; }
};

Jet operator+(const Jet& a, const Jet& b) {
  Jet r;
  for (int i = 0; i < 5; ++i) r.c[i] = a.c[i] + b.c[i];
  return r;
}
Jet operator-(const Jet& a, const Jet& b) {
  Jet r;
  for (int i = 0; i < 5; ++i) r.c[i] = a.c[i] - b.c[i];
  return r;
}
Jet operator*(const Jet& a, const Jet& b) {
  Jet r;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; i + j < 5; ++j) r.c[i + j] += a.c[i] * b.c[j];
  return r;
}
Jet recip(const Jet& a) {
  Jet r;
  r.c[0] = 1.0 / a.c[0];
  for (int n = 1; n < 5; ++n) {
    double s = 0.0;
    for (int j = 1; j <= n; ++j) s += a.c[j] * r.c[n - j];
    r.c[n] = -s / a.c[0];
  }
  return r;
}
Jet exp(const Jet& a) {
  // r' = a' r
  Jet r;
  r.c[0] = std::exp(a.c[0]);
  for (int n = 1; n < 5; ++n) {
    double s = 0.0;
    for (int j = 1; j <= n; ++j) s += j * a.c[j] * r.c[n - j];
    r.c[n] = s / n;
  }
  return r;
}

Jet rho(const Jet& u) { return exp(Jet::cst(0.0) - recip(u)); }

constexpr std::array<double, 5> kFact{1.0, 1.0, 2.0, 6.0, 24.0};

}  // namespace

Cutoff make_cutoff(double M, double beta, double h) {
  if (!(M > 2.0)) throw std::invalid_argument("cutoff: M must exceed 2");
  Cutoff s;
  s.M = M;
  s.N_beta = std::max(static_cast<int>(std::floor(std::log(1.0 / beta) / std::log(M))) + 1, 1);
  const int nh = static_cast<int>(std::floor(std::log(2.0 * h) / std::log(M)));
  s.clamped = nh < s.N_beta;
  s.N_h = std::max(nh, s.N_beta);
  return s;
}

double bump_phi(double x, int deriv) {
  if (deriv < 0 || deriv > 4) throw std::invalid_argument("bump_phi: derivative order 0..4");
  const double a = std::abs(x);
  if (a <= 1.0) return deriv == 0 ? 1.0 : 0.0;
  if (a >= 2.0) return 0.0;
  if (deriv == 0) return 1.0 / (1.0 + std::exp(1.0 / (2.0 - a) - 1.0 / (a - 1.0)));
  const Jet y = Jet::var(a);
  const Jet r1 = rho(Jet::cst(2.0) - y), r2 = rho(y - Jet::cst(1.0));
  const Jet v = r1 * recip(r1 + r2);
  const double d = v.c[deriv] * kFact[deriv];
  return (x < 0 && deriv % 2) ? -d : d;
}

double chi(double M, double x, int deriv) {
  const double w = M * M - M;
  return bump_phi((x - M) / w + 1.0, deriv) / std::pow(w, deriv);
}

double matsubara_radius(double h, double omega) { return h * std::abs(1.0 - std::exp(I * (omega / h))); }

double chi_l(const Cutoff& cut, double h, double omega, int l) {
  if (l < cut.N_beta || l > cut.N_h) return 0.0;
  if (cut.N_h == cut.N_beta) return 1.0;
  const double r = matsubara_radius(h, omega);
  const double top = chi(cut.M, std::pow(cut.M, -l) * r);
  if (l == cut.N_beta) return top;
  return top - chi(cut.M, std::pow(cut.M, -(l - 1)) * r);
}

double support_count(const Cutoff& cut, double h, double beta, int l) {
  const int nt = static_cast<int>(std::lround(beta * h));
  int n = 0;
  for (double om : matsubara_grid(beta, nt)) n += chi_l(cut, h, om, l) != 0.0;
  return n / beta;
}

CovarianceMatrix sliced_covariance(const ModelParams& p, const Cutoff& cut, int l, Shift shift,
                                   AssemblyReport* report) {
  return covariance_weighted(
      p, shift, [&](double om) { return chi_l(cut, p.h, om, l); }, "slice_" + std::to_string(l), SumMethod::Fft,
      report);
}

CovarianceMatrix SlicedCovarianceSet::sum() const {
  if (slices.empty()) throw std::logic_error("empty slice set");
  CovarianceMatrix c = slices.begin()->second;
  for (auto it = std::next(slices.begin()); it != slices.end(); ++it) c += it->second;
  c.tag = "slice_sum";
  return c;
}

CovarianceMatrix SlicedCovarianceSet::tail(int l) const {
  auto it = slices.lower_bound(l);
  if (it == slices.end()) throw std::out_of_range("tail beyond the top scale");
  CovarianceMatrix c = it->second;
  for (++it; it != slices.end(); ++it) c += it->second;
  c.tag = "tail_" + std::to_string(l);
  return c;
}

SlicedCovarianceSet sliced_covariances(const ModelParams& p, const Cutoff& cut, Shift shift) {
  SlicedCovarianceSet s;
  s.shift = shift;
  for (int l = cut.N_beta; l <= cut.N_h; ++l) s.slices.emplace(l, sliced_covariance(p, cut, l, shift));
  return s;
}

// ---------------------------------------------------------------- norms

DenseKernel DenseKernel::zeros(int m, int n) {
  DenseKernel k;
  k.m = m;
  k.n = n;
  size_t sz = 1;
  for (int i = 0; i < 2 * m; ++i) sz *= n;
  k.data.assign(sz, 0.0);
  return k;
}

size_t DenseKernel::offset(const std::vector<int>& X, const std::vector<int>& Y) const {
  size_t o = 0;
  for (int x : X) o = o * n + x;
  for (int y : Y) o = o * n + y;
  return o;
}

double kernel_norm_1(const DenseKernel& f, double h) {
  if (f.m == 0) return std::abs(f.data.at(0));
  double s = 0.0;
  for (const cplx& v : f.data) s += std::abs(v);
  return s * std::pow(h, -2 * f.m);
}

double kernel_norm_1_infty(const DenseKernel& f, double h) {
  if (f.m == 0) return std::abs(f.data.at(0));
  const int m = f.m, n = f.n;
  double best = 0.0;
  // Anchor slot a in 0..2m-1 fixed to value v; sum over all other slots.
  std::vector<double> anchored(static_cast<size_t>(2 * m) * n, 0.0);
  for (size_t o = 0; o < f.data.size(); ++o) {
    const double a = std::abs(f.data[o]);
    if (a == 0.0) continue;
    size_t r = o;
    for (int slot = 2 * m - 1; slot >= 0; --slot) {
      anchored[static_cast<size_t>(slot) * n + r % n] += a;
      r /= n;
    }
  }
  for (double v : anchored) best = std::max(best, v);
  return best * std::pow(h, -(2 * m - 1));
}

KernelNorms kernel_norms(const DenseKernel& f, double h) {
  return {kernel_norm_1(f, h), kernel_norm_1_infty(f, h), f.m};
}

KernelNorms kernel_norms(const SparseKernel& f, double h) {
  KernelNorms r;
  r.m = f.m;
  if (f.m == 0) {
    const auto it = f.ordered.find({{}, {}});
    r.one_norm = r.one_infty_norm = it == f.ordered.end() ? 0.0 : std::abs(it->second);
    return r;
  }
  const double mf = std::tgamma(f.m + 1.0), mf1 = std::tgamma(f.m);
  double total = 0.0;
  std::map<int, double> by_x, by_y;
  for (const auto& [key, v] : f.ordered) {
    const double a = std::abs(v);
    total += a;
    for (int x : key.first) by_x[x] += a;
    for (int y : key.second) by_y[y] += a;
  }
  r.one_norm = mf * mf * total * std::pow(h, -2 * f.m);
  double best = 0.0;
  for (const auto& [x, s] : by_x) best = std::max(best, s);
  for (const auto& [y, s] : by_y) best = std::max(best, s);
  r.one_infty_norm = mf1 * mf * best * std::pow(h, -(2 * f.m - 1));
  return r;
}

DenseKernel to_dense(const SparseKernel& f, int n) {
  DenseKernel d = DenseKernel::zeros(f.m, n);
  if (f.m == 0) {
    const auto it = f.ordered.find({{}, {}});
    if (it != f.ordered.end()) d.data[0] = it->second;
    return d;
  }
  std::vector<int> px(f.m), py(f.m);
  auto parity = [](const std::vector<int>& perm) {
    int s = 1;
    for (size_t i = 0; i < perm.size(); ++i)
      for (size_t j = i + 1; j < perm.size(); ++j)
        if (perm[i] > perm[j]) s = -s;
    return s;
  };
  for (const auto& [key, v] : f.ordered) {
    std::iota(px.begin(), px.end(), 0);
    do {
      std::iota(py.begin(), py.end(), 0);
      do {
        std::vector<int> X(f.m), Y(f.m);
        for (int i = 0; i < f.m; ++i) {
          X[i] = key.first[px[i]];
          Y[i] = key.second[py[i]];
        }
        d(X, Y) = static_cast<double>(parity(px) * parity(py)) * v;
      } while (std::next_permutation(py.begin(), py.end()));
    } while (std::next_permutation(px.begin(), px.end()));
  }
  return d;
}

namespace {

// rows[s][rho][dt]: sum over eta and d of |C|; cols[s][eta][dt]: sum over rho and d.
void abs_profiles(const CovarianceMatrix& c, std::vector<double>& rows, std::vector<double>& cols) {
  const int span = c.time_span(), nt = c.n_time, L = c.L;
  rows.assign(2 * 3 * span, 0.0);
  cols.assign(2 * 3 * span, 0.0);
  for (int s = 0; s < 2; ++s)
    for (int r = 0; r < 3; ++r)
      for (int e = 0; e < 3; ++e)
        for (int d1 = 0; d1 < L; ++d1)
          for (int d2 = 0; d2 < L; ++d2)
            for (int dt = -(nt - 1); dt <= nt - 1; ++dt) {
              const double a = std::abs(c.at(s, r, e, d1, d2, dt));
              rows[(s * 3 + r) * span + dt + nt - 1] += a;
              cols[(s * 3 + e) * span + dt + nt - 1] += a;
            }
}

}  // namespace

double covariance_norm_1_infty(const CovarianceMatrix& c) {
  std::vector<double> rows, cols;
  abs_profiles(c, rows, cols);
  const int span = c.time_span(), nt = c.n_time;
  double best = 0.0;
  for (int sr = 0; sr < 6; ++sr)
    for (int anchor = 0; anchor < nt; ++anchor) {
      double rs = 0.0, cs = 0.0;
      for (int other = 0; other < nt; ++other) {
        rs += rows[sr * span + (anchor - other) + nt - 1];
        cs += cols[sr * span + (other - anchor) + nt - 1];
      }
      best = std::max({best, rs, cs});
    }
  return best / c.h;
}

double covariance_norm_1(const CovarianceMatrix& c) {
  std::vector<double> rows, cols;
  abs_profiles(c, rows, cols);
  const int span = c.time_span(), nt = c.n_time;
  double s = 0.0;
  for (int sr = 0; sr < 6; ++sr)
    for (int dt = -(nt - 1); dt <= nt - 1; ++dt) s += (nt - std::abs(dt)) * rows[sr * span + dt + nt - 1];
  return s * c.L * c.L / (c.h * c.h);
}

double anchored_l1(const CovarianceMatrix& c) {
  const int nt = c.n_time, L = c.L;
  double best = 0.0;
  for (int s = 0; s < 2; ++s)
    for (int r = 0; r < 3; ++r)
      for (int e = 0; e < 3; ++e) {
        double acc = 0.0;
        for (int d1 = 0; d1 < L; ++d1)
          for (int d2 = 0; d2 < L; ++d2) {
            for (int dt = -(nt - 1); dt <= nt - 1; ++dt) acc += std::abs(c.at(s, r, e, d1, d2, dt));
            acc += std::abs(c.at(s, r, e, d1, d2, 0));  // x_t = -beta, antiperiodic image of 0
          }
        best = std::max(best, acc);
      }
  return best / c.h;
}

// ---------------------------------------------------------------- Gram vectors

GramBuilder::GramBuilder(const ModelParams& p, const Cutoff& cut, int l, Shift shift)
    : p_(p), omegas_(matsubara_grid(p.beta, p.n_time)) {
  const int L = p.L, nt = p.n_time;
  dim_ = static_cast<size_t>(3) * L * L * 2 * nt;
  sqrt_chi_.resize(nt);
  for (int m = 0; m < nt; ++m) sqrt_chi_[m] = std::sqrt(chi_l(cut, p.h, omegas_[m], l));
  b_.resize(static_cast<size_t>(2) * L * L * nt);
  for (int s = 0; s < 2; ++s) {
    const Spin sp = static_cast<Spin>(s);
    const double sh = p.shat(sp);
    for (int n1 = 0; n1 < L; ++n1)
      for (int n2 = 0; n2 < L; ++n2)
        for (int m = 0; m < nt; ++m) {
          const Momentum k = Momentum{n1, n2, L}.shifted(sh * shift[0], sh * shift[1]);
          b_[((static_cast<size_t>(s) * L + n1) * L + n2) * nt + m] =
              sqrt_chi_[m] == 0.0 ? Eigen::Matrix3cd::Zero() : b_matsubara(p, k, omegas_[m], sp).value;
        }
  }
}

size_t GramBuilder::slot(int eta, int n1, int n2, int s, int m) const {
  const int L = p_.L;
  return (((static_cast<size_t>(eta) * L + n1) * L + n2) * 2 + s) * p_.n_time + m;
}

GramVectors GramBuilder::operator()(const FieldIndex& X) const {
  const int L = p_.L, nt = p_.n_time, s = spin_index(X.spin);
  GramVectors v{Eigen::VectorXcd::Zero(dim_), Eigen::VectorXcd::Zero(dim_)};
  const double tau = X.time / p_.h;
  for (int n1 = 0; n1 < L; ++n1)
    for (int n2 = 0; n2 < L; ++n2) {
      const double kx = 2.0 * pi * wrap(n1 * X.x1 + n2 * X.x2, L) / L;
      for (int m = 0; m < nt; ++m) {
        if (sqrt_chi_[m] == 0.0) continue;
        const cplx ph = std::exp(I * (omegas_[m] * tau - kx)) * sqrt_chi_[m];
        const Eigen::Matrix3cd& B = b_[((static_cast<size_t>(s) * L + n1) * L + n2) * nt + m];
        for (int eta = 0; eta < 3; ++eta) v.f[slot(eta, n1, n2, s, m)] = ph * B(X.orb, eta);
        v.g[slot(X.orb, n1, n2, s, m)] = ph;
      }
    }
  return v;
}

cplx GramBuilder::inner(const Eigen::VectorXcd& u, const Eigen::VectorXcd& v) const {
  // Eigen's dot conjugates the first argument.
  return v.dot(u) / (p_.beta * p_.L * p_.L);
}

// ---------------------------------------------------------------- constants

double theorem_decay_rate(double t, double beta) {
  return std::log(1.0 / (std::max(1.0, t * t) * std::max(beta, beta * beta)) + 1.0) / (8.0 * std::numbers::e);
}

TheoremConstants theorem_constants(const ModelParams& p, double c, double eps, double M, double alpha, double e_max) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("theorem_constants: eps in (0,1)");
  const double E = e_max > 0.0 ? e_max : p.e_max;
  TheoremConstants r;
  r.M = M > 0.0 ? M : std::max(78.0 * E * E, 256.0);
  r.alpha = alpha > 0.0 ? alpha : 1024.0 * r.M * r.M;
  const double base = std::max(c, 1.0) / ((1.0 - eps) * eps * eps) * std::pow(r.M, 9);
  r.c0 = base * std::pow(std::max(1.0, p.beta), 8);
  r.f1 = 32.0 * r.alpha * r.alpha * base * base;
  r.f2 = 16384.0 * base * base;
  r.threshold = 1.0 / (r.f1 * std::max(1.0, std::pow(p.beta, 16)) * p.beta);
  r.decay_rate = theorem_decay_rate(p.t, p.beta);
  return r;
}

// ---------------------------------------------------------------- probes

BoundReport bound_probes(const ModelParams& p, const Cutoff& cut, Shift shift, int det_samples, int det_max_n,
                         unsigned seed) {
  BoundReport rep;
  rep.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  const double M = cut.M, bmax = std::max(1.0, p.beta);
  const int L = p.L, nt = p.n_time, nf = num_fields(p);
  for (int l = cut.N_beta; l <= cut.N_h; ++l) {
    const CovarianceMatrix c = sliced_covariance(p, cut, l, shift);
    ScaleProbe row;
    row.l = l;
    row.support_count = support_count(cut, p.h, p.beta, l);
    row.norm_1_infty = covariance_norm_1_infty(c);
    row.anchored_l1 = anchored_l1(c);
    const bool base = l == cut.N_beta;

    for (int smp = 0; smp < det_samples; ++smp) {
      for (int n = 1; n <= det_max_n; ++n) {
        constexpr int m = 3;
        std::vector<Eigen::VectorXcd> u(n), v(n);
        for (auto* vec : {&u, &v})
          for (auto& x : *vec) {
            x.resize(m);
            for (int i = 0; i < m; ++i) x[i] = cplx(gauss(rng), gauss(rng));
            x.normalize();
          }
        Eigen::MatrixXcd D(n, n);
        std::vector<FieldIndex> X(n), Y(n);
        for (int j = 0; j < n; ++j) {
          X[j] = field_from_index(p, static_cast<int>(rng() % nf));
          Y[j] = field_from_index(p, static_cast<int>(rng() % nf));
        }
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k) D(j, k) = v[k].dot(u[j]) * c(X[j], Y[k]);
        row.determinant_root = std::max(row.determinant_root, std::pow(std::abs(D.determinant()), 1.0 / n));
      }
    }

    for (int s = 0; s < 2; ++s)
      for (int r = 0; r < 3; ++r)
        for (int e = 0; e < 3; ++e) {
          row.tadpole = std::max(row.tadpole, std::abs(c.at(s, r, e, 0, 0, 0)));
          for (int d1 = -(L - 1) / 2; d1 <= L / 2; ++d1)
            for (int d2 = -(L - 1) / 2; d2 <= L / 2; ++d2) {
              const double dist = std::hypot(d1, d2);
              if (dist < 1.0 || dist > L / 2.0) continue;
              for (int dt = -(nt - 1); dt <= nt - 1; ++dt)
                row.position_sup = std::max(row.position_sup, std::abs(c.at(s, r, e, d1, d2, dt)));
            }
        }

    row.support_ratio = row.support_count / std::pow(M, l + 2);
    row.norm_ratio = row.norm_1_infty * std::pow(M, l);
    row.l1_ratio = row.anchored_l1 / (base ? std::pow(M, 9 - cut.N_beta) * std::pow(bmax, 8) : std::pow(M, 8 - l));
    row.det_ratio = row.determinant_root / (base ? std::pow(M, 6) * std::pow(bmax, 3) : std::pow(M, 4));
    row.position_ratio = row.position_sup / std::pow(M, 3 + cut.N_beta - l);
    row.tadpole_ratio = row.tadpole / (std::pow(M, 3) * (std::pow(M, l - cut.N_h) + std::pow(M, cut.N_beta - l)));
    rep.rows.push_back(row);
  }

  double tmin = 1e300, tmax = 0.0, smin = 1e300, smax = 0.0;
  std::vector<double> xs, ys;
  for (const auto& r : rep.rows) {
    rep.fitted_l1 = std::max(rep.fitted_l1, r.l1_ratio);
    rep.fitted_det = std::max(rep.fitted_det, r.det_ratio);
    rep.fitted_norm = std::max(rep.fitted_norm, r.norm_ratio);
    smin = std::min(smin, r.support_ratio);
    smax = std::max(smax, r.support_ratio);
    if ((r.l == cut.N_beta && cut.N_h > cut.N_beta) || r.norm_1_infty == 0.0) continue;  // empty slice
    rep.fitted_position = std::max(rep.fitted_position, r.position_ratio);
    rep.fitted_tadpole = std::max(rep.fitted_tadpole, r.tadpole_ratio);
    tmin = std::min(tmin, r.tadpole_ratio);
    tmax = std::max(tmax, r.tadpole_ratio);
    xs.push_back(r.l);
    ys.push_back(std::log(r.norm_1_infty));
  }
  rep.tadpole_spread = tmax / tmin;
  rep.support_spread = smin > 0.0 ? smax / smin : INFINITY;
  if (xs.size() >= 2) {
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    rep.norm_slope = sxy / sxx / std::log(M);
  }
  return rep;
}

void write_bound_csv(const BoundReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << "l,support_count,norm_1_infty,anchored_l1,determinant_root,position_sup,tadpole,"
         "support_ratio,norm_ratio,l1_ratio,det_ratio,position_ratio,tadpole_ratio,fitted_constant\n";
  for (const auto& x : r.rows)
    out << x.l << ',' << x.support_count << ',' << x.norm_1_infty << ',' << x.anchored_l1 << ',' << x.determinant_root
        << ',' << x.position_sup << ',' << x.tadpole << ',' << x.support_ratio << ',' << x.norm_ratio << ','
        << x.l1_ratio << ',' << x.det_ratio << ',' << x.position_ratio << ',' << x.tadpole_ratio << ','
        << r.fitted_norm << '\n';
}

}  // namespace cuolab
