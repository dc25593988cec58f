#include "cuolab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cuolab {

using std::numbers::pi;

ModelParams validate_params(ModelParams p) {
  if (!(p.beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (p.L < 1) throw std::invalid_argument("L must be >= 1");
  if (!(p.h > 0.0)) throw std::invalid_argument("h must be positive");
  const double half = p.h * p.beta / 2.0;
  const double r = std::round(half);
  if (r < 1.0 || std::abs(half - r) > 1e-9 * std::max(1.0, half))
    throw std::invalid_argument("h*beta/2 must be a positive integer, got " + std::to_string(half));
  for (int s : p.s_hat)
    if (s != 1 && s != -1) throw std::invalid_argument("s_hat values must be +1 or -1");
  p.n_time = static_cast<int>(2 * r);
  p.e_max = 1.0;
  for (int s = 0; s < 2; ++s)
    p.e_max = std::max({p.e_max, std::abs(p.t), std::abs(p.eps_c[s]), std::abs(p.eps_o[s])});
  return p;
}

ModelParams with_slices(ModelParams p, int n_time) {
  p.h = n_time / p.beta;
  return validate_params(p);
}

int num_modes(int L) { return 6 * L * L; }

int mode_index(int L, const Mode& m) {
  return ((m.orb * L + wrap(m.x1, L)) * L + wrap(m.x2, L)) * 2 + spin_index(m.spin);
}

Mode mode_from_index(int L, int i) {
  Mode m;
  m.spin = static_cast<Spin>(i % 2);
  i /= 2;
  m.x2 = i % L;
  i /= L;
  m.x1 = i % L;
  m.orb = i / L;
  return m;
}

int num_fields(const ModelParams& p) { return num_modes(p.L) * p.n_time; }

int field_index(const ModelParams& p, const FieldIndex& X) {
  return mode_index(p.L, X.mode()) * p.n_time + X.time;
}

FieldIndex field_from_index(const ModelParams& p, int i) {
  const Mode m = mode_from_index(p.L, i / p.n_time);
  return {m.orb, m.x1, m.x2, m.spin, i % p.n_time};
}

cplx Momentum::k1() const { return 2.0 * pi * n1 / L + shift1; }
cplx Momentum::k2() const { return 2.0 * pi * n2 / L + shift2; }

bool Momentum::is_pi_pi() const {
  if (shift1 != 0.0 || shift2 != 0.0) return false;
  if (L % 2 != 0) return false;
  return wrap(n1, L) == L / 2 && wrap(n2, L) == L / 2;
}

std::vector<Momentum> momentum_grid(int L) {
  std::vector<Momentum> out;
  out.reserve(static_cast<size_t>(L) * L);
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b) out.push_back({a, b, L, 0.0, 0.0});
  return out;
}

std::vector<double> matsubara_grid(double beta, int n_time) {
  std::vector<double> w;
  w.reserve(n_time);
  for (int m = -n_time / 2; m < n_time / 2; ++m) w.push_back(pi * (2 * m + 1) / beta);
  return w;
}

Eigen::Matrix3cd kinetic_matrix(const ModelParams& p, const Momentum& k, Spin s) {
  const cplx I(0, 1);
  const cplx k1 = k.k1(), k2 = k.k2();
  Eigen::Matrix3cd M = Eigen::Matrix3cd::Zero();
  M(0, 0) = p.eps_c[spin_index(s)];
  M(1, 1) = M(2, 2) = p.eps_o[spin_index(s)];
  M(0, 1) = p.t * (1.0 + std::exp(-I * k1));
  M(0, 2) = p.t * (1.0 + std::exp(-I * k2));
  M(1, 0) = p.t * (1.0 + std::exp(I * k1));
  M(2, 0) = p.t * (1.0 + std::exp(I * k2));
  return M;
}

cplx dispersion_E(double t, cplx k1, cplx k2) {
  return 2.0 * t * t * (2.0 + std::cos(k1) + std::cos(k2));
}

namespace {
bool degenerate_branch(const ModelParams& p, const Momentum& k) { return k.is_pi_pi() || p.t == 0.0; }
}  // namespace

std::array<double, 3> eigenvalues_A(const ModelParams& p, const Momentum& k, Spin s) {
  const double ec = p.eps_c[spin_index(s)], eo = p.eps_o[spin_index(s)];
  if (degenerate_branch(p, k)) return {ec, eo, eo};
  const double k1 = k.k1().real(), k2 = k.k2().real();
  const double root = std::sqrt((ec - eo) * (ec - eo) / (p.t * p.t) +
                                8.0 * ((1.0 + std::cos(k1)) + (1.0 + std::cos(k2))));
  const double mid = 0.5 * (ec + eo);
  // (-1)^rho with rho = 2, 3
  return {eo, mid + 0.5 * p.t * root, mid - 0.5 * p.t * root};
}

Eigen::Matrix3cd unitary_U(const ModelParams& p, const Momentum& k, Spin s) {
  if (degenerate_branch(p, k)) return Eigen::Matrix3cd::Identity();
  const cplx I(0, 1);
  const double eo = p.eps_o[spin_index(s)];
  const auto A = eigenvalues_A(p, k, s);
  const double k1 = k.k1().real(), k2 = k.k2().real();
  const double E = dispersion_E(p.t, k1, k2).real();
  const double sE = std::sqrt(E);
  const double d2 = std::sqrt((A[1] - eo) * (A[1] - eo) + E);
  const double d3 = std::sqrt((A[2] - eo) * (A[2] - eo) + E);
  const cplx p1 = p.t * (1.0 + std::exp(I * k1)), p2 = p.t * (1.0 + std::exp(I * k2));
  Eigen::Matrix3cd U;
  U(0, 0) = 0.0;
  U(0, 1) = (A[1] - eo) / d2;
  U(0, 2) = (A[2] - eo) / d3;
  U(1, 0) = p.t * (1.0 + std::exp(-I * k2)) / sE;
  U(1, 1) = p1 / d2;
  U(1, 2) = p1 / d3;
  U(2, 0) = -p.t * (1.0 + std::exp(-I * k1)) / sE;
  U(2, 1) = p2 / d2;
  U(2, 2) = p2 / d3;
  return U;
}

double f_scale(double t, double beta, double x) {
  const double z = x * pi * pi / (8.0 * std::max(1.0, t * t) * std::max(beta, beta * beta));
  return 0.5 * std::log(z + std::sqrt(z * z + 1.0));
}

}  // namespace cuolab
