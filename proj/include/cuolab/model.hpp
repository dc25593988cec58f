#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cuolab {

using cplx = std::complex<double>;

enum class Spin : int { Up = 0, Down = 1 };
inline constexpr std::array<Spin, 2> kSpins{Spin::Up, Spin::Down};
inline int spin_index(Spin s) { return static_cast<int>(s); }

// Orbitals are 0-based: 0 = Cu, 1 = O to the right, 2 = O above.
struct ModelParams {
  double t = 1.0;
  std::array<double, 2> eps_c{0.0, 0.0};
  std::array<double, 2> eps_o{0.0, 0.0};
  cplx U_c{0.0};
  cplx U_o{0.0};
  double beta = 1.0;
  int L = 1;
  double h = 2.0;
  cplx lambda_p{0.0};
  cplx lambda_m{0.0};
  std::array<int, 2> s_hat{1, 1};

  // Filled in by validate_params.
  int n_time = 0;  // beta * h
  double e_max = 1.0;

  double eps(int orb, Spin s) const {
    return orb == 0 ? eps_c[spin_index(s)] : eps_o[spin_index(s)];
  }
  cplx coupling(int orb) const { return orb == 0 ? U_c : U_o; }
  int shat(Spin s) const { return s_hat[spin_index(s)]; }
};

ModelParams validate_params(ModelParams p);

// Convenience: same params with beta*h = n_time slices.
ModelParams with_slices(ModelParams p, int n_time);

// A single-particle mode (orbital, site, spin).
struct Mode {
  int orb = 0;
  int x1 = 0;
  int x2 = 0;
  Spin spin = Spin::Up;
  bool operator==(const Mode&) const = default;
};

// A point of I_{L,h}; time is the slice number, tau = time / h.
struct FieldIndex {
  int orb = 0;
  int x1 = 0;
  int x2 = 0;
  Spin spin = Spin::Up;
  int time = 0;
  bool operator==(const FieldIndex&) const = default;
  Mode mode() const { return {orb, x1, x2, spin}; }
};

inline int wrap(int x, int L) { return ((x % L) + L) % L; }

int num_modes(int L);
int mode_index(int L, const Mode& m);
Mode mode_from_index(int L, int i);
int num_fields(const ModelParams& p);
int field_index(const ModelParams& p, const FieldIndex& X);
FieldIndex field_from_index(const ModelParams& p, int i);

// k = 2*pi*n/L + shift; the integer part keeps the (pi,pi) test exact.
struct Momentum {
  int n1 = 0;
  int n2 = 0;
  int L = 1;
  cplx shift1{0.0};
  cplx shift2{0.0};

  cplx k1() const;
  cplx k2() const;
  bool is_pi_pi() const;
  bool is_real() const { return shift1.imag() == 0.0 && shift2.imag() == 0.0; }
  Momentum swapped() const { return {n2, n1, L, shift2, shift1}; }
  Momentum negated() const { return {-n1, -n2, L, -shift1, -shift2}; }
  Momentum shifted(cplx d1, cplx d2) const { return {n1, n2, L, shift1 + d1, shift2 + d2}; }
  static Momentum real(double k1, double k2) { return {0, 0, 1, k1, k2}; }
};

std::vector<Momentum> momentum_grid(int L);
std::vector<double> matsubara_grid(double beta, int n_time);

Eigen::Matrix3cd kinetic_matrix(const ModelParams& p, const Momentum& k, Spin s);
cplx dispersion_E(double t, cplx k1, cplx k2);
inline cplx dispersion_E(double t, const Momentum& k) { return dispersion_E(t, k.k1(), k.k2()); }
std::array<double, 3> eigenvalues_A(const ModelParams& p, const Momentum& k, Spin s);
Eigen::Matrix3cd unitary_U(const ModelParams& p, const Momentum& k, Spin s);

double f_scale(double t, double beta, double x);

}  // namespace cuolab
