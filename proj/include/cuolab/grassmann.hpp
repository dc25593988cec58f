#pragma once

#include <array>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "cuolab/model.hpp"
#include "cuolab/scales.hpp"

namespace cuolab {

using Mask = unsigned __int128;

inline int popcount(Mask m) {
  return __builtin_popcountll(static_cast<uint64_t>(m)) + __builtin_popcountll(static_cast<uint64_t>(m >> 64));
}
inline int lowest_bit(Mask m) {
  const auto lo = static_cast<uint64_t>(m);
  return lo ? __builtin_ctzll(lo) : 64 + __builtin_ctzll(static_cast<uint64_t>(m >> 64));
}
inline Mask bit(int i) { return static_cast<Mask>(1) << i; }
inline Mask below(int i) { return bit(i) - 1; }

struct MaskHash {
  size_t operator()(Mask m) const {
    const auto lo = static_cast<uint64_t>(m), hi = static_cast<uint64_t>(m >> 64);
    return std::hash<uint64_t>()(lo * 0x9E3779B97F4A7C15ULL ^ (hi + 0x632BE59BD9B4E019ULL));
  }
};

// Generators psibar^r_X, psi^r_X over the listed fields and replicas 0..replicas-1.
// Global order: replica-major, bars before unbars, then field position.
struct GeneratorSpace {
  std::vector<FieldIndex> fields;
  int replicas = 1;
  static constexpr int kMaxGenerators = 128;

  GeneratorSpace(std::vector<FieldIndex> f, int r);
  int n() const { return static_cast<int>(fields.size()); }
  int total() const { return 2 * n() * replicas; }
  int id(int replica, bool bar, int pos) const { return replica * 2 * n() + (bar ? 0 : n()) + pos; }
  int replica_of(int g) const { return g / (2 * n()); }
  bool is_bar(int g) const { return g % (2 * n()) < n(); }
  int pos_of(int g) const { return g % n(); }
  Mask replica_mask(int r) const { return (bit(2 * n()) - 1) << (2 * n() * r); }
  Mask bar_mask(int r) const { return (bit(n()) - 1) << (2 * n() * r); }
  Mask unbar_mask(int r) const { return bar_mask(r) << n(); }
  int position(const FieldIndex& X) const;  // -1 if absent
};
using SpacePtr = std::shared_ptr<const GeneratorSpace>;
SpacePtr make_space(std::vector<FieldIndex> fields, int replicas = 1);

// Parity of #{(a, b) : a in A, b in B, a > b}: the sign of A * B -> sorted(A | B).
inline bool merge_parity(Mask A, Mask B) {
  Mask p = B;
  p ^= p << 1;
  p ^= p << 2;
  p ^= p << 4;
  p ^= p << 8;
  p ^= p << 16;
  p ^= p << 32;
  p ^= p << 64;
  return popcount(A & (p << 1)) & 1;
}

// Coefficient ring C[z]/(z^{K+1}) (x) C[lambda_1, lambda_{-1}]/(degree 2).
class Jet {
 public:
  static constexpr int kMaxOrder = 7;
  Jet() = default;
  Jet(cplx c, int K = 0) : K_(static_cast<uint8_t>(K)) { v_[0] = c; }
  static Jet z(int K) {
    Jet j(0.0, K);
    if (K >= 1) j.v_[1] = 1.0;
    return j;
  }
  static Jet lambda(int a, int K = 0) {  // a = +1 or -1
    Jet j(0.0, K);
    j.at(a == 1 ? 1 : 2, 0) = 1.0;
    return j;
  }
  int order() const { return K_; }
  cplx& at(int lam, int k) { return v_[lam * (kMaxOrder + 1) + k]; }
  cplx at(int lam, int k) const { return v_[lam * (kMaxOrder + 1) + k]; }
  cplx scalar() const { return v_[0]; }
  // coefficient of z^k lambda^0 / of z^k lambda_a
  cplx z_coeff(int k) const { return at(0, k); }
  cplx lambda_coeff(int a, int k = 0) const { return at(a == 1 ? 1 : 2, k); }

  Jet& operator+=(const Jet& o);
  Jet& operator-=(const Jet& o);
  Jet& operator*=(cplx s);
  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator*(Jet a, cplx s) { return a *= s; }
  friend Jet operator*(cplx s, Jet a) { return a *= s; }
  friend Jet operator*(const Jet& a, const Jet& b);
  bool is_zero() const;
  double max_abs() const;

  // lambda-free, z^0 truncated to order K
  Jet truncated(int K) const;

 private:
  uint8_t K_ = 0;
  std::array<cplx, 3 * (kMaxOrder + 1)> v_{};
};

Jet exp(const Jet& a);
Jet log(const Jet& a);
Jet inverse(const Jet& a);

// Even or odd polynomials in the generators of a space, keyed by sorted generator masks.
template <class T>
class GrassmannPoly {
 public:
  using Terms = std::unordered_map<Mask, T, MaskHash>;

  GrassmannPoly() = default;  // no space; assign before use
  explicit GrassmannPoly(SpacePtr s) : space_(std::move(s)) {}
  static GrassmannPoly constant(SpacePtr s, T c);
  static GrassmannPoly generator(SpacePtr s, int replica, bool bar, int pos);
  // Product of generators in the listed order, as ids.
  static GrassmannPoly monomial(SpacePtr s, const std::vector<int>& ids, T c);

  const SpacePtr& space() const { return space_; }
  const Terms& terms() const { return terms_; }
  size_t size() const { return terms_.size(); }
  T constant_term() const;
  T coeff(Mask m) const;
  void add_term(Mask m, const T& c);
  void prune(double tol = 0.0);

  GrassmannPoly& operator+=(const GrassmannPoly& o);
  GrassmannPoly& operator-=(const GrassmannPoly& o);
  GrassmannPoly& operator*=(const T& c);
  friend GrassmannPoly operator+(GrassmannPoly a, const GrassmannPoly& b) { return a += b; }
  friend GrassmannPoly operator-(GrassmannPoly a, const GrassmannPoly& b) { return a -= b; }
  friend GrassmannPoly operator*(GrassmannPoly a, const T& c) { return a *= c; }
  GrassmannPoly operator*(const GrassmannPoly& o) const;

  bool is_even() const;
  double max_abs_diff(const GrassmannPoly& o) const;
  std::string dump() const;

 private:
  void check_space(const GrassmannPoly& o) const;
  SpacePtr space_;
  Terms terms_;
};

using Poly = GrassmannPoly<cplx>;
using JetPoly = GrassmannPoly<Jet>;

template <class T>
GrassmannPoly<T> add(const GrassmannPoly<T>& f, const GrassmannPoly<T>& g) { return f + g; }
template <class T>
GrassmannPoly<T> mul(const GrassmannPoly<T>& f, const GrassmannPoly<T>& g) { return f * g; }
template <class T>
GrassmannPoly<T> scale(const T& c, const GrassmannPoly<T>& f) { return f * c; }

// Integrates out replica r with covariance C on the space's field positions.
template <class T>
GrassmannPoly<T> gaussian_integral(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& C, int r);
template <class T>
GrassmannPoly<T> left_derivative(const GrassmannPoly<T>& f, int generator);
template <class T>
GrassmannPoly<T> exp_poly(const GrassmannPoly<T>& f);
template <class T>
GrassmannPoly<T> log_poly(const GrassmannPoly<T>& f);
// P_m: keeps monomials with m bars and m unbars (all replicas together).
template <class T>
GrassmannPoly<T> project(const GrassmannPoly<T>& f, int m);
// Drops every monomial containing a generator of replica r (evaluation at psi^r = 0).
template <class T>
GrassmannPoly<T> set_zero(const GrassmannPoly<T>& f, int r);
// f(psi^from) -> f(psi^from + psi^to)
template <class T>
GrassmannPoly<T> substitute_shift(const GrassmannPoly<T>& f, int from, int to);

// Delta_{q,r}(Q) = -sum_{X,Y} Q(X,Y) d/dpsibar^q_X d/dpsi^r_Y
template <class T>
GrassmannPoly<T> laplacian(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& Q, int q, int r);
struct LaplacianTerm {
  int q = 0;
  int r = 0;
  cplx weight{1.0};
};
// exp(sum_t weight_t Delta_{q_t, r_t}(Q)) f, series terminated by nilpotency.
template <class T>
GrassmannPoly<T> exp_laplacian(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& Q,
                               const std::vector<LaplacianTerm>& terms);
// int f(psi + psi^0) dmu_C(psi^0) = e^{Delta_{r,r}(C)} f for a single-replica f.
template <class T>
GrassmannPoly<T> convolve(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& C, int r = 0);

// Bi-antisymmetric kernel of the (m, m) part of a single-replica polynomial, with the
// (1/h)^{2m} normalization; positions index the space's fields.
SparseKernel extract_kernel(const Poly& f, int m, double h, int replica = 0);
Poly from_kernel(SpacePtr s, const SparseKernel& k, double h, int replica = 0);
// Same, for one coefficient slot of a jet polynomial.
SparseKernel extract_kernel(const JetPoly& f, int m, double h, int lam, int k, int replica = 0);

// Component of a jet polynomial (lambda slot, z power) as a complex polynomial.
Poly jet_component(const JetPoly& f, int lam, int k);
JetPoly to_jet(const Poly& f, int K = 0);

// Covariance restricted to the space's fields.
Eigen::MatrixXcd restrict_covariance(const CovarianceMatrix& c, const GeneratorSpace& s);

}  // namespace cuolab
