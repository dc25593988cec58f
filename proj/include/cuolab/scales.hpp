#pragma once

#include <map>
#include <string>
#include <vector>

#include "cuolab/covariance.hpp"

namespace cuolab {

// Matsubara scale bookkeeping. When floor(log 2h / log M) < N_beta the range
// collapses to the single scale N_beta (clamped = true).
struct Cutoff {
  double M = 4.0;
  int N_beta = 1;
  int N_h = 1;
  bool clamped = false;

  int num_scales() const { return N_h - N_beta + 1; }
};

Cutoff make_cutoff(double M, double beta, double h);

// phi and its derivatives up to order 4.
double bump_phi(double x, int deriv = 0);
// chi(x) = phi((x - M)/(M^2 - M) + 1), derivatives in x.
double chi(double M, double x, int deriv = 0);
// h|1 - e^{i omega/h}|
double matsubara_radius(double h, double omega);
double chi_l(const Cutoff& cut, double h, double omega, int l);
// (1/beta) #{omega in M_h : chi_l(omega) != 0}
double support_count(const Cutoff& cut, double h, double beta, int l);

CovarianceMatrix sliced_covariance(const ModelParams& p, const Cutoff& cut, int l, Shift shift = {},
                                   AssemblyReport* report = nullptr);

struct SlicedCovarianceSet {
  std::map<int, CovarianceMatrix> slices;
  Shift shift{};
  CovarianceMatrix sum() const;
  // sum over j >= l
  CovarianceMatrix tail(int l) const;
};

SlicedCovarianceSet sliced_covariances(const ModelParams& p, const Cutoff& cut, Shift shift = {});

// Kernel of an m-body term, stored on ordered (increasing) index tuples; the
// full bi-antisymmetric kernel is recovered by signed permutation.
struct SparseKernel {
  int m = 0;
  std::map<std::pair<std::vector<int>, std::vector<int>>, cplx> ordered;
};

// Dense kernel on I^m x I^m over n indices (small n, m only).
struct DenseKernel {
  int m = 0;
  int n = 0;
  std::vector<cplx> data;  // X tuple then Y tuple, base-n digits, first entry most significant

  static DenseKernel zeros(int m, int n);
  size_t offset(const std::vector<int>& X, const std::vector<int>& Y) const;
  cplx& operator()(const std::vector<int>& X, const std::vector<int>& Y) { return data[offset(X, Y)]; }
  cplx operator()(const std::vector<int>& X, const std::vector<int>& Y) const { return data[offset(X, Y)]; }
};

struct KernelNorms {
  double one_norm = 0.0;
  double one_infty_norm = 0.0;
  int m = 0;
};

KernelNorms kernel_norms(const DenseKernel& f, double h);
// Uses the ordered-basis identity; valid for bi-antisymmetric kernels.
KernelNorms kernel_norms(const SparseKernel& f, double h);
DenseKernel to_dense(const SparseKernel& f, int n);
double kernel_norm_1(const DenseKernel& f, double h);
double kernel_norm_1_infty(const DenseKernel& f, double h);

// m = 1 norms of a covariance as a kernel on I_{L,h} x I_{L,h}.
double covariance_norm_1_infty(const CovarianceMatrix& c);
double covariance_norm_1(const CovarianceMatrix& c);
// (1/h) sum_{x in Gamma, x_t in [-beta, beta)_h} |C(rho x sigma x_t, eta 0 sigma 0)|, maximized over rho, eta, sigma.
double anchored_l1(const CovarianceMatrix& c);

// Vectors f_{l,X}, g_{l,X} over {1,2,3} x Gamma* x {up,down} x M_h.
struct GramVectors {
  Eigen::VectorXcd f;
  Eigen::VectorXcd g;
};

class GramBuilder {
 public:
  GramBuilder(const ModelParams& p, const Cutoff& cut, int l, Shift shift);
  GramVectors operator()(const FieldIndex& X) const;
  // <u, v>_H = (1/(beta L^2)) sum u conj(v)
  cplx inner(const Eigen::VectorXcd& u, const Eigen::VectorXcd& v) const;
  double norm(const Eigen::VectorXcd& u) const { return std::sqrt(std::abs(inner(u, u))); }
  size_t dim() const { return dim_; }

 private:
  size_t slot(int eta, int n1, int n2, int s, int m) const;
  ModelParams p_;
  std::vector<double> omegas_;
  std::vector<double> sqrt_chi_;
  std::vector<Eigen::Matrix3cd> b_;  // [s][n1][n2][m]
  size_t dim_;
};

struct TheoremConstants {
  double M = 0.0;
  double alpha = 0.0;
  double c0 = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double threshold = 0.0;   // admissible |U_c|, |U_o|
  double decay_rate = 0.0;  // coefficient of the separation in the exponent
};

// E_max defaults to p.e_max. M and alpha take their smallest admissible values
// max{78 E^2, 2^8} and 2^10 M^2 when passed as 0.
TheoremConstants theorem_constants(const ModelParams& p, double c, double eps, double M = 0.0, double alpha = 0.0,
                                   double e_max = 0.0);
double theorem_decay_rate(double t, double beta);

struct ScaleProbe {
  int l = 0;
  double support_count = 0.0;
  double norm_1_infty = 0.0;
  double anchored_l1 = 0.0;
  double determinant_root = 0.0;  // max_n |det|^{1/n}
  double position_sup = 0.0;
  double tadpole = 0.0;
  // ratios to the bound shapes
  double support_ratio = 0.0;
  double l1_ratio = 0.0;
  double det_ratio = 0.0;
  double position_ratio = 0.0;
  double tadpole_ratio = 0.0;
  double norm_ratio = 0.0;  // ||C_l||_{1,inf} M^l
};

struct BoundReport {
  std::vector<ScaleProbe> rows;
  double fitted_l1 = 0.0;
  double fitted_det = 0.0;
  double fitted_position = 0.0;
  double fitted_tadpole = 0.0;
  double fitted_norm = 0.0;
  double norm_slope = 0.0;  // least-squares slope of ln ||C_l||_{1,inf} over l >= N_beta + 1, in units of ln M
  double tadpole_spread = 0.0;
  double support_spread = 0.0;
  unsigned seed = 0;
};

BoundReport bound_probes(const ModelParams& p, const Cutoff& cut, Shift shift = {}, int det_samples = 20,
                         int det_max_n = 8, unsigned seed = 1);
void write_bound_csv(const BoundReport& r, const std::string& path);

}  // namespace cuolab
