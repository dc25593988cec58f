#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cuolab/model.hpp"

namespace cuolab {

using Shift = std::array<cplx, 2>;

// Translation-invariant storage of C(X,Y): entries depend on (spin, rho, eta,
// x - y mod L, x_time - y_time). Off-spin blocks are identically zero.
struct CovarianceMatrix {
  int L = 1;
  int n_time = 0;
  double beta = 1.0;
  double h = 1.0;
  Shift shift{};
  std::string tag = "full";
  std::vector<cplx> data;  // [spin][rho][eta][d1][d2][dt + n_time - 1]

  static CovarianceMatrix zeros(const ModelParams& p, Shift shift, std::string tag);

  int time_span() const { return 2 * n_time - 1; }
  size_t offset(int s, int rho, int eta, int d1, int d2, int dt) const {
    return ((((static_cast<size_t>(s) * 3 + rho) * 3 + eta) * L + wrap(d1, L)) * L + wrap(d2, L)) *
               time_span() +
           (dt + n_time - 1);
  }
  cplx at(int s, int rho, int eta, int d1, int d2, int dt) const { return data[offset(s, rho, eta, d1, d2, dt)]; }
  cplx& at(int s, int rho, int eta, int d1, int d2, int dt) { return data[offset(s, rho, eta, d1, d2, dt)]; }

  cplx operator()(const FieldIndex& X, const FieldIndex& Y) const;
  int num_fields() const { return 6 * L * L * n_time; }
  // Dense matrix in field_index order.
  Eigen::MatrixXcd dense() const;
  // Dense matrix restricted to the listed fields.
  Eigen::MatrixXcd dense(const std::vector<FieldIndex>& rows, const std::vector<FieldIndex>& cols) const;

  CovarianceMatrix& operator+=(const CovarianceMatrix& o);
  double max_abs_diff(const CovarianceMatrix& o) const;
};

struct OSeriesValue {
  cplx value{0.0};
  double tail = 0.0;  // bound on the neglected terms
  int terms = 0;
  bool converged = true;
};

// O_j^sigma(k), j = 1..5.
OSeriesValue o_series(const ModelParams& p, int j, Spin s, cplx k1, cplx k2);
std::array<OSeriesValue, 5> o_series_all(const ModelParams& p, Spin s, cplx k1, cplx k2);

struct BMatrixEvaluation {
  Momentum k;
  double omega = 0.0;
  Spin sigma = Spin::Up;
  Eigen::Matrix3cd value;
  double series_truncation_error = 0.0;
  bool denominator_flag = false;  // |D| < 1e-14
  bool series_flag = false;       // an O_j series failed to converge
};

BMatrixEvaluation b_matsubara(const ModelParams& p, const Momentum& k, double omega, Spin s);
Eigen::Matrix3cd b_eigenform(const ModelParams& p, const Momentum& k, double omega, Spin s);
Eigen::Matrix3cd b_infinity(const ModelParams& p, cplx k1, cplx k2, double omega, Spin s);
cplx d_infinity(const ModelParams& p, cplx k1, cplx k2, double omega, Spin s);

enum class SumMethod { Fft, Direct };

struct AssemblyReport {
  int denominator_flags = 0;
  int series_flags = 0;
  double max_truncation_error = 0.0;
};

// (1/(beta L^2)) sum_{k,omega} weight(omega) e^{-i<x-y,k>} e^{i(x-y)omega} B(k + s(sigma) shift, omega)
CovarianceMatrix covariance_weighted(const ModelParams& p, Shift shift, const std::function<double(double)>& weight,
                                     std::string tag, SumMethod method = SumMethod::Fft,
                                     AssemblyReport* report = nullptr);
CovarianceMatrix covariance_full(const ModelParams& p, Shift shift = {}, SumMethod method = SumMethod::Fft,
                                 AssemblyReport* report = nullptr);

// Single entry by direct summation; used where only a handful of entries are needed.
cplx covariance_entry(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y, Shift shift,
                      const std::function<double(double)>& weight = nullptr, bool* flag = nullptr);

// Eigen-decomposed time-ordered form, sampled on the grid.
CovarianceMatrix covariance_time_ordered(const ModelParams& p);
// Same form at continuous time difference d = x - y in (-beta, beta).
Eigen::Matrix3cd time_ordered_kernel(const ModelParams& p, const Momentum& k, Spin s, double d);
cplx time_ordered_entry(const ModelParams& p, int rho, int eta, Spin s, int d1, int d2, double d);

struct QuadratureResult {
  cplx value{0.0};
  double error = 0.0;
  int n = 0;
  bool converged = false;
};

// L -> infinity covariance as a midpoint-rule momentum integral with n and 2n
// points per axis; n is doubled until the two agree to tol (or n_max is hit).
QuadratureResult covariance_infinite_L(const ModelParams& p, int rho, int eta, Spin s, int d1, int d2, double d,
                                       int n = 32, double tol = 1e-12, int n_max = 1024);

struct ContourCheck {
  cplx lhs{0.0};
  cplx rhs{0.0};
  double diff = 0.0;
  int gl_nodes = 0;
  int trap_nodes = 0;
  bool converged = false;
  bool flag = false;
};

struct ContourOptions {
  int n = 1;            // number of contour/segment pairs
  int q = 1;            // direction of the contour shift (1 or 2)
  int p_dir = 1;        // direction of the base shift w e_p
  cplx w{0.0};          // base shift
  double eps = 0.95;    // radius F(eps/2)/n
  int gl_start = 8;
  int trap_start = 16;
  int gl_max = 32;
  int trap_max = 64;
  double tol = 1e-8;
  std::function<double(double)> weight;  // slice cutoff; empty = full covariance
};

// Both sides of the n-fold segment/contour identity for C(X,Y)(w e_p).
ContourCheck contour_shift_identity_check(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y,
                                          const ContourOptions& opt);

// Gauss-Legendre nodes and weights on [a, b].
void gauss_legendre(int n, double a, double b, std::vector<double>& x, std::vector<double>& w);

// Binary: "CUOCOV1\0", int32 L, int32 beta*h, 4 doubles shift, int64 rows, int64 cols,
// then rows*cols complex pairs (row-major, little-endian).
void export_binary(const CovarianceMatrix& c, const std::string& path);
void export_csv(const CovarianceMatrix& c, const std::string& path);

}  // namespace cuolab
