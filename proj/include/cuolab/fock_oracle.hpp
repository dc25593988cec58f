#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "cuolab/model.hpp"

namespace cuolab {

// Occupation bitmask basis over `num_modes` modes, grouped by particle number.
struct FockBasis {
  int num_modes = 0;
  std::vector<std::uint32_t> states;      // sorted by (particle number, mask)
  std::vector<int> sector_begin;          // sector N occupies [sector_begin[N], sector_begin[N+1])
  std::vector<int> position;              // mask -> index in `states`

  explicit FockBasis(int n_modes);
  int dim() const { return static_cast<int>(states.size()); }
  int sector_dim(int n) const { return sector_begin[n + 1] - sector_begin[n]; }
};

struct ManyBodyOperator {
  Eigen::SparseMatrix<cplx> mat;  // in the natural mask order 0..2^n-1
  std::string tag;
};

// Fock-space budget for full (unblocked) operators.
inline constexpr int kMaxDenseModes = 12;

Eigen::SparseMatrix<cplx> annihilator(int n_modes, int mode);
Eigen::SparseMatrix<cplx> creator(int n_modes, int mode);

ManyBodyOperator build_h0(const ModelParams& p);
ManyBodyOperator build_v(const ModelParams& p);

struct ExternalIndices {
  Mode X1, X2, Y1, Y2;
};

// psi*_{X1} psi*_{X2} psi_{Y2} psi_{Y1}
ManyBodyOperator build_quartic(const ModelParams& p, const ExternalIndices& ext);
ManyBodyOperator build_h_lambda(const ModelParams& p, const ExternalIndices& ext, double lambda);

cplx thermal_expectation(const ModelParams& p, const ManyBodyOperator& H, const ManyBodyOperator& O);

// Exact free two-point function T(psi*_X(s) psi_Y(u)) under H0, computed per
// spin sector with particle-number blocking. Spin sectors are independent,
// so only the 3L^2 modes of one spin are enumerated.
class FreeTwoPointOracle {
 public:
  explicit FreeTwoPointOracle(const ModelParams& p);

  cplx operator()(const Mode& X, double s, const Mode& Y, double u) const;

  // values[a][b][j] for sector-local modes a, b (orbital-major site index) and
  // time differences d_j = s - u in (-beta, beta).
  std::vector<std::vector<std::vector<double>>> table(Spin s, const std::vector<double>& diffs,
                                                      const std::vector<int>& a_modes) const;

  int modes_per_spin() const { return n_; }
  static int local_mode(int L, const Mode& m) { return (m.orb * L + wrap(m.x1, L)) * L + wrap(m.x2, L); }

 private:
  struct Block {
    Eigen::VectorXd energies;
    Eigen::MatrixXd vectors;
  };
  struct SpinData {
    std::vector<Block> blocks;
    double e_shift = 0.0;
    double log_z = 0.0;
  };
  ModelParams p_;
  int n_ = 0;
  FockBasis basis_;
  std::array<SpinData, 2> spin_;
  bool shared_spin_ = false;  // both spins see the same one-body matrix

};

cplx time_ordered_two_point(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y);
cplx time_ordered_two_point(const ModelParams& p, const Mode& X, double s, const Mode& Y, double u);

// Interacting oracle (full trace; L = 1 in practice).
class InteractingOracle {
 public:
  explicit InteractingOracle(const ModelParams& p);
  cplx expectation(const ManyBodyOperator& O) const;
  double four_point_hc(const ExternalIndices& ext) const;
  const ManyBodyOperator& h0() const { return h0_; }
  const ManyBodyOperator& v() const { return v_; }

 private:
  ModelParams p_;
  ManyBodyOperator h0_, v_;
  Eigen::VectorXd weights_;   // Boltzmann weights / Z
  Eigen::MatrixXcd vectors_;
};

double four_point_hc(const ModelParams& p, const ExternalIndices& ext);

enum class PairingFlavor { S, SStar, D };

// <Delta_a(rho,x)^* Delta_a(eta,y) + h.c.>
double pairing_correlation(const ModelParams& p, PairingFlavor flavor, int rho, int x1, int x2, int eta,
                           int y1, int y2);
// <S^x_x S^x_y + S^y_x S^y_y> computed directly from spin operators.
double spin_spin_correlation(const ModelParams& p, int rho, int x1, int x2, int eta, int y1, int y2);

// Four-point terms that make up a pairing correlation: coefficient and indices.
struct FourPointTerm {
  double coeff;
  ExternalIndices ext;
};
std::vector<FourPointTerm> pairing_terms(PairingFlavor flavor, int L, int rho, int x1, int x2, int eta,
                                         int y1, int y2);

}  // namespace cuolab
