#include "cuolab/fock_oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace cuolab {

namespace {

int parity_below(std::uint32_t mask, int mode) {
  return std::popcount(mask & ((1u << mode) - 1u)) & 1;
}

void require_dense_budget(int n_modes) {
  if (n_modes > kMaxDenseModes)
    throw std::length_error("Fock basis too large: " + std::to_string(n_modes) + " modes (limit " +
                            std::to_string(kMaxDenseModes) + ")");
}

using Triplets = std::vector<Eigen::Triplet<cplx>>;

Eigen::SparseMatrix<cplx> from_triplets(int dim, Triplets& tr) {
  Eigen::SparseMatrix<cplx> m(dim, dim);
  m.setFromTriplets(tr.begin(), tr.end());
  m.prune(cplx(0.0));
  return m;
}

// One-body operator sum_{ab} h_ab c_a^dag c_b on the full mask basis.
Eigen::SparseMatrix<cplx> one_body_operator(int n, const Eigen::MatrixXcd& h) {
  const std::uint32_t dim = 1u << n;
  Triplets tr;
  for (std::uint32_t s = 0; s < dim; ++s) {
    for (int b = 0; b < n; ++b) {
      if (!(s >> b & 1u)) continue;
      const std::uint32_t s1 = s ^ (1u << b);
      const int sb = parity_below(s, b);
      for (int a = 0; a < n; ++a) {
        if (h(a, b) == 0.0 || (s1 >> a & 1u)) continue;
        const int sa = parity_below(s1, a);
        const double sign = (sa ^ sb) ? -1.0 : 1.0;
        tr.emplace_back(static_cast<int>(s1 | (1u << a)), static_cast<int>(s), sign * h(a, b));
      }
    }
  }
  return from_triplets(static_cast<int>(dim), tr);
}

// Real-space one-body matrix of H0 over all 6L^2 modes.
Eigen::MatrixXcd one_body_h0(const ModelParams& p) {
  const int L = p.L, n = num_modes(L);
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(n, n);
  for (Spin s : kSpins)
    for (int x1 = 0; x1 < L; ++x1)
      for (int x2 = 0; x2 < L; ++x2) {
        const int cu = mode_index(L, {0, x1, x2, s});
        auto hop = [&](int orb, int y1, int y2) {
          const int o = mode_index(L, {orb, y1, y2, s});
          h(cu, o) += p.t;
          h(o, cu) += p.t;
        };
        hop(1, x1, x2);
        hop(1, x1 - 1, x2);
        hop(2, x1, x2);
        hop(2, x1, x2 - 1);
        h(cu, cu) += p.eps(0, s);
        for (int orb = 1; orb < 3; ++orb) {
          const int o = mode_index(L, {orb, x1, x2, s});
          h(o, o) += p.eps(orb, s);
        }
      }
  return h;
}

}  // namespace

FockBasis::FockBasis(int n_modes) : num_modes(n_modes) {
  if (n_modes > 24) throw std::length_error("FockBasis: too many modes");
  const std::uint32_t dim = 1u << n_modes;
  states.resize(dim);
  for (std::uint32_t s = 0; s < dim; ++s) states[s] = s;
  std::stable_sort(states.begin(), states.end(), [](std::uint32_t a, std::uint32_t b) {
    return std::popcount(a) < std::popcount(b);
  });
  position.assign(dim, 0);
  sector_begin.assign(n_modes + 2, 0);
  for (std::uint32_t i = 0; i < dim; ++i) {
    position[states[i]] = static_cast<int>(i);
    sector_begin[std::popcount(states[i]) + 1]++;
  }
  for (int k = 1; k <= n_modes + 1; ++k) sector_begin[k] += sector_begin[k - 1];
}

Eigen::SparseMatrix<cplx> annihilator(int n_modes, int mode) {
  const std::uint32_t dim = 1u << n_modes;
  Triplets tr;
  for (std::uint32_t s = 0; s < dim; ++s)
    if (s >> mode & 1u)
      tr.emplace_back(static_cast<int>(s ^ (1u << mode)), static_cast<int>(s),
                      parity_below(s, mode) ? -1.0 : 1.0);
  return from_triplets(static_cast<int>(dim), tr);
}

Eigen::SparseMatrix<cplx> creator(int n_modes, int mode) {
  return Eigen::SparseMatrix<cplx>(annihilator(n_modes, mode).adjoint());
}

ManyBodyOperator build_h0(const ModelParams& p) {
  const int n = num_modes(p.L);
  require_dense_budget(n);
  return {one_body_operator(n, one_body_h0(p)), "H0"};
}

ManyBodyOperator build_v(const ModelParams& p) {
  const int L = p.L, n = num_modes(L);
  require_dense_budget(n);
  const std::uint32_t dim = 1u << n;
  Triplets tr;
  for (std::uint32_t s = 0; s < dim; ++s) {
    cplx v = 0.0;
    for (int orb = 0; orb < 3; ++orb)
      for (int x1 = 0; x1 < L; ++x1)
        for (int x2 = 0; x2 < L; ++x2) {
          const int up = mode_index(L, {orb, x1, x2, Spin::Up});
          const int dn = mode_index(L, {orb, x1, x2, Spin::Down});
          if ((s >> up & 1u) && (s >> dn & 1u)) v += p.coupling(orb);
        }
    if (v != 0.0) tr.emplace_back(static_cast<int>(s), static_cast<int>(s), v);
  }
  return {from_triplets(static_cast<int>(dim), tr), "V"};
}

ManyBodyOperator build_quartic(const ModelParams& p, const ExternalIndices& e) {
  const int n = num_modes(p.L);
  require_dense_budget(n);
  auto c = [&](const Mode& m) { return annihilator(n, mode_index(p.L, m)); };
  auto cd = [&](const Mode& m) { return creator(n, mode_index(p.L, m)); };
  Eigen::SparseMatrix<cplx> q = cd(e.X1) * cd(e.X2) * c(e.Y2) * c(e.Y1);
  q.prune(cplx(0.0));
  return {q, "quartic"};
}

ManyBodyOperator build_h_lambda(const ModelParams& p, const ExternalIndices& ext, double lambda) {
  ManyBodyOperator h0 = build_h0(p), v = build_v(p), q = build_quartic(p, ext);
  Eigen::SparseMatrix<cplx> qh = q.mat.adjoint();
  Eigen::SparseMatrix<cplx> h = h0.mat + v.mat + lambda * (q.mat + qh);
  return {h, "H_lambda"};
}

namespace {

struct Spectrum {
  Eigen::VectorXd weights;
  Eigen::MatrixXcd vectors;
};

Spectrum thermal_spectrum(double beta, const Eigen::SparseMatrix<cplx>& H) {
  Eigen::MatrixXcd dense(H);
  if ((dense - dense.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("thermal trace requires a Hermitian Hamiltonian");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(dense);
  const Eigen::VectorXd& e = es.eigenvalues();
  Eigen::VectorXd w = (-beta * (e.array() - e.minCoeff())).exp();
  w /= w.sum();
  return {w, es.eigenvectors()};
}

cplx spectral_expectation(const Spectrum& sp, const Eigen::SparseMatrix<cplx>& O) {
  Eigen::MatrixXcd OV = O * sp.vectors;
  cplx acc = 0.0;
  for (int m = 0; m < sp.vectors.cols(); ++m) acc += sp.weights(m) * sp.vectors.col(m).dot(OV.col(m));
  return acc;
}

}  // namespace

cplx thermal_expectation(const ModelParams& p, const ManyBodyOperator& H, const ManyBodyOperator& O) {
  return spectral_expectation(thermal_spectrum(p.beta, H.mat), O.mat);
}

InteractingOracle::InteractingOracle(const ModelParams& p) : p_(p), h0_(build_h0(p)), v_(build_v(p)) {
  if (p.U_c.imag() != 0.0 || p.U_o.imag() != 0.0)
    throw std::invalid_argument("interacting oracle requires real couplings");
  auto sp = thermal_spectrum(p.beta, h0_.mat + v_.mat);
  weights_ = std::move(sp.weights);
  vectors_ = std::move(sp.vectors);
}

cplx InteractingOracle::expectation(const ManyBodyOperator& O) const {
  return spectral_expectation({weights_, vectors_}, O.mat);
}

double InteractingOracle::four_point_hc(const ExternalIndices& ext) const {
  ManyBodyOperator q = build_quartic(p_, ext);
  Eigen::SparseMatrix<cplx> herm = q.mat + Eigen::SparseMatrix<cplx>(q.mat.adjoint());
  return expectation({herm, "quartic+hc"}).real();
}

double four_point_hc(const ModelParams& p, const ExternalIndices& ext) {
  return InteractingOracle(p).four_point_hc(ext);
}

// ---------------------------------------------------------------------------

FreeTwoPointOracle::FreeTwoPointOracle(const ModelParams& p)
    : p_(p), n_(3 * p.L * p.L), basis_(3 * p.L * p.L) {
  const Eigen::MatrixXcd hfull = one_body_h0(p);
  const int L = p.L;
  shared_spin_ = p.eps_c[0] == p.eps_c[1] && p.eps_o[0] == p.eps_o[1];
  for (Spin s : kSpins) {
    if (s == Spin::Down && shared_spin_) break;
    Eigen::MatrixXd h(n_, n_);
    for (int a = 0; a < n_; ++a)
      for (int b = 0; b < n_; ++b) {
        const Mode ma{a / (L * L), (a / L) % L, a % L, s}, mb{b / (L * L), (b / L) % L, b % L, s};
        h(a, b) = hfull(mode_index(L, ma), mode_index(L, mb)).real();
      }
    SpinData& sd = spin_[spin_index(s)];
    sd.blocks.resize(n_ + 1);
    double emin = 0.0;
    for (int N = 0; N <= n_; ++N) {
      const int off = basis_.sector_begin[N], dim = basis_.sector_dim(N);
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
      for (int i = 0; i < dim; ++i) {
        const std::uint32_t st = basis_.states[off + i];
        for (int b = 0; b < n_; ++b) {
          if (!(st >> b & 1u)) continue;
          const std::uint32_t s1 = st ^ (1u << b);
          const int sb = parity_below(st, b);
          for (int a = 0; a < n_; ++a) {
            if (h(a, b) == 0.0 || (s1 >> a & 1u)) continue;
            const int j = basis_.position[s1 | (1u << a)] - off;
            H(j, i) += ((parity_below(s1, a) ^ sb) ? -1.0 : 1.0) * h(a, b);
          }
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      sd.blocks[N] = {es.eigenvalues(), es.eigenvectors()};
      emin = std::min(emin, es.eigenvalues().minCoeff());
    }
    sd.e_shift = emin;
    double z = 0.0;
    for (const auto& blk : sd.blocks) z += (-p.beta * (blk.energies.array() - emin)).exp().sum();
    sd.log_z = std::log(z);
  }
}

std::vector<std::vector<std::vector<double>>> FreeTwoPointOracle::table(
    Spin s, const std::vector<double>& diffs, const std::vector<int>& a_modes) const {
  const SpinData& sd = spin_[shared_spin_ ? 0 : spin_index(s)];
  const double beta = p_.beta;
  const int nd = static_cast<int>(diffs.size());
  std::vector<std::vector<std::vector<double>>> out(
      a_modes.size(), std::vector<std::vector<double>>(n_, std::vector<double>(nd, 0.0)));

  for (int N = 1; N <= n_; ++N) {
    const int offN = basis_.sector_begin[N], dN = basis_.sector_dim(N);
    const int offM = basis_.sector_begin[N - 1], dM = basis_.sector_dim(N - 1);
    const Block& bN = sd.blocks[N];
    const Block& bM = sd.blocks[N - 1];
    const long len = static_cast<long>(dN) * dM;

    // Columns: vec(<m|c_b^dag|n>) for every mode b, m in sector N, n in sector N-1.
    Eigen::MatrixXd stacked(len, n_);
    Eigen::MatrixXd R(dN, dM);
    for (int b = 0; b < n_; ++b) {
      R.setZero();
      for (int i = 0; i < dN; ++i) {
        const std::uint32_t st = basis_.states[offN + i];
        if (!(st >> b & 1u)) continue;
        const int j = basis_.position[st ^ (1u << b)] - offM;
        R.row(i) = (parity_below(st, b) ? -1.0 : 1.0) * bM.vectors.row(j);
      }
      Eigen::Map<Eigen::MatrixXd>(stacked.col(b).data(), dN, dM).noalias() = bN.vectors.transpose() * R;
    }

    const Eigen::ArrayXd eN = bN.energies.array() - sd.e_shift;
    const Eigen::ArrayXd eM = bM.energies.array() - sd.e_shift;
    Eigen::MatrixXd W(len, nd);
    for (size_t ia = 0; ia < a_modes.size(); ++ia) {
      Eigen::Map<const Eigen::MatrixXd> Aa(stacked.col(a_modes[ia]).data(), dN, dM);
      for (int j = 0; j < nd; ++j) {
        const double d = diffs[j];
        Eigen::ArrayXd u, v;
        double sign = 1.0;
        if (d >= 0.0) {
          u = (-(beta - d) * eN - sd.log_z).exp();
          v = (-d * eM).exp();
        } else {
          u = (d * eN).exp();
          v = (-(beta + d) * eM - sd.log_z).exp();
          sign = -1.0;
        }
        Eigen::Map<Eigen::MatrixXd>(W.col(j).data(), dN, dM) =
            sign * (u.matrix().asDiagonal() * Aa * v.matrix().asDiagonal());
      }
      Eigen::MatrixXd res = stacked.transpose() * W;  // n_ x nd
      for (int b = 0; b < n_; ++b)
        for (int j = 0; j < nd; ++j) out[ia][b][j] += res(b, j);
    }
  }
  return out;
}

cplx FreeTwoPointOracle::operator()(const Mode& X, double s, const Mode& Y, double u) const {
  if (X.spin != Y.spin) return 0.0;
  const int a = local_mode(p_.L, X), b = local_mode(p_.L, Y);
  return table(X.spin, {s - u}, {a})[0][b][0];
}

cplx time_ordered_two_point(const ModelParams& p, const Mode& X, double s, const Mode& Y, double u) {
  if (X.spin != Y.spin) return 0.0;
  return FreeTwoPointOracle(p)(X, s, Y, u);
}

cplx time_ordered_two_point(const ModelParams& p, const FieldIndex& X, const FieldIndex& Y) {
  return time_ordered_two_point(p, X.mode(), X.time / p.h, Y.mode(), Y.time / p.h);
}

// ---------------------------------------------------------------------------

std::vector<FourPointTerm> pairing_terms(PairingFlavor flavor, int L, int rho, int x1, int x2, int eta,
                                         int y1, int y2) {
  struct Shift {
    int d1, d2;
    double c;
  };
  std::vector<Shift> shifts;
  switch (flavor) {
    case PairingFlavor::S:
      shifts = {{0, 0, 1.0}};
      break;
    case PairingFlavor::SStar:
      shifts = {{1, 0, 0.5}, {-1, 0, 0.5}, {0, 1, 0.5}, {0, -1, 0.5}};
      break;
    case PairingFlavor::D:
      shifts = {{1, 0, 0.5}, {-1, 0, 0.5}, {0, 1, -0.5}, {0, -1, -0.5}};
      break;
  }
  std::vector<FourPointTerm> out;
  for (const auto& a : shifts)
    for (const auto& b : shifts) {
      ExternalIndices e;
      e.X1 = {rho, wrap(x1, L), wrap(x2, L), Spin::Up};
      e.X2 = {rho, wrap(x1 + a.d1, L), wrap(x2 + a.d2, L), Spin::Down};
      e.Y2 = {eta, wrap(y1 + b.d1, L), wrap(y2 + b.d2, L), Spin::Down};
      e.Y1 = {eta, wrap(y1, L), wrap(y2, L), Spin::Up};
      out.push_back({a.c * b.c, e});
    }
  return out;
}

double pairing_correlation(const ModelParams& p, PairingFlavor flavor, int rho, int x1, int x2, int eta,
                           int y1, int y2) {
  InteractingOracle oracle(p);
  double acc = 0.0;
  for (const auto& term : pairing_terms(flavor, p.L, rho, x1, x2, eta, y1, y2))
    acc += term.coeff * oracle.four_point_hc(term.ext);
  return acc;
}

double spin_spin_correlation(const ModelParams& p, int rho, int x1, int x2, int eta, int y1, int y2) {
  const int n = num_modes(p.L);
  require_dense_budget(n);
  auto op = [&](int orb, int a1, int a2, Spin s) { return mode_index(p.L, {orb, a1, a2, s}); };
  auto splus = [&](int orb, int a1, int a2) -> Eigen::SparseMatrix<cplx> {
    return creator(n, op(orb, a1, a2, Spin::Up)) * annihilator(n, op(orb, a1, a2, Spin::Down));
  };
  Eigen::SparseMatrix<cplx> spx = splus(rho, x1, x2), spy = splus(eta, y1, y2);
  Eigen::SparseMatrix<cplx> smx = spx.adjoint(), smy = spy.adjoint();
  // S^x S^x + S^y S^y = (S+ S- + S- S+) / 2
  Eigen::SparseMatrix<cplx> O = 0.5 * (spx * smy + smx * spy);
  InteractingOracle oracle(p);
  return oracle.expectation({O, "spin-spin"}).real();
}

}  // namespace cuolab
