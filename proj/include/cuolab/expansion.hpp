#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cuolab/covariance.hpp"
#include "cuolab/fock_oracle.hpp"
#include "cuolab/grassmann.hpp"
#include "cuolab/scales.hpp"

namespace cuolab {

// a + b lambda_1 + c lambda_{-1}
struct LambdaLinear {
  cplx c0{0.0};
  cplx lp{0.0};
  cplx lm{0.0};
  LambdaLinear& operator+=(const LambdaLinear& o) {
    c0 += o.c0;
    lp += o.lp;
    lm += o.lm;
    return *this;
  }
  LambdaLinear operator-() const { return {-c0, -lp, -lm}; }
  bool is_zero() const { return c0 == 0.0 && lp == 0.0 && lm == 0.0; }
  Jet to_jet(int K = 0) const;
};

// U(X1, X2, Y1, Y2) on spatial modes (mode_index order); only nonzero entries are stored.
struct InteractionKernel {
  int L = 1;
  std::map<std::array<int, 4>, LambdaLinear> entries;
  LambdaLinear operator()(int x1, int x2, int y1, int y2) const;
};

InteractionKernel build_interaction_kernel(const ModelParams& p, const ExternalIndices& ext);

// Space over all of I_{L,h} in field_index order.
SpacePtr full_space(const ModelParams& p, int replicas = 1);

// V = -(1/h) sum_x sum U psibar_{X1 x} psibar_{X2 x} psi_{Y1 x} psi_{Y2 x}, with lambda kept symbolic.
JetPoly build_v(const ModelParams& p, const InteractionKernel& k, const SpacePtr& space, int K = 0);
// Numeric V at lambda = 0.
Poly build_v0(const ModelParams& p, const InteractionKernel& k, const SpacePtr& space);

// P_h(0) and the coefficients of lambda_1, lambda_{-1}.
struct PartitionValue {
  cplx P{0.0};
  cplx dP_plus{0.0};
  cplx dP_minus{0.0};
  double tail_bound = 0.0;  // certified bound on the omitted orders (series only)
  long long terms = 0;      // vertex subsets or HS configurations visited
  std::string evaluator;
  cplx dP() const { return dP_plus + dP_minus; }
};

struct EngineLimits {
  int max_fields = 12;  // 6 L^2 beta h
};
PartitionValue partition_engine(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                                EngineLimits lim = {});

struct SeriesOptions {
  int n_cap = 64;            // largest number of U vertices
  long long max_terms = 50'000'000;
};
// w psibar_{rows[0]} psibar_{rows[1]} psi_{cols[1]} psi_{cols[0]} on field indices, rows and cols increasing;
// P = sum over vertex subsets of prod w det C(rows, cols). Vertices with a U part come first.
struct SeriesVertex {
  int rows[2];
  int cols[2];
  LambdaLinear w;
};
std::vector<SeriesVertex> series_vertices(const ModelParams& p, const ExternalIndices& ext);

PartitionValue partition_series(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                                SeriesOptions opt = {});

enum class HsMode { Determinant, TransferMatrix };
struct HsOptions {
  HsMode mode = HsMode::Determinant;
  int max_aux_fields = 26;
};
// Auxiliary-field evaluator. Determinant mode enumerates all configurations; the
// transfer-matrix mode sums each time slice's configurations inside a Fock-space
// product (L = 1 only) and has no field budget.
PartitionValue partition_hs(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                            HsOptions opt = {});

enum class Evaluator { Engine, Series, Hs, HsTransfer };
std::string evaluator_name(Evaluator e);
PartitionValue evaluate_partition(Evaluator e, const ModelParams& p, const ExternalIndices& ext);

// -(1/beta) dP/dlambda / P at lambda = 0.
double correlation_from_partition(const ModelParams& p, const PartitionValue& v, double* imag_part = nullptr);

struct HSweepPoint {
  int n_time = 0;
  PartitionValue value;
  double correlation = 0.0;
  double imag = 0.0;
};
struct CorrelationResult {
  std::vector<HSweepPoint> sweep;
  double extrapolated = 0.0;
  double order = 0.0;  // empirical convergence order from the last doubling pair
  std::vector<double> orders;
  std::optional<double> reference;
};
// n_times must be successive doublings when more than one is given.
CorrelationResult correlation_from_log_derivative(const ModelParams& p, const ExternalIndices& ext, Evaluator e,
                                                  const std::vector<int>& n_times,
                                                  std::optional<double> reference = std::nullopt);

// ---- multi-scale flow ----

struct FlowInput {
  ModelParams p;
  ExternalIndices ext;
  Cutoff cut;
  Shift shift{};
};

// G^{>=l} for l in [N_beta, N_h + 1]; lambda carried symbolically.
JetPoly g_flow(const FlowInput& in, int l);

struct FlowLevel {
  int l = 0;
  JetPoly J;     // F + T
  JetPoly F;     // free part
  JetPoly T;     // tree part, orders 2..n_max
  std::vector<double> taylor_sizes;  // max |coefficient| of T_n, n = 1..n_max
  double tail_estimate = 0.0;
};
struct ScaleFlow {
  FlowInput input;
  int n_max = 0;
  std::vector<FlowLevel> levels;  // l = N_h + 1 down to N_beta
  const FlowLevel& at(int l) const;
};
ScaleFlow j_flow(const FlowInput& in, int n_max = Jet::kMaxOrder);

// z^n coefficient of every lambda slot, as a jet polynomial of order 0.
JetPoly z_component(const JetPoly& f, int n);

// max over m of the kernel differences, each kernel scaled as extracted (h^{2m}/(m!)^2 coefficient)
double kernel_max_diff(const JetPoly& a, const JetPoly& b, double h);

struct InductiveRow {
  int l = 0;
  double q1 = 0.0;  // M^{-N_beta} alpha c0 sum_b ||J_{b,1}||_{1,inf}
  double q2 = 0.0;  // M^{-N_beta} sum_m alpha^m c0^m M^{(l - N_beta)(m - 2)} sum_b ||J_{b,m}||_{1,inf}
};
struct InductiveReport {
  std::vector<InductiveRow> rows;
  double max_q1 = 0.0;
  double max_q2 = 0.0;
  double seed_bound = 0.0;  // M^{-N_beta} alpha^2 c0^2 (3/2) U_max
  double seed_free_norm = 0.0;  // ||F_2^{>=N_h+1}||_{1,inf}
  bool pass = false;
};
InductiveReport inductive_bound_probe(const ScaleFlow& flow, double alpha, double c0, double M);

struct SchwingerReport {
  double lhs_plus = 0.0;   // (1/beta) |dJ_0^{>=N_beta} / dlambda_1|
  double lhs_minus = 0.0;
  double rhs = 0.0;        // 2^12 c0^2
  bool pass = false;
};
SchwingerReport schwinger_bound_probe(const ScaleFlow& flow, double c0);

// Second Taylor coefficient through the single-parameter interpolation
// (1/2) int_0^1 ds (D12 + D21) e^{D11 + D22 + s(D12 + D21)} J(psi + psi^1) J(psi + psi^2) |_{psi^1 = psi^2 = 0}.
Poly tree_order_two(const Poly& J, const Eigen::MatrixXcd& C);

struct DeterminantSample {
  std::vector<int> m;  // generators per factor
  double value = 0.0;
  double bound = 0.0;
};
struct DeterminantBoundReport {
  std::vector<DeterminantSample> samples;
  double c0 = 0.0;           // Gram constant max ||f|| ||g||
  double fitted_c0 = 0.0;    // max |value|^{2 / sum m}
  bool pass = false;
  unsigned seed = 0;
};
// Samples interpolated contractions with M = convex combinations of rank-one
// 0/1 projections and compares against c0^{sum m / 2}.
DeterminantBoundReport determinant_bound_probe(const ModelParams& p, const Cutoff& cut, int l, Shift shift,
                                               int samples, unsigned seed = 1);

}  // namespace cuolab
