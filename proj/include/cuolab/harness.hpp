#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cuolab/expansion.hpp"

namespace cuolab {

// A CSV table; cells are preformatted so reruns are byte-identical.
struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

std::string fmt(double v);
std::string fmt(cplx v);

// Outcome of one check: every pass flag is a comparison against a recorded tolerance.
struct Report {
  std::string name;
  bool pass = true;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::string> notes;
  std::vector<Table> tables;
  void metric(const std::string& key, double v) { metrics.emplace_back(key, v); }
  // Records value and bound, and fails the report unless value <= bound.
  bool require_le(const std::string& key, double value, double bound);
  bool require(const std::string& key, bool ok);
  void merge(const Report& other);
};

struct ExperimentConfig {
  std::string experiment;
  ModelParams params;           // beta in inverse energy; h = beta_h / beta
  double M = 4.0;
  double eps = 0.95;
  double R = 0.0;               // 0: 2 pi n / L + 2 F(8/pi^2)
  ExternalIndices ext{};
  std::string flavor = "single";
  std::vector<int> L_list;
  std::vector<int> beta_h_list;
  std::vector<double> beta_list;
  std::vector<int> separations;
  std::vector<int> contour_n;
  std::vector<int> u_orders;
  std::vector<double> M_list;
  std::map<std::string, double> tol;
  unsigned seed = 1;
  std::string out_dir = "cuolab_out";

  double tolerance(const std::string& key) const;
};

const std::vector<std::string>& experiment_names();
// Defaults reproduce the acceptance settings of each experiment.
ExperimentConfig default_config(const std::string& experiment);
// Overlays the JSON document on the defaults of its "experiment" (or `experiment` if given).
// Unknown keys are errors.
ExperimentConfig parse_config(const std::string& json_text, const std::string& experiment = "");
ExperimentConfig load_config(const std::string& path, const std::string& experiment = "");
std::string config_json(const ExperimentConfig& c);  // effective config, sorted keys
std::string config_hash(const ExperimentConfig& c);  // FNV-1a 64 of config_json without the output block

// Runs the experiment and writes summary.json, summary.txt and one CSV per table
// under out_dir/<experiment>/. Throws on unknown names, listing the valid ones.
Report run(const ExperimentConfig& c, int threads = 1);
Report run_experiment(const ExperimentConfig& c);
void write_artifacts(const ExperimentConfig& c, const Report& r, int threads);

// ---- individual checks ----

Report covariance_oracle_check(const ModelParams& base, const std::vector<int>& L_list,
                               const std::vector<int>& beta_h_list, double tol_full, double tol_time_ordered);
Report form_equivalence_check(int draws, unsigned seed, double tol);
Report diagonalization_check(int draws, unsigned seed, double tol);
Report gram_check(const ModelParams& p, double M, int triples, unsigned seed, double tol);
// Complex shift is 0.5 F_{t,beta}(eps) i.
Report slicing_check(const ModelParams& p, double M, double eps, double tol_unity, double tol_sum);
// Slope of ln ||C_l||_{1,inf} must lie within slope_band of -ln M.
Report norm_scaling_check(const ModelParams& p, double M, double slope_band, double max_spread);
Report grassmann_identity_check(int samples, int laplacian_samples, unsigned seed, double tol);
Report evaluator_triangle_check(const ModelParams& p, const ExternalIndices& ext, double tol);
// Transfer-matrix evaluator against the Fock oracle; every doubling order within 1 +- order_band.
Report h_convergence_check(const ModelParams& p, const ExternalIndices& ext, const std::vector<int>& beta_h_list,
                           double order_band, double rel_tol);
// j_flow against g_flow for each M, then the inductive and Schwinger probes with the smallest
// admissible (M, alpha) and U_c = 1e-3 of the admissible threshold.
Report flow_probe_check(const ModelParams& p, const ExternalIndices& ext, const std::vector<double>& Ms, double tol,
                        double eps);

struct ContourReport {
  int n = 0;
  int u_order = 0;
  cplx lhs{0.0};
  cplx rhs{0.0};
  double diff = 0.0;
  int gl_nodes = 0;
  int trap_nodes = 0;
  bool converged = false;
};
// Both sides of the segment/contour identity for d/dlambda log P at the given U order.
// The covariance shift is along e_{p_dir}.
std::vector<ContourReport> contour_check(const ModelParams& p, const ExternalIndices& ext, int n,
                                         const std::vector<int>& u_orders, int p_dir = 1, double R = 0.0,
                                         double tol = 1e-9);
Report contour_experiment(const ModelParams& p, const ExternalIndices& ext, const std::vector<int>& ns,
                          const std::vector<int>& u_orders, double R, double tol, double quad_tol = 1e-9);

// Decay flavors along the e_1 ray, on orbital `orb`:
//   single: psi*_{0 up} psi*_{0 dn} psi_{0 dn} psi_{d up}, theorem distance d
//   pair:   psi*_{0 up} psi*_{0 dn} psi_{d dn} psi_{d up}, distance 2d
//   spin:   S^+_0 S^-_d with s(up) = -s(dn), distance 2d
enum class DecayFlavor { Single, Pair, Spin };
DecayFlavor parse_flavor(const std::string& s);
std::string flavor_name(DecayFlavor f);

struct DecayFitResult {
  std::vector<double> separations;  // theorem distance |sum (s x - s y)|
  std::vector<double> values;       // |<A + h.c.>|
  std::vector<bool> used;
  double fitted_rate = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double theorem_rate = 0.0;
  bool pass = false;
};
// Free (Wick) equal-time four-point values with the h -> infinity covariance.
// Throws std::runtime_error when fewer than 4 values exceed 1e-14.
DecayFitResult decay_measurement(const ModelParams& p, DecayFlavor flavor, const std::vector<int>& separations,
                                 int orb = 1);
ExternalIndices decay_indices(DecayFlavor flavor, int orb, int d);
// <A + h.c.> at equal time for the free model, A = psi*_{X1} psi*_{X2} psi_{Y2} psi_{Y1}.
double free_four_point_hc(const ModelParams& p, const ExternalIndices& ext);
Report decay_experiment(const ModelParams& p, DecayFlavor flavor, const std::vector<double>& betas,
                        const std::vector<int>& separations, double min_r2);

struct ThermoRow {
  int L = 0;
  cplx covariance{0.0};
  double four_point = 0.0;
};
struct ThermoReport {
  std::vector<ThermoRow> rows;
  cplx covariance_inf{0.0};
  double four_point_inf = 0.0;
  std::vector<double> cauchy_cov;   // |val(L_{i+1}) - val(L_i)|
  std::vector<double> cauchy_four;
  double deviation_cov = 0.0;       // at the largest L
  double deviation_four = 0.0;
};
ThermoReport thermo_limit_study(const ModelParams& p, const std::vector<int>& L_list);
Report thermo_experiment(const ModelParams& p, const std::vector<int>& L_list, double tol);

}  // namespace cuolab
