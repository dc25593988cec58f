#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cuolab/harness.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cuolab;

namespace {

ModelParams base(int L, int n_time, double beta = 1.0) {
  ModelParams p;
  p.t = 1.0;
  p.eps_c = {0.2, 0.2};
  p.eps_o = {-0.3, -0.3};
  p.beta = beta;
  p.L = L;
  p.h = n_time / beta;
  return validate_params(p);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string error_of(const std::string& text, const std::string& experiment = "") {
  try {
    parse_config(text, experiment);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config defaults, overlay and validation") {
  for (const auto& name : experiment_names()) {
    const ExperimentConfig c = default_config(name);
    CHECK(c.experiment == name);
    CHECK_FALSE(c.tol.empty());
    CHECK(parse_config("{}", name).experiment == name);
  }
  const std::string unknown = error_of(R"({"experiment": "spectrum"})");
  CHECK(unknown.find("unknown experiment 'spectrum'") != std::string::npos);
  for (const auto& name : experiment_names()) CHECK(unknown.find(name) != std::string::npos);
  CHECK(error_of("{}").find("no experiment") != std::string::npos);
  CHECK(error_of(R"({"experiment": "decay", "modle": {}})").find("unknown key 'modle'") != std::string::npos);
  CHECK(error_of(R"({"experiment": "decay", "sweeps": {"separations": []}})").find("empty") != std::string::npos);
  CHECK(error_of(R"({"experiment": "decay", "tolerances": {"r_squared": 0}})").find("positive") !=
        std::string::npos);
  CHECK(error_of(R"({"experiment": "decay", "tolerances": {"contour": 1}})").find("unknown tolerance") !=
        std::string::npos);
  CHECK(error_of(R"({"experiment": "decay", "model": {"beta_h": 3}})").find("integer") != std::string::npos);
  CHECK(error_of(R"({"experiment": "decay"})", "flow-probe").find("requested") != std::string::npos);
  CHECK(error_of("{not json").find("config") != std::string::npos);

  const ExperimentConfig c = parse_config(R"({
    "experiment": "contour-check",
    "model": {"beta": 0.5, "beta_h": 4, "U_c": [0.1, 0.2], "L": 4},
    "external": {"Y1": {"orb": 2, "x": [1, 3], "spin": "down"}},
    "sweeps": {"contour_n": [1]},
    "tolerances": {"contour": 1e-7},
    "seed": 9
  })");
  CHECK(c.params.beta == 0.5);
  CHECK(c.params.n_time == 4);
  CHECK(c.params.h == 8.0);
  CHECK(c.params.L == 4);
  CHECK(c.params.U_c == cplx(0.1, 0.2));
  CHECK(c.ext.Y1 == Mode{2, 1, 3, Spin::Down});
  CHECK(c.ext.X1 == default_config("contour-check").ext.X1);
  CHECK(c.contour_n == std::vector<int>{1});
  CHECK(c.tolerance("contour") == 1e-7);
  CHECK(c.seed == 9u);
  CHECK_THROWS_AS(c.tolerance("nope"), std::invalid_argument);

  // the hash follows the effective configuration, not the text
  const ExperimentConfig a = parse_config(R"({"experiment": "decay"})");
  const ExperimentConfig b = parse_config(R"({"seed": 1, "experiment": "decay"})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(parse_config(R"({"experiment": "decay", "seed": 2})")));
  ExperimentConfig moved = a;
  moved.out_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(a));
  // the effective config round-trips
  CHECK(config_hash(parse_config(config_json(c))) == config_hash(c));
}

TEST_CASE("report bookkeeping") {
  Report r;
  r.name = "x";
  CHECK(r.require_le("a", 1.0, 2.0));
  CHECK(r.pass);
  CHECK_FALSE(r.require_le("b", std::nan(""), 2.0));
  CHECK_FALSE(r.pass);
  Report top;
  top.name = "top";
  top.merge(r);
  CHECK_FALSE(top.pass);
  CHECK(top.metrics.front().first == "x.a");
  CHECK(top.metrics.size() == 4);
  CHECK(fmt(0.1) == "0.10000000000000001");
}

TEST_CASE("free four-point against the Fock oracle") {
  const ModelParams p = base(1, 2);
  const std::vector<ExternalIndices> exts{
      decay_indices(DecayFlavor::Single, 1, 0),
      decay_indices(DecayFlavor::Pair, 0, 0),
      {{0, 0, 0, Spin::Up}, {1, 0, 0, Spin::Down}, {2, 0, 0, Spin::Up}, {0, 0, 0, Spin::Down}},
      {{0, 0, 0, Spin::Up}, {1, 0, 0, Spin::Up}, {1, 0, 0, Spin::Up}, {2, 0, 0, Spin::Up}},
  };
  for (const auto& e : exts) CHECK(std::abs(free_four_point_hc(p, e) - four_point_hc(p, e)) < 1e-12);
  // equal-time entries with a displacement
  const ModelParams q = base(2, 2);
  FreeTwoPointOracle o(q);
  for (int rho = 0; rho < 3; ++rho)
    for (int eta = 0; eta < 3; ++eta) {
      const Mode X{rho, 1, 0, Spin::Up}, Y{eta, 0, 1, Spin::Up};
      CHECK(std::abs(time_ordered_entry(q, rho, eta, Spin::Up, 1, -1, 0.0) - o(X, 0.0, Y, 0.0)) < 1e-12);
    }
}

TEST_CASE("decay measurement") {
  const ModelParams p = base(24, 2);
  const std::vector<int> seps{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  const DecayFitResult s = decay_measurement(p, DecayFlavor::Single, seps);
  CHECK(s.separations[2] == 3.0);
  CHECK(s.theorem_rate == doctest::Approx(std::log(2.0) / (8.0 * std::exp(1.0))));
  CHECK(s.pass);
  CHECK(s.r_squared >= 0.99);
  int used = 0;
  for (size_t i = 0; i < s.values.size(); ++i) {
    CHECK(s.used[i] == (s.values[i] > 1e-14));
    used += s.used[i];
  }
  CHECK(used >= 4);
  const DecayFitResult pr = decay_measurement(p, DecayFlavor::Pair, seps);
  CHECK(pr.separations[2] == 6.0);
  const DecayFitResult sp = decay_measurement(p, DecayFlavor::Spin, seps);
  CHECK(sp.separations[2] == 6.0);
  // same magnitudes: both are |G(d)|^2 up to the spin label
  for (size_t i = 0; i < 3; ++i) CHECK(sp.values[i] == doctest::Approx(pr.values[i]).epsilon(1e-10));

  // beta = 0.25: the pair correlator drops below 1e-14 after two steps
  ModelParams hot = p;
  hot.beta = 0.25;
  hot = with_slices(hot, 2);
  CHECK(theorem_decay_rate(1.0, 0.25) > theorem_decay_rate(1.0, 1.0));
  CHECK_THROWS_WITH_AS(decay_measurement(hot, DecayFlavor::Pair, seps), doctest::Contains("refusing"),
                       std::runtime_error);
  CHECK(decay_measurement(hot, DecayFlavor::Single, seps).pass);
  CHECK_THROWS_AS(decay_measurement(p, DecayFlavor::Single, {1, 12}), std::invalid_argument);
  CHECK_THROWS_AS(parse_flavor("d-wave"), std::invalid_argument);

  const Report r = decay_experiment(hot, DecayFlavor::Pair, {0.25}, seps, 0.99);
  CHECK_FALSE(r.pass);
  CHECK(r.notes.back().find("refusing") != std::string::npos);
}

TEST_CASE("contour identity on a small lattice") {
  ModelParams p = base(4, 2);
  p.U_c = 0.5;
  p.U_o = 0.5;
  const ExternalIndices e{{0, 0, 0, Spin::Up}, {0, 0, 0, Spin::Down}, {0, 1, 0, Spin::Up}, {0, 1, 0, Spin::Down}};
  const auto rs = contour_check(p, e, 1, {0, 1});
  REQUIRE(rs.size() == 2);
  for (const auto& r : rs) {
    CHECK(r.converged);
    CHECK(std::abs(r.lhs) > 1e-8);
    CHECK(r.diff < 1e-9);
  }
  // first order in U: the order-1 column scales linearly with the couplings
  ModelParams q = p;
  q.U_c = 1.0;
  q.U_o = 1.0;
  const auto rq = contour_check(q, e, 1, {1});
  CHECK(std::abs(rq[0].lhs - 2.0 * rs[1].lhs) < 1e-12 * std::abs(rq[0].lhs));
  // zero phase: the left side vanishes and so must the right
  const ExternalIndices z{{0, 0, 0, Spin::Up}, {1, 0, 0, Spin::Down}, {2, 0, 0, Spin::Up}, {0, 0, 0, Spin::Down}};
  for (const auto& r : contour_check(p, z, 1, {0})) {
    CHECK(r.lhs == 0.0);
    CHECK(std::abs(r.rhs) < 1e-9);
  }
  CHECK_THROWS_AS(contour_check(p, e, 1, {0}, 1, 0.5), std::domain_error);
}

TEST_CASE("thermodynamic limit study") {
  const ModelParams p = base(4, 2);
  const ThermoReport t = thermo_limit_study(p, {4, 8, 16});
  REQUIRE(t.rows.size() == 3);
  REQUIRE(t.cauchy_cov.size() == 2);
  CHECK(t.cauchy_cov[1] < t.cauchy_cov[0]);
  CHECK(t.cauchy_four[1] < t.cauchy_four[0]);
  CHECK(t.deviation_cov < 1e-3);
  CHECK(t.deviation_four < 1e-3);
  CHECK(std::abs(t.four_point_inf) > 1e-3);
  // distinct lattices give distinct values
  const ThermoReport small = thermo_limit_study(p, {1, 2});
  CHECK(std::abs(small.rows[0].four_point - small.rows[1].four_point) > 1e-6);
}

TEST_CASE("run writes reproducible artifacts") {
  const auto dir = std::filesystem::temp_directory_path() / "cuolab_harness_test";
  std::filesystem::remove_all(dir);
  ExperimentConfig c = parse_config(R"({"experiment": "decay", "sweeps": {"beta": [1.0]}})");
  c.out_dir = dir.string();
  const Report r = run(c, 1);
  CHECK(r.pass);
  const auto sub = dir / "decay";
  const auto summary = nlohmann::json::parse(slurp(sub / "summary.json"));
  CHECK(summary["experiment"] == "decay");
  CHECK(summary["pass"] == true);
  CHECK(summary["config_hash"] == config_hash(c));
  CHECK(summary["metrics"].contains("decay_single.beta_1.fitted_rate"));
  const std::string csv1 = slurp(sub / "decay_single.csv");
  CHECK(csv1.rfind("beta,distance,abs_value,used\n", 0) == 0);
  CHECK(std::filesystem::exists(sub / "summary.txt"));
  CHECK(std::filesystem::exists(sub / "config.json"));
  run(c, 1);
  CHECK(slurp(sub / "decay_single.csv") == csv1);
  // unknown experiment names are rejected before anything runs
  c.experiment = "nope";
  CHECK_THROWS_WITH_AS(run(c, 1), doctest::Contains("valid experiments"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("oracle and slicing checks on small instances") {
  const Report o = covariance_oracle_check(base(1, 2), {1, 2}, {2}, 1e-9, 1e-12);
  CHECK(o.pass);
  CHECK(o.tables[0].rows.size() == 2);
  const Report s = slicing_check(base(3, 16), 4.0, 0.95, 1e-12, 1e-10);
  CHECK(s.pass);
  CHECK(form_equivalence_check(50, 3, 1e-9).pass);
  CHECK(diagonalization_check(50, 3, 1e-12).pass);
  CHECK(grassmann_identity_check(10, 5, 2, 1e-12).pass);
}
