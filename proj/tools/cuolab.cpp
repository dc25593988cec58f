#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cuolab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Run a cuolab experiment and write CSV/JSON artifacts"};
  std::string experiment, config, out;
  int threads = 0;
  std::string names;
  for (const auto& n : cuolab::experiment_names()) names += "\n  " + n;
  app.add_option("experiment", experiment, "experiment name:" + names)->required();
  app.add_option("--config", config, "JSON config; missing keys take the experiment defaults");
  app.add_option("--out", out, "output directory (overrides output.dir)");
  app.add_option("--threads", threads, "worker threads (fallback: CUOLAB_THREADS, then 1)")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  if (threads == 0) {
    if (const char* env = std::getenv("CUOLAB_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        threads = 0;
      }
      if (threads < 1) {
        std::cerr << "cuolab: CUOLAB_THREADS must be a positive integer, got '" << env << "'\n";
        return 2;
      }
    } else {
      threads = 1;
    }
  }

  try {
    cuolab::ExperimentConfig c =
        config.empty() ? cuolab::default_config(experiment) : cuolab::load_config(config, experiment);
    if (!out.empty()) c.out_dir = out;
    const cuolab::Report r = cuolab::run(c, threads);
    std::cout << c.experiment << ": " << (r.pass ? "PASS" : "FAIL") << "  config " << cuolab::config_hash(c)
              << "  -> " << c.out_dir << "/" << c.experiment << "/\n";
    for (const auto& n : r.notes) std::cout << "  " << n << "\n";
    return r.pass ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "cuolab: " << e.what() << "\n";
    return 2;
  }
}
