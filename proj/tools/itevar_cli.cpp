#include <iostream>

#include <CLI11.hpp>

#include "itevar/cli_io.hpp"

int main(int argc, char** argv) {
  using namespace itevar;
  CLI::App app{"Causal forests with conditional ITE variance: simulate, fit, experiment"};
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a dataset from a scenario");
  simulate->add_option("--scenario", sim.scenario, "baseline|dependent|lognormal|nonlinear|confounder|randomized")
      ->capture_default_str();
  simulate->add_option("--n", sim.n, "Number of rows")->required();
  simulate->add_option("--rho", sim.rho, "corr(U1, X0)")->capture_default_str();
  simulate->add_option("--kappa", sim.kappa, "corr(N_Y, U1); dependent scenario only");
  simulate->add_flag("--strong", sim.strong, "Strong confounding; confounder scenario only");
  simulate->add_option("--seed", sim.seed, "Dataset seed")->required();
  simulate->add_option("--out", sim.out, "Output CSV path")->required();
  simulate->add_flag("--oracle", sim.oracle, "Append hidden y0,y1,ite columns");

  FitOptions fit;
  auto* fitc = app.add_subcommand("fit", "Fit an estimator on a dataset CSV");
  fitc->add_option("--input", fit.input, "Dataset CSV")->required();
  fitc->add_option("--estimator", fit.estimator, "crf|extended|crf_no_orth")->capture_default_str();
  fitc->add_option("--trees", fit.trees, "Trees per forest")->capture_default_str();
  fitc->add_option("--seed", fit.seed, "Forest seed")->required();
  fitc->add_option("--out", fit.out, "Output directory")->required();
  fitc->add_flag("--paper-literal-denominator", fit.paper_literal_denominator,
                 "Use sum w*A~ instead of sum w*A~^2 in the CATE ratio");
  fitc->add_option("--min-node-size", fit.min_node_size, "Minimum node size")->capture_default_str();
  fitc->add_option("--threads", fit.threads, "Worker threads (0 = all)")->capture_default_str();
  fitc->add_option("--save-forest", fit.save_forest, "Also write the fitted forest as JSON");

  ExperimentOptions exp;
  auto* experiment = app.add_subcommand("experiment", "Run a Monte Carlo experiment spec");
  experiment->add_option("--config", exp.config, "Experiment spec file")->required();
  experiment->add_option("--out", exp.out, "Results directory")->required();
  experiment->add_option("--workers", exp.workers, "Parallel replications (0 = all cores)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (simulate->parsed()) return cmd_simulate(sim, std::cerr);
  if (fitc->parsed()) return cmd_fit(fit, std::cerr);
  return cmd_experiment(exp, std::cerr);
}
