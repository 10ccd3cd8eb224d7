#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "mcbsde/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"BSDEs driven by finite-state Markov chains: solvers, closed forms, and checkers"};
  app.require_subcommand(1);

  const char* subcommands[] = {"validate",       "simulate",        "solve",
                               "solve-hitting",  "linear-solve",    "linear-estimate",
                               "check-comparison", "balanced-check", "counterexample",
                               "essential-range", "evaluate",        "rho",
                               "check-risk-properties", "verify"};

  mcbsde::RunRequest req;
  const char* env_out = std::getenv("MCBSDE_OUT");
  req.out_dir = env_out != nullptr ? env_out : "out";

  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  int paths = 0;
  double step = 0.0;
  double eps = 0.0;

  for (const char* name : subcommands) {
    CLI::App* sub = app.add_subcommand(name, "");
    sub->add_option("--config", config, "scenario config file (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (default: $MCBSDE_OUT or ./out)");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--paths", paths, "path/sample count override");
    sub->add_option("--step", step, "integrator step override");
    sub->add_option("--eps", eps, "comparison epsilon override");
    sub->add_flag("--quiet", req.quiet, "suppress summary output");
  }

  CLI11_PARSE(app, argc, argv);

  CLI::App* sub = app.get_subcommands().front();
  req.subcommand = sub->get_name();
  req.config_path = config;
  if (!out_dir.empty()) req.out_dir = out_dir;
  if (sub->count("--seed") > 0) req.seed = seed;
  if (sub->count("--paths") > 0) req.n_paths = paths;
  if (sub->count("--step") > 0) req.step = step;
  if (sub->count("--eps") > 0) req.eps = eps;

  return mcbsde::run_subcommand(req);
}
