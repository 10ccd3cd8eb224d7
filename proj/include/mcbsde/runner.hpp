#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mcbsde/comparison.hpp"
#include "mcbsde/csv.hpp"
#include "mcbsde/linear.hpp"
#include "mcbsde/risk.hpp"
#include "mcbsde/scenario.hpp"
#include "mcbsde/solver.hpp"
#include "mcbsde/verify.hpp"

namespace mcbsde {

// Exit statuses: 0 success, 1 reported check failed, 2 config error,
// 3 precondition refused (e.g. invertibility).
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitPrecondition = 3;

struct RunRequest {
  std::string subcommand;
  std::filesystem::path config_path;
  std::filesystem::path out_dir = "out";
  bool quiet = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_paths;
  std::optional<double> step;
  std::optional<double> eps;
};

namespace detail {

struct RunContext {
  RunRequest req;
  std::string config_bytes;
  json config;
  Scenario scenario;
  std::vector<std::string> outputs;

  std::uint64_t seed() const {
    if (req.seed) return *req.seed;
    if (scenario.run.seed) return *scenario.run.seed;
    throw ConfigError("this subcommand is stochastic: a seed is required (run.seed or --seed)");
  }
  bool has_seed() const { return req.seed.has_value() || scenario.run.seed.has_value(); }
  int n_paths(int fallback) const {
    if (req.n_paths) return *req.n_paths;
    if (scenario.run.n_paths > 0) return scenario.run.n_paths;
    return fallback;
  }
  double step(double fallback = 0.0) const {
    if (req.step) return *req.step;
    if (scenario.run.step > 0.0) return scenario.run.step;
    return fallback;
  }
  double eps() const {
    double e = req.eps ? *req.eps : scenario.run.eps;
    if (e > 0.0) return e;
    return 0.5 * epsilon_threshold(scenario.model.epsilon_r, scenario.model.num_states);
  }
  double terminal_time() const {
    return scenario.run.t >= 0.0 ? scenario.run.t : scenario.model.horizon;
  }
  std::filesystem::path out_path(const std::string& name) {
    outputs.push_back(name);
    return req.out_dir / name;
  }
  void note(const std::string& line) const {
    if (!req.quiet) std::cout << line << "\n";
  }

  const std::vector<Vec>& require_terminal() const {
    if (scenario.terminal.empty())
      throw ConfigError("this subcommand needs terminal.values in the config");
    return scenario.terminal;
  }

  void write_manifest() {
    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["subcommand"] = req.subcommand;
    manifest["config_hash"] = hex64(fnv1a64(config_bytes));
    manifest["seed"] = has_seed() ? json(seed()) : json(nullptr);
    manifest["version"] = kVersion;
    manifest["outputs"] = outputs;
    std::ofstream out(req.out_dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
  }
};

inline void write_value_grid(RunContext& ctx, const ValueGrid& grid, const std::string& name) {
  CsvWriter csv(ctx.out_path(name), {"t", "state", "component", "value"});
  for (int k = 0; k <= grid.num_steps(); ++k) {
    double t = grid.time_at(k);
    for (int i = 0; i < grid.model.num_states; ++i)
      for (int c = 0; c < grid.dim; ++c)
        csv.row({fmt17(t), std::to_string(i + 1), std::to_string(c + 1),
                 fmt17(grid.at_index(k)(c, i))});
  }
}

inline void write_state_values(RunContext& ctx, const std::vector<Vec>& values,
                               const std::string& name) {
  CsvWriter csv(ctx.out_path(name), {"state", "component", "value"});
  for (std::size_t i = 0; i < values.size(); ++i)
    for (int c = 0; c < static_cast<int>(values[i].size()); ++c)
      csv.row({std::to_string(i + 1), std::to_string(c + 1), fmt17(values[i](c))});
}

inline int run_validate(RunContext& ctx) {
  // parse the chain without the eager validity gate so violations are reported
  RateModel model = parse_chain(ctx.config.at("chain"));
  ValidationReport report = validate_rate_model(model);
  CsvWriter csv(ctx.out_path("validation.csv"), {"ok", "violation", "piece", "row", "col"});
  if (report.ok) {
    csv.row({"1", "", "", "", ""});
  } else {
    for (const Violation& v : report.violations)
      csv.row({"0", v.what, std::to_string(v.piece + 1), std::to_string(v.row + 1),
               std::to_string(v.col + 1)});
  }
  ctx.note(report.ok ? "rate model: ok" : "rate model: " + report.summary());
  return report.ok ? kExitOk : kExitCheckFailed;
}

inline int run_simulate(RunContext& ctx) {
  int n_paths = ctx.n_paths(100);
  std::uint64_t seed = ctx.seed();
  double horizon = ctx.terminal_time();
  CsvWriter csv(ctx.out_path("paths.csv"), {"path", "time", "state"});
  for (int i = 0; i < n_paths; ++i) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(i));
    ChainPath path = simulate_path(ctx.scenario.model, ctx.scenario.initial_state, horizon,
                                   rng.next_u64());
    csv.row({std::to_string(i), fmt17(0.0), std::to_string(path.initial_state + 1)});
    for (const JumpEvent& e : path.events)
      csv.row({std::to_string(i), fmt17(e.time), std::to_string(e.to_state + 1)});
  }
  ctx.note("simulated " + std::to_string(n_paths) + " paths");
  return kExitOk;
}

inline int run_solve(RunContext& ctx, bool hitting) {
  Driver driver = build_driver(ctx.scenario.driver_block, ctx.scenario.model);
  SolveOptions opts;
  opts.step = ctx.step();
  ValueGrid grid = hitting
                       ? solve_hitting_time(ctx.scenario.model, driver, ctx.require_terminal(),
                                            ctx.scenario.absorbing, ctx.terminal_time(), opts)
                       : solve_markovian(ctx.scenario.model, driver, ctx.require_terminal(),
                                         ctx.terminal_time(), opts);
  write_value_grid(ctx, grid, "values.csv");
  std::ostringstream os;
  os << "u(" << grid.t_start << ", state " << ctx.scenario.initial_state + 1 << ") =";
  for (int c = 0; c < grid.dim; ++c)
    os << " " << fmt17(grid.at_index(0)(c, ctx.scenario.initial_state));
  ctx.note(os.str());
  return kExitOk;
}

inline int run_linear_estimate(RunContext& ctx) {
  if (ctx.scenario.driver_block.value("kind", "") != "linear")
    throw ConfigError("linear-estimate needs a driver block of kind 'linear'");
  LinearDriverSpec spec = parse_linear_spec(ctx.scenario.driver_block, ctx.scenario.model);
  int n_paths = ctx.n_paths(10000);
  std::uint64_t seed = ctx.seed();
  McEstimate est = closed_form_estimate(spec, ctx.require_terminal(), ctx.scenario.model,
                                        ctx.scenario.initial_state, ctx.terminal_time(), n_paths,
                                        seed);
  CsvWriter csv(ctx.out_path("estimate.csv"), {"component", "mean", "stderr", "n_paths", "seed"});
  for (int c = 0; c < static_cast<int>(est.mean.size()); ++c)
    csv.row({std::to_string(c + 1), fmt17(est.mean(c)), fmt17(est.std_error(c)),
             std::to_string(est.n_paths), std::to_string(est.seed)});
  std::ostringstream os;
  os << "Y_0 estimate:";
  for (int c = 0; c < static_cast<int>(est.mean.size()); ++c)
    os << " " << fmt17(est.mean(c)) << " (se " << fmt17(est.std_error(c)) << ")";
  ctx.note(os.str());
  return kExitOk;
}

inline ComparisonTheorem parse_theorem(const std::string& tag) {
  if (tag == "4.2") return ComparisonTheorem::scalar_4_2;
  if (tag == "5.1") return ComparisonTheorem::vector_5_1;
  if (tag == "5.3") return ComparisonTheorem::vector_5_3;
  if (tag == "5.7") return ComparisonTheorem::vector_5_7;
  throw ConfigError("run.theorem must be one of 4.2, 5.1, 5.3, 5.7");
}

inline void write_witness_row(CsvWriter& csv, const std::string& what, const AssumptionCheck& check) {
  if (check.holds) {
    csv.row({what, "1", "", "", "", "", "", "", ""});
  } else {
    const FailureWitness& w = *check.witness;
    csv.row({what, "0", fmt17(w.t), std::to_string(w.state + 1), std::to_string(w.j + 1),
             std::to_string(w.k + 1), fmt17(w.lhs), fmt17(w.rhs), w.what});
  }
}

inline int run_check_comparison(RunContext& ctx) {
  const Scenario& sc = ctx.scenario;
  Driver f1 = build_driver(sc.driver_block, sc.model);
  Driver f2 = sc.driver2_block.is_null() ? f1 : build_driver(sc.driver2_block, sc.model);
  if (sc.terminal.empty() || sc.terminal2.empty())
    throw ConfigError("check-comparison needs terminal.values and terminal.values2");
  SolveOptions opts;
  opts.step = ctx.step();
  opts.t_start = sc.run.s;
  ValueGrid sol1 = solve_markovian(sc.model, f1, sc.terminal, ctx.terminal_time(), opts);
  ValueGrid sol2 = solve_markovian(sc.model, f2, sc.terminal2, ctx.terminal_time(), opts);
  ComparisonReport rep =
      check_comparison(parse_theorem(sc.run.theorem), f1, f2, sol1, sol2, ctx.eps());

  CsvWriter csv(ctx.out_path("comparison.csv"),
                {"check", "holds", "t", "state", "j", "k", "lhs", "rhs", "detail"});
  write_witness_row(csv, "terminal_order", rep.terminal_order);
  write_witness_row(csv, "driver_order", rep.driver_order);
  write_witness_row(csv, "jump_condition", rep.jump_condition);
  write_witness_row(csv, "structure", rep.structure);
  AssumptionCheck conc;
  conc.holds = rep.conclusion->ordered && rep.conclusion->strictness_consistent;
  if (!conc.holds && rep.conclusion->witness) conc.witness = rep.conclusion->witness;
  write_witness_row(csv, "conclusion", conc);

  bool ok = rep.assumptions_hold() && conc.holds;
  std::ostringstream os;
  os << "theorem " << theorem_name(rep.theorem) << ": assumptions "
     << (rep.assumptions_hold() ? "hold" : "violated") << ", conclusion "
     << (conc.holds ? "holds" : "violated") << ", min gap " << fmt17(rep.conclusion->min_gap);
  ctx.note(os.str());
  return ok ? kExitOk : kExitCheckFailed;
}

inline int run_balanced_check(RunContext& ctx) {
  const Scenario& sc = ctx.scenario;
  Driver f = build_driver(sc.driver_block, sc.model);
  int n_samples = ctx.n_paths(20);
  std::uint64_t seed = ctx.seed();
  const int n = sc.model.num_states;
  const int k = f.dim;
  // documented family: the config pair first (when present), then random
  // Markovian pairs with entries uniform in [-1, 1]
  TerminalPairSampler sampler = [&](int idx, Rng& rng) {
    if (idx == 0 && !sc.terminal.empty() && !sc.terminal2.empty())
      return std::make_pair(sc.terminal, sc.terminal2);
    std::vector<Vec> g1, g2;
    for (int i = 0; i < n; ++i) {
      Vec a(k), b(k);
      for (int c = 0; c < k; ++c) {
        a(c) = rng.uniform(-1.0, 1.0);
        b(c) = rng.uniform(-1.0, 1.0);
      }
      g1.push_back(a);
      g2.push_back(b);
    }
    return std::make_pair(g1, g2);
  };
  BalancedReport rep = balanced_check(parse_theorem(sc.run.theorem), f, sampler, sc.model,
                                      sc.run.s, ctx.terminal_time(), n_samples, seed, ctx.eps(),
                                      ctx.step(1e-3 * sc.model.horizon));
  CsvWriter csv(ctx.out_path("balanced.csv"),
                {"balanced", "samples_run", "failing_sample", "t", "state", "detail"});
  if (rep.balanced) {
    csv.row({"1", std::to_string(rep.samples_run), "", "", "", ""});
  } else {
    csv.row({"0", std::to_string(rep.samples_run), std::to_string(rep.failing_sample),
             rep.witness ? fmt17(rep.witness->t) : "",
             rep.witness ? std::to_string(rep.witness->state + 1) : "",
             rep.witness ? rep.witness->what : ""});
  }
  ctx.note(rep.balanced ? "driver balanced on all sampled pairs"
                        : "driver NOT balanced: witness at sample " +
                              std::to_string(rep.failing_sample));
  return rep.balanced ? kExitOk : kExitCheckFailed;
}

inline int run_counterexample_cmd(RunContext& ctx) {
  const Scenario& sc = ctx.scenario;
  Counterexample which;
  if (sc.run.which == "ex41") which = Counterexample::ex41;
  else if (sc.run.which == "ex42") which = Counterexample::ex42;
  else throw ConfigError("run.which must be ex41 or ex42");
  int n_paths = ctx.n_paths(1000);
  std::uint64_t seed = ctx.seed();
  CounterexampleRun run = mcbsde::run_counterexample(which, sc.model, ctx.terminal_time(), n_paths,
                                                     seed, ctx.step(1e-3));
  CsvWriter csv(ctx.out_path("counterexample.csv"), {"path", "y0", "q1", "q2", "jumps"});
  for (int i = 0; i < n_paths; ++i)
    csv.row({std::to_string(i), fmt17(run.y0[static_cast<std::size_t>(i)]),
             fmt17(run.q1[static_cast<std::size_t>(i)]), fmt17(run.q2[static_cast<std::size_t>(i)]),
             std::to_string(run.jump_counts[static_cast<std::size_t>(i)])});
  bool ok;
  std::ostringstream os;
  if (which == Counterexample::ex42) {
    ok = run.min_q1 >= 1.0 - 1e-6;
    os << "min Y_1 = " << fmt17(run.min_q1) << (ok ? " >= 1" : " < 1 (bound violated)")
       << "; ||Z1||^2 range [" << fmt17(run.seminorm_sq_min) << ", " << fmt17(run.seminorm_sq_max)
       << "]";
  } else {
    DominanceReport dom = detect_dominance_arbitrage(run.y0, run.y0, run.q1, run.q2,
                                                     DominanceMode::dominance,
                                                     std::vector<char>(run.q1.size(), 1));
    ok = dom.detected;
    os << "dominance " << (ok ? "detected" : "not detected") << "; strict Q fraction "
       << fmt17(dom.strict_q_fraction);
  }
  ctx.note(os.str());
  return ok ? kExitOk : kExitCheckFailed;
}

inline int run_essential_range(RunContext& ctx) {
  const Scenario& sc = ctx.scenario;
  const std::vector<Vec>& terminal = ctx.require_terminal();
  Driver driver = build_driver(sc.driver_block, sc.model);
  if (driver.dim != 1) throw ConfigError("essential-range is scalar (driver dim 1)");
  std::vector<double> g;
  for (const Vec& v : terminal) g.push_back(v(0));
  EssentialRange range = essential_range(sc.model, sc.initial_state, ctx.terminal_time(), g);
  double evaluation;
  if (sc.run.evaluation_set) {
    evaluation = sc.run.evaluation;
  } else {
    EvaluationRequest req{sc.model, driver, terminal, 0.0, ctx.terminal_time(), ctx.step()};
    evaluation = evaluate(req)[static_cast<std::size_t>(sc.initial_state)](0);
  }
  bool inside = interior_check(range, evaluation);
  CsvWriter csv(ctx.out_path("essential_range.csv"),
                {"ess_inf", "ess_sup", "evaluation", "interior", "reachable"});
  std::ostringstream reach;
  for (std::size_t i = 0; i < range.reachable.size(); ++i) {
    if (i) reach << ' ';
    reach << range.reachable[i] + 1;
  }
  csv.row({fmt17(range.lo), fmt17(range.hi), fmt17(evaluation), inside ? "1" : "0", reach.str()});
  std::ostringstream os;
  os << "H_0 = [" << fmt17(range.lo) << ", " << fmt17(range.hi) << "], evaluation "
     << fmt17(evaluation) << (inside ? " inside" : " NOT inside");
  ctx.note(os.str());
  return inside ? kExitOk : kExitCheckFailed;
}

inline int run_evaluate(RunContext& ctx, bool negate) {
  const Scenario& sc = ctx.scenario;
  Driver driver = build_driver(sc.driver_block, sc.model);
  EvaluationRequest req{sc.model, driver, ctx.require_terminal(), sc.run.s, ctx.terminal_time(),
                        ctx.step()};
  std::vector<Vec> vals = negate ? rho(req) : evaluate(req);
  write_state_values(ctx, vals, negate ? "rho.csv" : "evaluate.csv");
  std::ostringstream os;
  os << (negate ? "rho_s" : "E_s") << " at state " << sc.initial_state + 1 << ":";
  for (int c = 0; c < driver.dim; ++c)
    os << " " << fmt17(vals[static_cast<std::size_t>(sc.initial_state)](c));
  ctx.note(os.str());
  return kExitOk;
}

inline int run_risk_properties(RunContext& ctx) {
  const Scenario& sc = ctx.scenario;
  Driver driver = build_driver(sc.driver_block, sc.model);
  std::uint64_t seed = ctx.seed();
  const std::vector<Vec>& q1 = ctx.require_terminal();

  PropertyInstance inst;
  inst.model = sc.model;
  inst.q1 = q1;
  if (!sc.terminal2.empty()) {
    inst.q2 = sc.terminal2;
  } else {
    inst.q2 = q1;
    for (Vec& v : inst.q2) v.array() -= 0.5;
  }
  inst.s = sc.run.s > 0.0 ? sc.run.s : 0.25 * ctx.terminal_time();
  inst.mid = sc.run.mid > 0.0 ? sc.run.mid : 0.5 * (inst.s + ctx.terminal_time());
  inst.t = ctx.terminal_time();
  inst.q_shift = sc.run.q_shift;
  inst.lambdas = sc.run.lambdas;
  inst.x0 = sc.initial_state;
  inst.n_paths = ctx.n_paths(2000);
  inst.step = ctx.step(1e-3 * sc.model.horizon);

  std::vector<std::string> names = sc.run.properties;
  if (names.empty())
    names = {"monotonicity", "constants",  "translation", "homogeneity",
             "convexity",    "zero_one",   "recursivity"};
  auto parse_prop = [](const std::string& s) {
    if (s == "monotonicity") return RiskProperty::monotonicity;
    if (s == "constants") return RiskProperty::constants;
    if (s == "translation") return RiskProperty::translation;
    if (s == "homogeneity") return RiskProperty::homogeneity;
    if (s == "convexity") return RiskProperty::convexity;
    if (s == "zero_one") return RiskProperty::zero_one;
    if (s == "recursivity") return RiskProperty::recursivity;
    throw ConfigError("unknown risk property '" + s + "'");
  };

  CsvWriter csv(ctx.out_path("risk_properties.csv"), {"property", "holds", "worst_gap", "detail"});
  bool all_ok = true;
  for (const std::string& name : names) {
    RiskProperty prop = parse_prop(name);
    PropertyInstance local = inst;
    if (prop == RiskProperty::monotonicity) {
      // enforce the ordering hypothesis on the default pair
      for (std::size_t i = 0; i < local.q1.size(); ++i)
        local.q2[i] = local.q2[i].cwiseMin(local.q1[i]);
    }
    if (prop == RiskProperty::constants) {
      // measurable terminal: the constant extension of the first state value
      for (std::size_t i = 0; i < local.q1.size(); ++i) local.q1[i] = q1[0];
    }
    PropertyReport rep = check_property(prop, driver, {local}, seed);
    csv.row({name, rep.holds ? "1" : "0", fmt17(rep.worst_gap), rep.detail});
    ctx.note(name + ": " + (rep.holds ? "holds" : "violated (" + rep.detail + ")"));
    if (!rep.holds) all_ok = false;
  }
  return all_ok ? kExitOk : kExitCheckFailed;
}

inline int run_verify_cmd(RunContext& ctx) {
  int n_paths = ctx.n_paths(20000);
  std::uint64_t seed = ctx.seed();
  VerifyResult result = run_verify(ctx.scenario.model, ctx.scenario.initial_state, n_paths, seed);
  CsvWriter csv(ctx.out_path("verify.csv"), {"check", "pass"});
  for (const std::string& line : result.lines) {
    bool pass = line.rfind("PASS", 0) == 0;
    csv.row({line.substr(5), pass ? "1" : "0"});
    ctx.note(line);
  }
  return result.ok ? kExitOk : kExitCheckFailed;
}

} // namespace detail

/// Loads the config, dispatches the subcommand, writes outputs plus a
/// manifest into out_dir, and maps errors onto the exit-status contract.
inline int run_subcommand(const RunRequest& req) {
  detail::RunContext ctx;
  ctx.req = req;
  try {
    std::ifstream in(req.config_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + req.config_path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    ctx.config_bytes = buf.str();
    ctx.config = json::parse(ctx.config_bytes);
    std::filesystem::create_directories(req.out_dir);
    if (req.subcommand != "validate") ctx.scenario = parse_scenario(ctx.config);

    int code;
    if (req.subcommand == "validate") code = detail::run_validate(ctx);
    else if (req.subcommand == "simulate") code = detail::run_simulate(ctx);
    else if (req.subcommand == "solve") code = detail::run_solve(ctx, false);
    else if (req.subcommand == "solve-hitting") code = detail::run_solve(ctx, true);
    else if (req.subcommand == "linear-solve") code = detail::run_solve(ctx, false);
    else if (req.subcommand == "linear-estimate") code = detail::run_linear_estimate(ctx);
    else if (req.subcommand == "check-comparison") code = detail::run_check_comparison(ctx);
    else if (req.subcommand == "balanced-check") code = detail::run_balanced_check(ctx);
    else if (req.subcommand == "counterexample") code = detail::run_counterexample_cmd(ctx);
    else if (req.subcommand == "essential-range") code = detail::run_essential_range(ctx);
    else if (req.subcommand == "evaluate") code = detail::run_evaluate(ctx, false);
    else if (req.subcommand == "rho") code = detail::run_evaluate(ctx, true);
    else if (req.subcommand == "check-risk-properties") code = detail::run_risk_properties(ctx);
    else if (req.subcommand == "verify") code = detail::run_verify_cmd(ctx);
    else throw ConfigError("unknown subcommand '" + req.subcommand + "'");

    ctx.write_manifest();
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::domain_error& e) {
    std::cerr << "precondition failed: " << e.what() << "\n";
    return kExitPrecondition;
  } catch (const std::invalid_argument& e) {
    std::cerr << "precondition failed: " << e.what() << "\n";
    return kExitPrecondition;
  }
}

} // namespace mcbsde
