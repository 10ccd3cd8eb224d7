#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcbsde/chain.hpp"
#include "mcbsde/driver.hpp"
#include "mcbsde/parallel.hpp"
#include "mcbsde/psi.hpp"
#include "mcbsde/solver.hpp"

namespace mcbsde {

enum class ComparisonTheorem { scalar_4_2, vector_5_1, vector_5_3, vector_5_7 };

inline const char* theorem_name(ComparisonTheorem t) {
  switch (t) {
    case ComparisonTheorem::scalar_4_2: return "4.2";
    case ComparisonTheorem::vector_5_1: return "5.1";
    case ComparisonTheorem::vector_5_3: return "5.3";
    case ComparisonTheorem::vector_5_7: return "5.7";
  }
  return "?";
}

struct FailureWitness {
  double t = 0.0;
  int state = -1;
  int j = -1; // state-target index, when relevant
  int k = -1; // value-component index, when relevant
  double lhs = 0.0;
  double rhs = 0.0;
  std::string what;
};

struct AssumptionCheck {
  bool holds = true;
  std::optional<FailureWitness> witness;

  void fail(FailureWitness w) {
    if (holds) witness = std::move(w);
    holds = false;
  }
};

struct EqualityPoint {
  double t = 0.0;
  int state = -1;
  int component = -1; // -1 means the whole vector
};

struct ConclusionCheck {
  bool ordered = true; // u1 >= u2 - slack on the whole grid
  double min_gap = std::numeric_limits<double>::infinity();
  bool strictness_consistent = true;
  std::vector<EqualityPoint> equalities;
  std::optional<FailureWitness> witness;
};

struct ComparisonReport {
  ComparisonTheorem theorem = ComparisonTheorem::scalar_4_2;
  double eps = 0.0;
  AssumptionCheck terminal_order; // (i)
  AssumptionCheck driver_order;   // (ii)
  AssumptionCheck jump_condition; // (iii)
  AssumptionCheck structure;      // (iv), vector theorems only
  std::optional<ConclusionCheck> conclusion;

  bool assumptions_hold() const {
    return terminal_order.holds && driver_order.holds && jump_condition.holds && structure.holds;
  }
};

struct ComparisonOptions {
  bool check_conclusion = true;
  bool exhaustive_z = false; // also sample arbitrary canonical Z pairs
  int z_samples = 16;
  std::uint64_t seed = 12345;
  double tol = 1e-9;         // equality threshold in the strictness bookkeeping
  double order_slack = 1e-8; // conclusion ordering tolerance
};

namespace detail {

/// Theorem-specific assumption (iii) at one (t, state) with realized or
/// sampled exposures; appends a witness on violation.
inline void check_jump_condition_at(ComparisonTheorem theorem, const Driver& f1, double t, int state,
                                    const StateContext& ctx, const PsiMatrix& pm, const Vec& y2,
                                    const Mat& z1, const Mat& z2, double eps, double tol,
                                    AssumptionCheck& out) {
  const int kdim = static_cast<int>(y2.size());
  Mat dz = z1 - z2;
  std::vector<int> active = pm.active_targets();
  auto jump_term = [&](int comp, int j) {
    return pm.a(j, state) * (dz(comp, j) - dz(comp, state));
  };

  switch (theorem) {
    case ComparisonTheorem::scalar_4_2: {
      double norm = std::sqrt(std::max(0.0, seminorm_sq(dz, pm)));
      bool premise = true;
      for (int j : active)
        if (jump_term(0, j) < -eps * norm) { premise = false; break; }
      if (!premise) return;
      double f_diff = (f1(t, y2, z1, ctx) - f1(t, y2, z2, ctx))(0);
      double rhs = -(dz * ctx.a->col(state)).value();
      if (f_diff < rhs - tol) {
        out.fail({t, state, -1, -1, f_diff, rhs, "F1(Y2,Z1) - F1(Y2,Z2) < -dZ A x under the jump premise"});
      } else if (std::abs(f_diff - rhs) <= tol && norm > tol) {
        out.fail({t, state, -1, -1, f_diff, rhs, "equality in (iii) with ||dZ|| != 0"});
      }
      break;
    }
    case ComparisonTheorem::vector_5_1: {
      Vec f_diff = f1(t, y2, z1, ctx) - f1(t, y2, z2, ctx);
      for (int k = 0; k < kdim; ++k) {
        Mat row = dz.row(k);
        double norm = std::sqrt(std::max(0.0, seminorm_sq(row, pm)));
        bool premise = true;
        for (int j : active)
          if (jump_term(k, j) < -eps * norm) { premise = false; break; }
        if (!premise) continue;
        double rhs = -(row * ctx.a->col(state)).value();
        if (f_diff(k) < rhs - tol) {
          out.fail({t, state, -1, k, f_diff(k), rhs, "row condition of Theorem 5.1 (iii) violated"});
          return;
        }
        if (std::abs(f_diff(k) - rhs) <= tol && norm > tol) {
          out.fail({t, state, -1, k, f_diff(k), rhs, "equality in 5.1 (iii) with nonzero row seminorm"});
          return;
        }
      }
      break;
    }
    case ComparisonTheorem::vector_5_3: {
      double norm = std::sqrt(std::max(0.0, seminorm_sq(dz, pm)));
      Vec f_diff = f1(t, y2, z1, ctx) - f1(t, y2, z2, ctx);
      for (int k = 0; k < kdim; ++k) {
        bool premise = true;
        for (int j : active)
          if (jump_term(k, j) < -eps * norm) { premise = false; break; }
        if (!premise) continue;
        if (f_diff(k) < -tol) {
          out.fail({t, state, -1, k, f_diff(k), 0.0, "component of F1(Y2,Z1) - F1(Y2,Z2) negative under 5.3 (iii) premise"});
          return;
        }
      }
      break;
    }
    case ComparisonTheorem::vector_5_7:
      // handled against Y differences by check_y_condition_at
      break;
  }
}

/// Theorem 5.7 (iii): a decreasing component of F in its own Y argument must
/// be licensed by the Y-gap geometry.
inline void check_y_condition_at(const Driver& f1, double t, int state, const StateContext& ctx,
                                 const Vec& y1, const Vec& y2, const Mat& z2, double eps, double tol,
                                 AssumptionCheck& out) {
  Vec fy1 = f1(t, y1, z2, ctx);
  Vec fy2 = f1(t, y2, z2, ctx);
  Vec dy = y1 - y2;
  double dy_norm = dy.norm();
  for (int i = 0; i < static_cast<int>(y1.size()); ++i) {
    if (fy1(i) >= fy2(i) - tol) continue;
    if (std::abs(dy(i)) > eps * dy_norm) continue;
    bool licensed = false;
    for (int j = 0; j < static_cast<int>(y1.size()); ++j)
      if (dy(j) < -eps * dy_norm) { licensed = true; break; }
    if (!licensed)
      out.fail({t, state, -1, i, fy1(i), fy2(i), "Theorem 5.7 (iii): drop in e_i*F1 not licensed by Y gaps"});
  }
}

} // namespace detail

/// Evaluates assumptions (i)-(iv) of the chosen comparison theorem along two
/// solved grids, on realized exposures (optionally also sampled canonical Z
/// pairs), plus the ordering conclusion with strict-comparison bookkeeping.
inline ComparisonReport check_comparison(ComparisonTheorem theorem, const Driver& f1,
                                         const Driver& f2, const ValueGrid& sol1,
                                         const ValueGrid& sol2, double eps,
                                         const ComparisonOptions& opts = {}) {
  const RateModel& model = sol1.model;
  if (sol2.model.num_states != model.num_states || sol1.dim != sol2.dim ||
      sol1.num_steps() != sol2.num_steps() || std::abs(sol1.t_end - sol2.t_end) > 1e-12 ||
      std::abs(sol1.t_start - sol2.t_start) > 1e-12)
    throw std::invalid_argument("check_comparison: solution grids do not match");
  if (!(eps > 0.0) || !(eps < epsilon_threshold(model.epsilon_r, model.num_states)))
    throw std::invalid_argument("check_comparison: eps outside (0, eps_r^{3/2} N^{-3/2})");
  if (theorem == ComparisonTheorem::scalar_4_2 && sol1.dim != 1)
    throw std::invalid_argument("check_comparison: Theorem 4.2 is scalar only");

  ComparisonReport report;
  report.theorem = theorem;
  report.eps = eps;

  const int n = model.num_states;
  const int kdim = sol1.dim;
  const int m = sol1.num_steps();
  detail::ModelAlgebra algebra(model);
  Rng rng(opts.seed);

  // (iv): structural flags, sampled against the evaluators
  if (theorem == ComparisonTheorem::vector_5_1) {
    if (!f1.component_separable || !f2.component_separable)
      report.structure.fail({0, -1, -1, -1, 0, 0, "drivers are not declared component separable (5.1 iv)"});
  } else if (theorem == ComparisonTheorem::vector_5_3) {
    if (!f1.y_component_separable || !f2.y_component_separable)
      report.structure.fail({0, -1, -1, -1, 0, 0, "drivers are not declared Y-component separable (5.3 iv)"});
  } else if (theorem == ComparisonTheorem::vector_5_7) {
    if (f1.depends_on_z)
      report.structure.fail({0, -1, -1, -1, 0, 0, "F1 depends on Z (5.7 iv)"});
  }
  if (report.structure.holds) {
    FlagCheckResult spot = spot_check_driver_flags(f1, model, 16, rng.next_u64());
    if (!spot.ok) report.structure.fail({0, -1, -1, -1, 0, 0, "flag spot check: " + spot.detail});
  }

  // (i) terminal ordering
  const Mat& g1 = sol1.at_index(m);
  const Mat& g2 = sol2.at_index(m);
  for (int i = 0; i < n && report.terminal_order.holds; ++i)
    for (int c = 0; c < kdim; ++c)
      if (g1(c, i) < g2(c, i) - opts.tol) {
        report.terminal_order.fail({sol1.t_end, i, -1, c, g1(c, i), g2(c, i), "terminal values not ordered"});
        break;
      }

  // (ii) and (iii) over the grid
  for (int k = 0; k <= m; ++k) {
    double t = sol1.time_at(k);
    int p = detail::stage_piece(model, t, sol1.t_start, sol1.t_end);
    const Mat& a = model.pieces[static_cast<std::size_t>(p)].a;
    const Mat& u1 = sol1.at_index(k);
    const Mat& u2 = sol2.at_index(k);
    for (int x = 0; x < n; ++x) {
      const PsiMatrix& pm = algebra.psi[static_cast<std::size_t>(p)][static_cast<std::size_t>(x)];
      StateContext ctx{t, x, &a, &pm};
      Vec y2 = u2.col(x);
      Mat z1 = canonicalize_z(u1, pm);
      Mat z2 = canonicalize_z(u2, pm);
      if (report.driver_order.holds) {
        Vec lhs = f1(t, y2, z2, ctx);
        Vec rhs = f2(t, y2, z2, ctx);
        for (int c = 0; c < kdim; ++c)
          if (lhs(c) < rhs(c) - opts.tol) {
            report.driver_order.fail({t, x, -1, c, lhs(c), rhs(c), "F1(Y2,Z2) < F2(Y2,Z2)"});
            break;
          }
      }
      if (report.jump_condition.holds) {
        if (theorem == ComparisonTheorem::vector_5_7) {
          detail::check_y_condition_at(f1, t, x, ctx, u1.col(x), y2, z2, eps, opts.tol,
                                       report.jump_condition);
        } else {
          detail::check_jump_condition_at(theorem, f1, t, x, ctx, pm, y2, z1, z2, eps, opts.tol,
                                          report.jump_condition);
          if (opts.exhaustive_z && report.jump_condition.holds) {
            for (int s = 0; s < opts.z_samples && report.jump_condition.holds; ++s) {
              Mat r1(kdim, n), r2(kdim, n);
              for (int rr = 0; rr < kdim; ++rr)
                for (int cc = 0; cc < n; ++cc) {
                  r1(rr, cc) = rng.uniform(-2.0, 2.0);
                  r2(rr, cc) = rng.uniform(-2.0, 2.0);
                }
              detail::check_jump_condition_at(theorem, f1, t, x, ctx, pm, y2, canonicalize_z(r1, pm),
                                              canonicalize_z(r2, pm), eps, opts.tol,
                                              report.jump_condition);
            }
          }
        }
      }
    }
  }

  if (!opts.check_conclusion) return report;

  // conclusion u1 >= u2 with strictness bookkeeping
  ConclusionCheck conclusion;
  bool componentwise = theorem != ComparisonTheorem::vector_5_3; // Remark 5.4
  for (int k = 0; k <= m; ++k) {
    double t = sol1.time_at(k);
    const Mat& u1 = sol1.at_index(k);
    const Mat& u2 = sol2.at_index(k);
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < kdim; ++c) {
        double gap = u1(c, x) - u2(c, x);
        conclusion.min_gap = std::min(conclusion.min_gap, gap);
        if (gap < -opts.order_slack && conclusion.ordered) {
          conclusion.ordered = false;
          conclusion.witness = FailureWitness{t, x, -1, c, u1(c, x), u2(c, x), "conclusion u1 >= u2 violated"};
        }
      }
      if (componentwise) {
        for (int c = 0; c < kdim; ++c)
          if (std::abs(u1(c, x) - u2(c, x)) <= opts.tol)
            conclusion.equalities.push_back({t, x, c});
      } else {
        bool all_equal = true;
        for (int c = 0; c < kdim; ++c)
          if (std::abs(u1(c, x) - u2(c, x)) > opts.tol) all_equal = false;
        if (all_equal) conclusion.equalities.push_back({t, x, -1});
      }
    }
  }
  // strictness: equality at (t, x) forces terminal equality on the states
  // reachable from x after t (per component where the theorem gives it)
  for (const EqualityPoint& pt : conclusion.equalities) {
    if (!conclusion.strictness_consistent) break;
    std::vector<int> reach = reachable_states(model, pt.state, pt.t, sol1.t_end);
    for (int j : reach) {
      for (int c = 0; c < kdim; ++c) {
        if (pt.component >= 0 && c != pt.component) continue;
        if (std::abs(g1(c, j) - g2(c, j)) > 10.0 * opts.tol) {
          conclusion.strictness_consistent = false;
          conclusion.witness = FailureWitness{pt.t, pt.state, j, c, g1(c, j), g2(c, j),
                                              "equality of solutions without terminal equality on reachable set"};
          break;
        }
      }
      if (!conclusion.strictness_consistent) break;
    }
  }
  report.conclusion = std::move(conclusion);
  return report;
}

/// Terminal-pair family for the balanced-driver probe: index + rng in, a
/// (g1, g2) pair of per-state terminal vectors out.
using TerminalPairSampler =
    std::function<std::pair<std::vector<Vec>, std::vector<Vec>>(int, Rng&)>;

struct BalancedReport {
  bool balanced = true;
  int samples_run = 0;
  std::optional<FailureWitness> witness;
  int failing_sample = -1;
};

/// Definition 6.3 probe: samples terminal pairs from the family, solves both
/// BSDEs with the same driver, and checks assumptions (iii)/(iv) only
/// (ordering of the pair is irrelevant). Sampling-based corroboration, never
/// a proof.
inline BalancedReport balanced_check(ComparisonTheorem theorem, const Driver& f,
                                     const TerminalPairSampler& sampler, const RateModel& model,
                                     double s, double t, int n_samples, std::uint64_t seed,
                                     double eps = 0.0, double step = 0.0) {
  if (eps <= 0.0) eps = 0.5 * epsilon_threshold(model.epsilon_r, model.num_states);
  BalancedReport out;
  Rng rng(seed);
  for (int i = 0; i < n_samples; ++i) {
    auto [q1, q2] = sampler(i, rng);
    SolveOptions opts;
    opts.t_start = s;
    opts.step = step;
    ValueGrid sol1 = solve_markovian(model, f, q1, t, opts);
    ValueGrid sol2 = solve_markovian(model, f, q2, t, opts);
    ComparisonOptions copts;
    copts.check_conclusion = false;
    copts.seed = rng.next_u64();
    ComparisonReport rep = check_comparison(theorem, f, f, sol1, sol2, eps, copts);
    ++out.samples_run;
    if (!rep.jump_condition.holds || !rep.structure.holds) {
      out.balanced = false;
      out.failing_sample = i;
      out.witness = rep.jump_condition.holds ? rep.structure.witness : rep.jump_condition.witness;
      return out;
    }
  }
  return out;
}

enum class DominanceMode { dominance, arbitrage };

struct DominanceReport {
  bool detected = false;
  int n_event = 0;        // paths in the event A
  int violations_q = 0;   // Q1 < Q2 on A
  int violations_y = 0;   // Y1_s > Y2_s on A
  double strict_q_fraction = 0.0;
  double strict_y_fraction = 0.0;
};

/// Empirical Definition 7.1 / 7.2 on per-path samples restricted to the event
/// mask. In arbitrage mode the second strategy is the zero strategy (pass
/// empty y2/q2). Strictness is separated from equality at 1e-9.
inline DominanceReport detect_dominance_arbitrage(const std::vector<double>& y1_s,
                                                  const std::vector<double>& y2_s,
                                                  const std::vector<double>& q1,
                                                  const std::vector<double>& q2, DominanceMode mode,
                                                  const std::vector<char>& event_mask) {
  const std::size_t n = q1.size();
  auto value_or_zero = [](const std::vector<double>& v, std::size_t i) {
    return v.empty() ? 0.0 : v[i];
  };
  if (y1_s.size() != n || event_mask.size() != n ||
      (mode == DominanceMode::dominance && (y2_s.size() != n || q2.size() != n)))
    throw std::invalid_argument("detect_dominance_arbitrage: sample sizes differ");
  const double strict = 1e-9;
  DominanceReport rep;
  int strict_q = 0, strict_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!event_mask[i]) continue;
    ++rep.n_event;
    double dq = q1[i] - value_or_zero(q2, i);
    double dy = y1_s[i] - value_or_zero(y2_s, i);
    if (dq < -strict) ++rep.violations_q;
    if (dy > strict) ++rep.violations_y;
    if (dq > strict) ++strict_q;
    if (dy < -strict) ++strict_y;
  }
  if (rep.n_event == 0) throw std::invalid_argument("detect_dominance_arbitrage: empty event A");
  rep.strict_q_fraction = static_cast<double>(strict_q) / rep.n_event;
  rep.strict_y_fraction = static_cast<double>(strict_y) / rep.n_event;
  rep.detected = rep.violations_q == 0 && rep.violations_y == 0 &&
                 (rep.strict_q_fraction > 0.0 || rep.strict_y_fraction > 0.0);
  return rep;
}

enum class Counterexample { ex41, ex42 };

struct CounterexampleRun {
  std::vector<double> y0;          // per path (identically zero by construction)
  std::vector<double> q1;          // terminal of the Z1 strategy
  std::vector<double> q2;          // terminal of the Z2 = 0 strategy
  std::vector<int> jump_counts;
  double min_q1 = 0.0;
  double strict_fraction = 0.0;    // fraction of paths with Q1 > Q2
  double seminorm_sq_min = 0.0;    // ex42: range of ||Z1||^2 over all steps
  double seminorm_sq_max = 0.0;
};

/// Reproduces the scalar counterexamples of the comparison theory as forward
/// constructions. ex41: two-state model, F = -2||Z||, Z1 the canonical
/// unit-jump row, Z2 = 0; the Y-difference drifts up between jumps and jumps
/// up at events, so Q1 dominates Q2 from equal initial values. ex42: the
/// three-state jump-counting exposure with F = -||Z|| - Z A x; on the
/// unit-rate fixture ||Z1||^2 == 4 identically and Y_T >= 1.
inline CounterexampleRun run_counterexample(Counterexample which, const RateModel& model, double t_end,
                                            int n_paths, std::uint64_t seed, double step = 1e-3) {
  require_valid(model);
  if (!(t_end > 0.0) || t_end > model.horizon + 1e-12)
    throw std::invalid_argument("run_counterexample: horizon out of range");
  for (const RatePiece& piece : model.pieces)
    for (int i = 0; i < model.num_states; ++i)
      for (int j = 0; j < model.num_states; ++j)
        if (i != j && !(piece.a(j, i) > 0.0))
          throw std::invalid_argument("run_counterexample: model must have all pairwise rates positive");

  CounterexampleRun run;
  run.y0.assign(static_cast<std::size_t>(n_paths), 0.0);
  run.q1.resize(static_cast<std::size_t>(n_paths));
  run.q2.assign(static_cast<std::size_t>(n_paths), 0.0);
  run.jump_counts.resize(static_cast<std::size_t>(n_paths));

  if (which == Counterexample::ex41) {
    if (model.num_states != 2)
      throw std::invalid_argument("run_counterexample: ex41 needs a two-state model");
    Driver f = make_znorm_driver(2.0);
    ZProcess z1 = [](double, const ChainPath&, int state_before, int) {
      Mat z = Mat::Zero(1, 2);
      z(0, 1 - state_before) = 0.5;
      z(0, state_before) = -0.5;
      return z;
    };
    std::vector<double> mins(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, [&](int i) {
      Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(i));
      ChainPath path = simulate_path(model, 0, t_end, rng.next_u64());
      ForwardSdeResult fwd = forward_sde(path, model, Vec::Zero(1), z1, f, step);
      run.q1[static_cast<std::size_t>(i)] = fwd.terminal(0);
      run.jump_counts[static_cast<std::size_t>(i)] = static_cast<int>(path.events.size());
      mins[static_cast<std::size_t>(i)] = fwd.terminal(0);
    });
    run.min_q1 = *std::min_element(mins.begin(), mins.end());
    int strict = 0;
    for (double q : run.q1)
      if (q > 1e-9) ++strict;
    run.strict_fraction = static_cast<double>(strict) / n_paths;
    return run;
  }

  if (model.num_states != 3)
    throw std::invalid_argument("run_counterexample: ex42 needs a three-state model");
  Driver f = make_zdrift_driver();
  detail::ModelAlgebra algebra(model);
  auto z1_raw = [&](double t, int state_before, int jumps_before) {
    int i1 = -1, i2 = -1;
    for (int j = 0; j < 3; ++j) {
      if (j == state_before) continue;
      if (i1 < 0) i1 = j; else i2 = j;
    }
    double big = 2.0 * std::sqrt(1.0 - std::ldexp(1.0, -2 * (jumps_before + 2)));
    double small = std::ldexp(1.0, -(jumps_before + 1));
    Mat v = Mat::Zero(1, 3);
    v(0, i1) = big;
    v(0, i2) = -small;
    int p = model.piece_index(std::max(t, 1e-300));
    return canonicalize_z(v, algebra.psi[static_cast<std::size_t>(p)][static_cast<std::size_t>(state_before)]);
  };
  ZProcess z1 = [&](double t, const ChainPath&, int state_before, int jumps_before) {
    return z1_raw(t, state_before, jumps_before);
  };
  std::vector<double> smin(static_cast<std::size_t>(n_paths)), smax(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, [&](int i) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(i));
    ChainPath path = simulate_path(model, 0, t_end, rng.next_u64());
    ForwardSdeResult fwd = forward_sde(path, model, Vec::Zero(1), z1, f, step);
    run.q1[static_cast<std::size_t>(i)] = fwd.terminal(0);
    run.jump_counts[static_cast<std::size_t>(i)] = static_cast<int>(path.events.size());
    // seminorm of Z1 on every inter-jump stretch (Z1 is constant between jumps)
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    double pos = 0.0;
    int state = path.initial_state;
    int jumps = 0;
    std::size_t ev = 0;
    while (true) {
      double t_mid = pos; // left endpoint represents the stretch
      int p = model.piece_index(std::nextafter(t_mid, model.horizon));
      const PsiMatrix& pm = algebra.psi[static_cast<std::size_t>(p)][static_cast<std::size_t>(state)];
      double sq = seminorm_sq(z1_raw(t_mid, state, jumps), pm);
      lo = std::min(lo, sq);
      hi = std::max(hi, sq);
      if (ev >= path.events.size()) break;
      pos = path.events[ev].time;
      state = path.events[ev].to_state;
      ++jumps;
      ++ev;
    }
    smin[static_cast<std::size_t>(i)] = lo;
    smax[static_cast<std::size_t>(i)] = hi;
  });
  run.min_q1 = *std::min_element(run.q1.begin(), run.q1.end());
  run.seminorm_sq_min = *std::min_element(smin.begin(), smin.end());
  run.seminorm_sq_max = *std::max_element(smax.begin(), smax.end());
  int strict = 0;
  for (double q : run.q1)
    if (q > 1e-9) ++strict;
  run.strict_fraction = static_cast<double>(strict) / n_paths;
  return run;
}

struct EssentialRange {
  std::vector<int> reachable;
  double lo = 0.0;
  double hi = 0.0;

  bool singleton() const { return !(hi > lo); }
};

/// H_0(Q) for scalar Markovian terminal data: the interval spanned by g over
/// the states reachable from x0 by time T.
inline EssentialRange essential_range(const RateModel& model, int x0, double t_end,
                                      const std::vector<double>& g) {
  require_valid(model);
  if (static_cast<int>(g.size()) != model.num_states)
    throw std::invalid_argument("essential_range: one terminal value per state required");
  if (x0 < 0 || x0 >= model.num_states)
    throw std::invalid_argument("essential_range: state out of range");
  EssentialRange out;
  out.reachable = reachable_states(model, x0, 0.0, t_end);
  out.lo = std::numeric_limits<double>::infinity();
  out.hi = -out.lo;
  for (int j : out.reachable) {
    out.lo = std::min(out.lo, g[static_cast<std::size_t>(j)]);
    out.hi = std::max(out.hi, g[static_cast<std::size_t>(j)]);
  }
  return out;
}

/// Theorem 8.2 check: the evaluation must lie strictly inside (lo, hi),
/// except in the singleton case where it must equal the single value.
inline bool interior_check(const EssentialRange& range, double value, double tol = 1e-9) {
  if (range.singleton()) return std::abs(value - range.lo) <= tol;
  return value > range.lo && value < range.hi;
}

} // namespace mcbsde
