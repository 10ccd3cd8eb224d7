#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcbsde/comparison.hpp"
#include "mcbsde/parallel.hpp"
#include "mcbsde/solver.hpp"

namespace mcbsde {

/// One conditional F-evaluation E^F_{s,t}(Q): solve the BSDE on [s, t] with
/// Markovian terminal data and read off the time-s values per state.
struct EvaluationRequest {
  RateModel model;
  Driver driver;
  std::vector<Vec> terminal; // g per state
  double s = 0.0;
  double t = 0.0;
  double step = 0.0; // 0 selects the solver default
};

inline std::vector<Vec> evaluate(const EvaluationRequest& req) {
  if (!(req.s <= req.t) || req.t > req.model.horizon + 1e-12)
    throw std::invalid_argument("evaluate: need s <= t <= T_max");
  if (req.s == req.t) return req.terminal; // E_{t,t}(Q) = Q
  SolveOptions opts;
  opts.t_start = req.s;
  opts.step = req.step;
  ValueGrid grid = solve_markovian(req.model, req.driver, req.terminal, req.t, opts);
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(req.model.num_states));
  for (int i = 0; i < req.model.num_states; ++i) out.push_back(grid.at_index(0).col(i));
  return out;
}

/// Dynamic risk measure rho_s^F(Q) = -E^F_{s,T}(Q); req.t plays the terminal
/// time T.
inline std::vector<Vec> rho(const EvaluationRequest& req) {
  std::vector<Vec> vals = evaluate(req);
  for (Vec& v : vals) v = -v;
  return vals;
}

enum class RiskProperty {
  monotonicity,
  constants,
  translation,
  homogeneity,
  convexity,
  zero_one,
  recursivity,
};

inline const char* property_name(RiskProperty p) {
  switch (p) {
    case RiskProperty::monotonicity: return "monotonicity";
    case RiskProperty::constants: return "constants";
    case RiskProperty::translation: return "translation";
    case RiskProperty::homogeneity: return "homogeneity";
    case RiskProperty::convexity: return "convexity";
    case RiskProperty::zero_one: return "zero_one";
    case RiskProperty::recursivity: return "recursivity";
  }
  return "?";
}

/// Inputs for one property check; unused fields may stay default.
struct PropertyInstance {
  RateModel model;
  std::vector<Vec> q1;
  std::vector<Vec> q2;          // monotonicity (q1 >= q2) and convexity
  double s = 0.0;               // evaluation time
  double mid = 0.0;             // recursivity intermediate time
  double t = 0.0;               // terminal time
  double q_shift = 0.0;         // translation amount (deterministic constant)
  std::vector<double> lambdas;  // homogeneity / convexity weights
  int x0 = 0;                   // zero-one law start state
  int n_paths = 2000;           // zero-one law sample size
  double step = 0.0;
};

struct PropertyReport {
  bool holds = true;
  double worst_gap = 0.0; // most adverse signed violation observed
  std::string detail;

  void fail(const std::string& what, double gap) {
    holds = false;
    if (detail.empty()) detail = what;
    worst_gap = std::min(worst_gap, gap);
  }
};

namespace detail {

inline constexpr double kPropertyTol = 1e-7;
inline constexpr double kRecursivityTol = 1e-8;

inline void verify_homogeneous(const Driver& d, const RateModel& model, std::uint64_t seed) {
  Rng rng(seed);
  const int k = d.dim, n = model.num_states;
  for (int s = 0; s < 24; ++s) {
    double t = rng.uniform(1e-6, model.horizon);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(model.rate_matrix(t), state);
    StateContext ctx{t, state, &model.rate_matrix(t), &pm};
    Vec y(k);
    Mat z(k, n);
    for (int i = 0; i < k; ++i) {
      y(i) = rng.uniform(-2.0, 2.0);
      for (int j = 0; j < n; ++j) z(i, j) = rng.uniform(-2.0, 2.0);
    }
    double lam = rng.uniform(0.1, 3.0);
    if ((d(t, Vec(lam * y), Mat(lam * z), ctx) - lam * d(t, y, z, ctx)).norm() > 1e-9)
      throw std::invalid_argument("check_property: driver is not positively homogeneous");
  }
}

inline void verify_concave(const Driver& d, const RateModel& model, std::uint64_t seed) {
  Rng rng(seed);
  const int k = d.dim, n = model.num_states;
  for (int s = 0; s < 24; ++s) {
    double t = rng.uniform(1e-6, model.horizon);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(model.rate_matrix(t), state);
    StateContext ctx{t, state, &model.rate_matrix(t), &pm};
    Vec y1(k), y2(k);
    Mat z1(k, n), z2(k, n);
    for (int i = 0; i < k; ++i) {
      y1(i) = rng.uniform(-2.0, 2.0);
      y2(i) = rng.uniform(-2.0, 2.0);
      for (int j = 0; j < n; ++j) {
        z1(i, j) = rng.uniform(-2.0, 2.0);
        z2(i, j) = rng.uniform(-2.0, 2.0);
      }
    }
    double mu = rng.uniform(0.0, 1.0);
    Vec mixed = d(t, Vec(mu * y1 + (1 - mu) * y2), Mat(mu * z1 + (1 - mu) * z2), ctx);
    Vec bound = mu * d(t, y1, z1, ctx) + (1 - mu) * d(t, y2, z2, ctx);
    if ((mixed - bound).minCoeff() < -1e-9)
      throw std::invalid_argument("check_property: driver is not concave");
  }
}

inline ComparisonTheorem pick_theorem(const Driver& d) {
  if (d.dim == 1) return ComparisonTheorem::scalar_4_2;
  if (!d.depends_on_z) return ComparisonTheorem::vector_5_7;
  if (d.component_separable) return ComparisonTheorem::vector_5_1;
  return ComparisonTheorem::vector_5_3;
}

} // namespace detail

/// Verifies one risk-measure property on the supplied instances, or returns
/// the first counterexample witness. Structural hypotheses (flags,
/// homogeneity, concavity, balancedness) are sampled-verified before the
/// property itself is trusted; inconsistent hypotheses throw.
inline PropertyReport check_property(RiskProperty property, const Driver& driver,
                                     const std::vector<PropertyInstance>& instances,
                                     std::uint64_t seed) {
  if (instances.empty()) throw std::invalid_argument("check_property: no instances");
  PropertyReport report;
  Rng rng(seed);
  const double tol = detail::kPropertyTol;

  FlagCheckResult flags = spot_check_driver_flags(driver, instances.front().model, 24, rng.next_u64());
  if (!flags.ok) throw std::invalid_argument("check_property: driver flags fail spot check: " + flags.detail);

  switch (property) {
    case RiskProperty::translation:
      if (driver.depends_on_y || !driver.normalized_at_zero)
        throw std::invalid_argument(
            "check_property: translation invariance needs a Y-free driver with F(t, y, 0) = 0");
      break;
    case RiskProperty::homogeneity:
      detail::verify_homogeneous(driver, instances.front().model, rng.next_u64());
      break;
    case RiskProperty::convexity:
      detail::verify_concave(driver, instances.front().model, rng.next_u64());
      break;
    case RiskProperty::constants:
      if (!driver.normalized_at_zero)
        throw std::invalid_argument("check_property: constants property needs F(t, y, 0) = 0");
      break;
    default:
      break;
  }

  auto solve_vals = [&](const PropertyInstance& inst, const std::vector<Vec>& q) {
    EvaluationRequest req{inst.model, driver, q, inst.s, inst.t, inst.step};
    return evaluate(req);
  };

  int idx = 0;
  for (const PropertyInstance& inst : instances) {
    ++idx;
    const int n = inst.model.num_states;
    const int k = driver.dim;
    std::ostringstream tag;
    tag << property_name(property) << " instance " << idx;

    switch (property) {
      case RiskProperty::translation: {
        std::vector<Vec> shifted = inst.q1;
        for (Vec& g : shifted) g.array() += inst.q_shift;
        std::vector<Vec> base = solve_vals(inst, inst.q1);
        std::vector<Vec> moved = solve_vals(inst, shifted);
        for (int i = 0; i < n; ++i) {
          double gap = (moved[i] - base[i] - Vec::Constant(k, inst.q_shift)).cwiseAbs().maxCoeff();
          if (gap > tol) report.fail(tag.str() + ": E(Q+q) != E(Q)+q", -gap);
        }
        break;
      }
      case RiskProperty::homogeneity: {
        std::vector<Vec> base = solve_vals(inst, inst.q1);
        for (double lam : inst.lambdas) {
          if (!(lam > 0.0)) throw std::invalid_argument("check_property: homogeneity needs lambda > 0");
          std::vector<Vec> scaled_q = inst.q1;
          for (Vec& g : scaled_q) g *= lam;
          std::vector<Vec> scaled = solve_vals(inst, scaled_q);
          for (int i = 0; i < n; ++i) {
            double gap = (scaled[i] - lam * base[i]).cwiseAbs().maxCoeff();
            if (gap > tol) report.fail(tag.str() + ": E(lam Q) != lam E(Q)", -gap);
          }
        }
        break;
      }
      case RiskProperty::convexity: {
        // rho convex <=> E concave; driver concavity + balancedness assumed,
        // both sampled-verified (balancedness on this instance's pair).
        TerminalPairSampler family = [&](int, Rng&) { return std::make_pair(inst.q1, inst.q2); };
        BalancedReport bal = balanced_check(detail::pick_theorem(driver), driver, family, inst.model,
                                            inst.s, inst.t, 1, rng.next_u64(), 0.0, inst.step);
        if (!bal.balanced)
          throw std::invalid_argument("check_property: driver not balanced on the convexity instance");
        std::vector<Vec> e1 = solve_vals(inst, inst.q1);
        std::vector<Vec> e2 = solve_vals(inst, inst.q2);
        for (double lam : inst.lambdas) {
          std::vector<Vec> mix_q(inst.q1.size());
          for (std::size_t i = 0; i < inst.q1.size(); ++i)
            mix_q[i] = lam * inst.q1[i] + (1.0 - lam) * inst.q2[i];
          std::vector<Vec> mixed = solve_vals(inst, mix_q);
          for (int i = 0; i < n; ++i) {
            // E(mix) >= lam E(Q1) + (1-lam) E(Q2), i.e. rho(mix) <= mix of rho
            double gap = (mixed[i] - lam * e1[i] - (1.0 - lam) * e2[i]).minCoeff();
            if (gap < -tol) report.fail(tag.str() + ": convexity violated", gap);
          }
        }
        break;
      }
      case RiskProperty::monotonicity: {
        for (std::size_t i = 0; i < inst.q1.size(); ++i)
          if ((inst.q1[i] - inst.q2[i]).minCoeff() < 0.0)
            throw std::invalid_argument("check_property: monotonicity instance needs Q1 >= Q2");
        SolveOptions opts;
        opts.t_start = inst.s;
        opts.step = inst.step;
        ValueGrid sol1 = solve_markovian(inst.model, driver, inst.q1, inst.t, opts);
        ValueGrid sol2 = solve_markovian(inst.model, driver, inst.q2, inst.t, opts);
        double eps = 0.5 * epsilon_threshold(inst.model.epsilon_r, inst.model.num_states);
        ComparisonOptions copts;
        copts.seed = rng.next_u64();
        ComparisonReport rep =
            check_comparison(detail::pick_theorem(driver), driver, driver, sol1, sol2, eps, copts);
        if (!rep.assumptions_hold())
          throw std::invalid_argument("check_property: driver not balanced on the monotonicity instance");
        if (!rep.conclusion->ordered)
          report.fail(tag.str() + ": rho(Q1) > rho(Q2) despite Q1 >= Q2", rep.conclusion->min_gap);
        if (!rep.conclusion->strictness_consistent)
          report.fail(tag.str() + ": strictness bookkeeping inconsistent with reachability", 0.0);
        break;
      }
      case RiskProperty::constants: {
        // hypothesis: q1 constant on every reachable class (F_s-measurable)
        for (int x = 0; x < n; ++x) {
          std::vector<int> reach = reachable_states(inst.model, x, inst.s, inst.t);
          for (int j : reach)
            if ((inst.q1[static_cast<std::size_t>(j)] - inst.q1[static_cast<std::size_t>(x)]).cwiseAbs().maxCoeff() > 0.0)
              throw std::invalid_argument(
                  "check_property: constants instance terminal is not F_s-measurable (reachable class not constant)");
        }
        std::vector<Vec> vals = solve_vals(inst, inst.q1);
        for (int x = 0; x < n; ++x) {
          double gap = (vals[static_cast<std::size_t>(x)] - inst.q1[static_cast<std::size_t>(x)]).cwiseAbs().maxCoeff();
          if (gap > tol) report.fail(tag.str() + ": rho_t(Q) != -Q for measurable Q", -gap);
        }
        break;
      }
      case RiskProperty::zero_one: {
        // I_A E(Q | F_s) = E(I_A Q | F_s) for A = {X_s = e_i}: the right side
        // solves with terminal g on the event and terminal 0 off it, and both
        // sides are averaged over Monte Carlo occupancy at s.
        if (!(inst.s > 0.0))
          throw std::invalid_argument("check_property: zero_one needs s > 0 so occupancy is random");
        SolveOptions opts;
        opts.t_start = inst.s;
        opts.step = inst.step;
        ValueGrid sol_q = solve_markovian(inst.model, driver, inst.q1, inst.t, opts);
        std::vector<Vec> zero_terminal(static_cast<std::size_t>(n), Vec::Zero(k));
        ValueGrid sol_0 = solve_markovian(inst.model, driver, zero_terminal, inst.t, opts);
        for (int event_state = 0; event_state < n; ++event_state) {
          std::vector<double> diffs(static_cast<std::size_t>(inst.n_paths));
          parallel_for(inst.n_paths, [&](int p) {
            Rng prng = Rng::for_path(seed + 1000003ULL * static_cast<std::uint64_t>(event_state) + 17,
                                     static_cast<std::uint64_t>(p));
            ChainPath path = simulate_path(inst.model, inst.x0, inst.s, prng.next_u64());
            int xs = path.state_at(inst.s);
            Vec lhs = xs == event_state ? Vec(sol_q.at_index(0).col(xs)) : Vec(Vec::Zero(k));
            Vec rhs = xs == event_state ? Vec(sol_q.at_index(0).col(xs)) : Vec(sol_0.at_index(0).col(xs));
            diffs[static_cast<std::size_t>(p)] = (lhs - rhs).cwiseAbs().maxCoeff();
          });
          double mean = 0.0;
          for (double d : diffs) mean += d;
          mean /= inst.n_paths;
          double var = 0.0;
          for (double d : diffs) var += (d - mean) * (d - mean);
          var /= std::max(1, inst.n_paths - 1);
          double sigma = std::sqrt(var / inst.n_paths);
          if (mean > 3.0 * sigma + 1e-9)
            report.fail(tag.str() + ": zero-one law violated", -(mean - 3.0 * sigma));
        }
        break;
      }
      case RiskProperty::recursivity: {
        if (!(inst.s <= inst.mid && inst.mid <= inst.t))
          throw std::invalid_argument("check_property: recursivity needs s <= mid <= t");
        EvaluationRequest inner{inst.model, driver, inst.q1, inst.mid, inst.t, inst.step};
        std::vector<Vec> mid_vals = evaluate(inner);
        EvaluationRequest outer{inst.model, driver, mid_vals, inst.s, inst.mid, inst.step};
        std::vector<Vec> composed = evaluate(outer);
        std::vector<Vec> direct = solve_vals(inst, inst.q1);
        for (int i = 0; i < n; ++i) {
          double gap = (composed[static_cast<std::size_t>(i)] - direct[static_cast<std::size_t>(i)]).cwiseAbs().maxCoeff();
          if (gap > detail::kRecursivityTol)
            report.fail(tag.str() + ": E_{s,mid} o E_{mid,t} != E_{s,t}", -gap);
        }
        break;
      }
    }
  }
  return report;
}

} // namespace mcbsde
