#pragma once

#include <atomic>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mcbsde/comparison.hpp"
#include "mcbsde/linear.hpp"
#include "mcbsde/parallel.hpp"
#include "mcbsde/risk.hpp"
#include "mcbsde/solver.hpp"

namespace mcbsde {

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> lines;

  void record(const std::string& name, bool pass, const std::string& note = "") {
    std::ostringstream os;
    os << (pass ? "PASS " : "FAIL ") << name;
    if (!note.empty()) os << " (" << note << ")";
    lines.push_back(os.str());
    if (!pass) ok = false;
  }
};

namespace detail {

inline Mat random_z(Rng& rng, int k, int n) {
  Mat z(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) z(i, j) = rng.uniform(-2.0, 2.0);
  return z;
}

} // namespace detail

/// psi algebra invariants on random valid models: symmetry, zero sums, PSD,
/// Lemmas 3.4/3.7/3.8/3.9/3.10, Penrose identities of the structured
/// pseudoinverse, canonical projection behavior.
inline void verify_psi_suite(VerifyResult& out, int n_models, std::uint64_t seed) {
  Rng rng(seed);
  double worst_sum = 0.0, worst_psd = 0.0, worst_l37 = 0.0, worst_l34 = 0.0;
  double worst_penrose = 0.0, worst_norm = 0.0, worst_idem = 0.0, worst_rowsum = 0.0;
  bool lemma310_ok = true, zero_iff_ok = true;
  for (int mi = 0; mi < n_models; ++mi) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel model = make_random_model(n, rng.next_u64(), 1.0, 1, mi % 3 == 0 ? 0.3 : 0.0);
    for (int state = 0; state < n; ++state) {
      PsiMatrix pm = make_psi(model.pieces[0].a, state);
      const Mat& psi = pm.psi;
      worst_sum = std::max({worst_sum, (psi - psi.transpose()).norm(),
                            psi.rowwise().sum().cwiseAbs().maxCoeff(),
                            psi.colwise().sum().cwiseAbs().maxCoeff()});
      Eigen::SelfAdjointEigenSolver<Mat> eig(psi);
      worst_psd = std::min(worst_psd, eig.eigenvalues().minCoeff());
      // Lemma 3.7: psi x = -A x = -sum_j a_j (e_j - x)
      Vec x = Vec::Zero(n);
      x(state) = 1.0;
      Vec lhs = psi * x;
      Vec rhs = -pm.a * x;
      Vec sum_form = Vec::Zero(n);
      for (int j : pm.active_targets()) {
        Vec d = Vec::Zero(n);
        d(j) = 1.0;
        d(state) = -1.0;
        sum_form += pm.a(j, state) * d;
      }
      worst_l37 = std::max({worst_l37, (lhs - rhs).cwiseAbs().maxCoeff(),
                            (rhs + sum_form).cwiseAbs().maxCoeff()});
      Mat pinv = pseudoinverse(pm);
      worst_penrose = std::max({worst_penrose, (psi * pinv * psi - psi).cwiseAbs().maxCoeff(),
                                (pinv * psi * pinv - pinv).cwiseAbs().maxCoeff(),
                                (psi * pinv - (psi * pinv).transpose()).cwiseAbs().maxCoeff(),
                                (pinv * psi - (pinv * psi).transpose()).cwiseAbs().maxCoeff()});
      worst_sum = std::max({worst_sum, pinv.rowwise().sum().cwiseAbs().maxCoeff(),
                            pinv.colwise().sum().cwiseAbs().maxCoeff()});
      for (int j : pm.active_targets()) {
        Vec d = Vec::Zero(n);
        d(j) = 1.0;
        d(state) = -1.0;
        worst_l34 = std::max({worst_l34, (pinv * psi * d - d).cwiseAbs().maxCoeff(),
                              (psi * pinv * d - d).cwiseAbs().maxCoeff()});
      }
      Mat z = detail::random_z(rng, 2, n);
      Mat zc = canonicalize_z(z, pm);
      worst_norm = std::max(worst_norm, std::abs(seminorm_sq(zc, pm, SeminormForm::trace) -
                                                 seminorm_sq(zc, pm, SeminormForm::jump)));
      worst_norm = std::max(worst_norm, std::abs(seminorm_sq(z, pm, SeminormForm::trace) -
                                                 seminorm_sq(zc, pm, SeminormForm::trace)));
      worst_idem = std::max(worst_idem, (canonicalize_z(zc, pm) - zc).cwiseAbs().maxCoeff());
      worst_rowsum = std::max(worst_rowsum, (zc * pm.psi).rowwise().sum().cwiseAbs().maxCoeff());
      worst_rowsum = std::max(worst_rowsum, zc.rowwise().sum().cwiseAbs().maxCoeff());
      // Lemma 3.6 both directions on a kernel row
      Mat ones = Mat::Ones(1, n);
      if (canonicalize_z(ones, pm).cwiseAbs().maxCoeff() != 0.0) zero_iff_ok = false;
      if (seminorm_sq(zc, pm) > 1e-18 && zc.cwiseAbs().maxCoeff() == 0.0) zero_iff_ok = false;
      // Lemma 3.10 as a property
      double eps = 0.5 * epsilon_threshold(model.epsilon_r, n);
      RowVec zrow = canonicalize_z(detail::random_z(rng, 1, n), pm).row(0);
      if (seminorm_sq(zrow, pm) > 1e-12) {
        Lemma310Result lr = check_lemma_3_10(zrow, pm, model.epsilon_r, eps);
        if (lr.premise_holds && !lr.conclusion_holds) lemma310_ok = false;
      }
    }
  }
  out.record("psi symmetry and zero row/column sums <= 1e-12", worst_sum <= 1e-12);
  out.record("psi positive semidefinite (min eig >= -1e-10)", worst_psd >= -1e-10);
  out.record("Lemma 3.7 psi x = -A x = -sum a_j (e_j - x) <= 1e-12", worst_l37 <= 1e-12);
  out.record("Lemma 3.4 projections fix e_j - x", worst_l34 <= 1e-9);
  out.record("Penrose identities of structured pseudoinverse <= 1e-9", worst_penrose <= 1e-9);
  out.record("Lemma 3.8 trace/jump seminorm agreement <= 1e-10", worst_norm <= 1e-10);
  out.record("canonical projection idempotent <= 1e-12", worst_idem <= 1e-12);
  out.record("Lemma 3.9 zero row sums of Z and Z psi <= 1e-12", worst_rowsum <= 1e-12);
  out.record("Lemma 3.6 canonical Z zero iff seminorm zero", zero_iff_ok);
  out.record("Lemma 3.10 premise implies conclusion", lemma310_ok);
}

/// Chain invariants by Monte Carlo: realized jump rates positive, martingale
/// means near zero, occupancy matching the transition matrix, the Lemma 3.1
/// isometry.
inline void verify_chain_suite(VerifyResult& out, const RateModel& model, int x0, int n_paths,
                               std::uint64_t seed) {
  const int n = model.num_states;
  double horizon = model.horizon;
  std::vector<Vec> m_samples(static_cast<std::size_t>(n_paths));
  std::vector<int> terminal_state(static_cast<std::size_t>(n_paths));
  std::vector<double> iso_sq(static_cast<std::size_t>(n_paths)), iso_qv(static_cast<std::size_t>(n_paths));
  Mat z_row = Mat::Zero(1, n);
  for (int j = 0; j < n; ++j) z_row(0, j) = 0.3 * (j + 1) * (j % 2 == 0 ? 1.0 : -1.0);
  std::atomic<bool> paths_valid{true};

  parallel_for(n_paths, [&](int i) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(i));
    ChainPath path = simulate_path(model, x0, horizon, rng.next_u64());
    if (!validate_path(path, model).ok) paths_valid = false;
    m_samples[static_cast<std::size_t>(i)] = martingale_increments(path, model, {horizon})[0];
    terminal_state[static_cast<std::size_t>(i)] = path.state_at(horizon);
    // int Z dM and int ||Z||^2 du with a constant row Z
    double stoch = 0.0, qv = 0.0;
    double pos = 0.0;
    int state = x0;
    std::size_t ev = 0;
    while (pos < horizon) {
      double seg_end = ev < path.events.size() ? std::min(path.events[ev].time, horizon) : horizon;
      int p = model.piece_index(std::nextafter(pos, horizon));
      seg_end = std::min(seg_end, model.pieces[static_cast<std::size_t>(p)].t_end);
      PsiMatrix pm = make_psi(model.pieces[static_cast<std::size_t>(p)].a, state);
      qv += seminorm_sq(z_row, pm) * (seg_end - pos);
      stoch -= (z_row * model.pieces[static_cast<std::size_t>(p)].a.col(state)).value() * (seg_end - pos);
      if (ev < path.events.size() && path.events[ev].time <= seg_end) {
        stoch += z_row(0, path.events[ev].to_state) - z_row(0, state);
        state = path.events[ev].to_state;
        ++ev;
      }
      pos = seg_end;
    }
    iso_sq[static_cast<std::size_t>(i)] = stoch * stoch;
    iso_qv[static_cast<std::size_t>(i)] = qv;
  });

  out.record("Lemma 3.14 realized jump rates strictly positive", paths_valid);

  bool mart_ok = true;
  for (int c = 0; c < n; ++c) {
    double mean = 0.0;
    for (const Vec& m : m_samples) mean += m(c);
    mean /= n_paths;
    double var = 0.0;
    for (const Vec& m : m_samples) var += (m(c) - mean) * (m(c) - mean);
    var /= std::max(1, n_paths - 1);
    if (std::abs(mean) > 3.0 * std::sqrt(var / n_paths) + 1e-12) mart_ok = false;
  }
  out.record("martingale mean zero within 3 sigma", mart_ok);

  Mat p_mat = transition_matrix(model, 0.0, horizon);
  bool occ_ok = true;
  for (int j = 0; j < n; ++j) {
    double phat = 0.0;
    for (int s : terminal_state) phat += (s == j) ? 1.0 : 0.0;
    phat /= n_paths;
    double p = p_mat(j, x0);
    double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n_paths);
    if (std::abs(phat - p) > 3.0 * sigma + 1.0 / n_paths) occ_ok = false;
  }
  out.record("occupancy matches transition matrix within 3 sigma", occ_ok);

  double mean_d = 0.0;
  for (int i = 0; i < n_paths; ++i) mean_d += iso_sq[static_cast<std::size_t>(i)] - iso_qv[static_cast<std::size_t>(i)];
  mean_d /= n_paths;
  double var_d = 0.0;
  for (int i = 0; i < n_paths; ++i) {
    double d = iso_sq[static_cast<std::size_t>(i)] - iso_qv[static_cast<std::size_t>(i)] - mean_d;
    var_d += d * d;
  }
  var_d /= std::max(1, n_paths - 1);
  out.record("Lemma 3.1 isometry within 3 sigma",
             std::abs(mean_d) <= 3.0 * std::sqrt(var_d / n_paths) + 1e-12);
}

/// Solver, linear, comparison, and risk spot invariants on the given model.
inline void verify_solver_suite(VerifyResult& out, const RateModel& model, int x0,
                                std::uint64_t seed) {
  const int n = model.num_states;
  std::vector<Vec> g;
  for (int i = 0; i < n; ++i) g.push_back(Vec::Constant(1, i == 0 ? 1.0 : 0.0));
  Driver zero = make_zero_driver(1);
  SolveOptions opts;
  opts.step = 1e-3 * model.horizon;
  ValueGrid sol = solve_markovian(model, zero, g, model.horizon, opts);
  Mat p_mat = transition_matrix(model, 0.0, model.horizon);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    double oracle = p_mat(0, i); // P(X_T = state 1 | X_0 = i)
    worst = std::max(worst, std::abs(sol.at_index(0)(0, i) - oracle));
  }
  out.record("classical expectation recovery <= 1e-6", worst <= 1e-6);

  // flow property: restart from the mid-grid values
  int mid = sol.num_steps() / 2;
  std::vector<Vec> g_mid;
  for (int i = 0; i < n; ++i) g_mid.push_back(sol.at_index(mid).col(i));
  SolveOptions opts2 = opts;
  ValueGrid sol2 = solve_markovian(model, zero, g_mid, sol.time_at(mid), opts2);
  double flow = (sol2.at_index(0) - sol.at_index(0)).cwiseAbs().maxCoeff();
  out.record("flow/recursivity restart <= 1e-8", flow <= 1e-8);

  SolveOptions half = opts;
  half.step = opts.step / 2.0;
  ValueGrid sol_h = solve_markovian(model, zero, g, model.horizon, half);
  double agree = (sol_h.at_index(0) - sol.at_index(0)).cwiseAbs().maxCoeff();
  out.record("step-halving agreement <= 1e-9", agree <= 1e-9);

  // adjoint semigroup and inverse on simulated paths
  Rng rng(seed);
  LinearDriverSpec spec;
  spec.dim = 1;
  for (std::size_t p = 0; p < model.pieces.size(); ++p) {
    LinearCoeffs c;
    c.beta = Mat::Constant(1, 1, 0.4);
    c.gamma = Vec::Constant(1, 1.0);
    c.phi = Vec::Constant(1, 0.2);
    for (int i = 0; i < n; ++i) c.alpha.push_back(0.1 * detail::random_z(rng, 1, n));
    spec.pieces.push_back(std::move(c));
  }
  double worst_semi = 0.0, worst_inv = 0.0;
  for (int i = 0; i < 20; ++i) {
    ChainPath path = simulate_path(model, x0, model.horizon, rng.next_u64());
    AdjointPath gamma = adjoint_on_path(path, spec, model, 0.0);
    double r = 0.37 * model.horizon, s = 0.81 * model.horizon;
    AdjointPath gamma_r = adjoint_on_path(path, spec, model, r);
    worst_semi = std::max(worst_semi, (gamma.at(r) * gamma_r.at(s) - gamma.at(s)).norm());
    worst_inv = std::max(worst_inv, (gamma.at(s) * gamma.inverse_at(s) - Mat::Identity(1, 1)).norm());
  }
  out.record("Lemma 3.12 adjoint semigroup <= 1e-8", worst_semi <= 1e-8);
  out.record("adjoint reversed-product inverse <= 1e-8", worst_inv <= 1e-8);

  if (check_linear_conditions(spec, model).invertibility_ok) {
    McEstimate est = closed_form_estimate(spec, g, model, x0, model.horizon, 4000, rng.next_u64());
    Driver lin = make_linear_driver(spec, model);
    ValueGrid lin_sol = solve_markovian(model, lin, g, model.horizon, opts);
    double gap = std::abs(est.mean(0) - lin_sol.at_index(0)(0, x0));
    out.record("closed form vs solver within 3 standard errors",
               gap <= 3.0 * est.std_error(0) + 1e-9);
  }

  // ordered pair with the zero driver: full comparison pipeline
  std::vector<Vec> g2;
  for (int i = 0; i < n; ++i) g2.push_back(Vec::Constant(1, g[static_cast<std::size_t>(i)](0) - 0.25));
  ValueGrid solg2 = solve_markovian(model, zero, g2, model.horizon, opts);
  double eps = 0.5 * epsilon_threshold(model.epsilon_r, n);
  ComparisonReport rep = check_comparison(ComparisonTheorem::scalar_4_2, zero, zero, sol, solg2, eps);
  out.record("comparison assumptions and conclusion for ordered classical pair",
             rep.assumptions_hold() && rep.conclusion->ordered && rep.conclusion->strictness_consistent);

  // risk spot checks: recursivity and translation for -c||Z||
  Driver znorm = make_znorm_driver(0.1);
  PropertyInstance inst;
  inst.model = model;
  inst.q1 = g;
  inst.s = 0.0;
  inst.mid = 0.5 * model.horizon;
  inst.t = model.horizon;
  inst.step = 1e-3 * model.horizon;
  inst.q_shift = 0.3;
  PropertyReport rec = check_property(RiskProperty::recursivity, znorm, {inst}, rng.next_u64());
  PropertyReport tra = check_property(RiskProperty::translation, znorm, {inst}, rng.next_u64());
  out.record("risk recursivity <= 1e-8", rec.holds);
  out.record("risk translation invariance <= 1e-7", tra.holds);
}

inline VerifyResult run_verify(const RateModel& model, int x0, int n_paths, std::uint64_t seed) {
  VerifyResult out;
  verify_psi_suite(out, 60, seed);
  verify_chain_suite(out, model, x0, n_paths, seed + 1);
  verify_solver_suite(out, model, x0, seed + 2);
  return out;
}

} // namespace mcbsde
