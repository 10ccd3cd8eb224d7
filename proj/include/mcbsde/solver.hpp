#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mcbsde/chain.hpp"
#include "mcbsde/driver.hpp"
#include "mcbsde/psi.hpp"

namespace mcbsde {

// Markovian reduction: with Y_t = u(t, X_t) and jump exposure Z(e_j - e_i) =
// u(t, e_j) - u(t, e_i), the BSDE collapses to the coupled backward system
//   du/dt(t, e_i) = -F(t, u(t, e_i), Z_i(t)) - sum_j (e_j* A_t e_i)(u(t,e_j) - u(t,e_i)),
// integrated here by classical fixed-step RK4 from the terminal data.

struct SolveOptions {
  double t_start = 0.0;
  double step = 0.0; // <= 0 selects the default 1e-4 * (t_end - t_start)
};

/// Markovian BSDE solution u(t, state) on a uniform grid.
struct ValueGrid {
  RateModel model;
  Driver driver;
  double t_start = 0.0;
  double t_end = 0.0;
  double step = 0.0;
  int dim = 1;
  std::vector<int> absorbing; // sorted; empty for plain solves
  std::vector<Mat> values;    // values[k] is K x N at time t_start + k*step

  int num_steps() const { return static_cast<int>(values.size()) - 1; }
  double time_at(int k) const { return k == num_steps() ? t_end : t_start + k * step; }

  int index_of(double t) const {
    double raw = (t - t_start) / step;
    int k = static_cast<int>(std::lround(raw));
    if (k < 0 || k > num_steps() || std::abs(raw - k) > 1e-6)
      throw std::invalid_argument("ValueGrid: time off grid");
    return k;
  }

  const Mat& at_index(int k) const { return values[static_cast<std::size_t>(k)]; }
  Vec value(double t, int state) const { return values[static_cast<std::size_t>(index_of(t))].col(state); }
  bool is_absorbing(int state) const {
    return std::find(absorbing.begin(), absorbing.end(), state) != absorbing.end();
  }
};

namespace detail {

/// psi algebra for every (piece, state), built once per solve.
struct ModelAlgebra {
  std::vector<std::vector<PsiMatrix>> psi; // [piece][state]

  explicit ModelAlgebra(const RateModel& model) {
    psi.resize(model.pieces.size());
    for (std::size_t p = 0; p < model.pieces.size(); ++p) {
      psi[p].reserve(static_cast<std::size_t>(model.num_states));
      for (int i = 0; i < model.num_states; ++i)
        psi[p].push_back(make_psi(model.pieces[p].a, i));
    }
  }
};

/// Piece index for evaluating the generator at stage time tau inside the
/// step (t_lo, t_hi]; tau == t_lo belongs to the interval's piece, not the
/// earlier one, matching left continuity of A.
inline int stage_piece(const RateModel& model, double tau, double t_lo, double t_hi) {
  double lookup = tau <= t_lo ? std::nextafter(t_lo, t_hi) : tau;
  return model.piece_index(lookup);
}

} // namespace detail

inline ValueGrid solve_markovian_impl(const RateModel& model, const Driver& driver,
                                      const std::vector<Vec>& terminal,
                                      const std::vector<int>& absorbing, double t_end,
                                      const SolveOptions& opts) {
  require_valid(model);
  const int n = model.num_states;
  const int k = driver.dim;
  if (static_cast<int>(terminal.size()) != n)
    throw std::invalid_argument("solve: one terminal vector per state required");
  for (const Vec& g : terminal)
    if (static_cast<int>(g.size()) != k)
      throw std::invalid_argument("solve: terminal dimension does not match driver");
  for (int s : absorbing)
    if (s < 0 || s >= n) throw std::invalid_argument("solve: absorbing state out of range");
  if (!(t_end > opts.t_start)) throw std::invalid_argument("solve: empty time interval");
  if (t_end > model.horizon + 1e-12) throw std::invalid_argument("solve: t_end beyond model horizon");

  double span = t_end - opts.t_start;
  if (opts.step < 0.0 || !std::isfinite(opts.step))
    throw std::invalid_argument("solve: step must be positive");
  double h_req = opts.step > 0.0 ? opts.step : 1e-4 * span;
  int m = std::max(1, static_cast<int>(std::ceil(span / h_req - 1e-9)));
  double h = span / m;

  ValueGrid grid;
  grid.model = model;
  grid.driver = driver;
  grid.t_start = opts.t_start;
  grid.t_end = t_end;
  grid.step = h;
  grid.dim = k;
  grid.absorbing = absorbing;
  grid.values.assign(static_cast<std::size_t>(m) + 1, Mat::Zero(k, n));

  std::vector<char> frozen(static_cast<std::size_t>(n), 0);
  for (int s : absorbing) frozen[static_cast<std::size_t>(s)] = 1;

  detail::ModelAlgebra algebra(model);

  Mat u(k, n);
  for (int i = 0; i < n; ++i) u.col(i) = terminal[static_cast<std::size_t>(i)];
  grid.values[static_cast<std::size_t>(m)] = u;

  auto rhs = [&](double tau, const Mat& state, double t_lo, double t_hi) {
    int p = detail::stage_piece(model, tau, t_lo, t_hi);
    const Mat& a = model.pieces[static_cast<std::size_t>(p)].a;
    Mat ua = state * a;
    Mat out(k, n);
    for (int i = 0; i < n; ++i) {
      if (frozen[static_cast<std::size_t>(i)]) {
        out.col(i).setZero();
        continue;
      }
      const PsiMatrix& pm = algebra.psi[static_cast<std::size_t>(p)][static_cast<std::size_t>(i)];
      Mat z = canonicalize_z(state, pm);
      StateContext ctx{tau, i, &a, &pm};
      out.col(i) = -driver(tau, state.col(i), z, ctx) - ua.col(i);
    }
    if (!out.allFinite()) throw std::runtime_error("solve: driver produced non-finite values");
    return out;
  };

  for (int step_idx = m; step_idx >= 1; --step_idx) {
    double t_hi = grid.time_at(step_idx);
    double t_lo = grid.time_at(step_idx - 1);
    double hh = t_hi - t_lo;
    Mat k1 = rhs(t_hi, u, t_lo, t_hi);
    Mat k2 = rhs(t_hi - 0.5 * hh, u - 0.5 * hh * k1, t_lo, t_hi);
    Mat k3 = rhs(t_hi - 0.5 * hh, u - 0.5 * hh * k2, t_lo, t_hi);
    Mat k4 = rhs(t_lo, u - hh * k3, t_lo, t_hi);
    u -= (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    grid.values[static_cast<std::size_t>(step_idx - 1)] = u;
  }
  return grid;
}

inline ValueGrid solve_markovian(const RateModel& model, const Driver& driver,
                                 const std::vector<Vec>& terminal, double t_end,
                                 const SolveOptions& opts = {}) {
  return solve_markovian_impl(model, driver, terminal, {}, t_end, opts);
}

/// Capped hitting-time terminal: T = (first entry into the absorbing set) and
/// T_max. Absorbed rows stay pinned at their terminal values at all times,
/// the indicator-extended driver of the stopping-time reduction; Z at an
/// absorbed state is zero.
inline ValueGrid solve_hitting_time(const RateModel& model, const Driver& driver,
                                    const std::vector<Vec>& terminal,
                                    const std::vector<int>& absorbing, double t_max,
                                    const SolveOptions& opts = {}) {
  std::vector<int> sorted = absorbing;
  std::sort(sorted.begin(), sorted.end());
  return solve_markovian_impl(model, driver, terminal, sorted, t_max, opts);
}

/// Canonical jump-exposure matrix at a grid time: Z(e_j - e_state) =
/// u(t, e_j) - u(t, e_state) on active targets, zero row sums.
inline Mat z_at(const ValueGrid& grid, double t, int state) {
  int k = grid.index_of(t);
  if (state < 0 || state >= grid.model.num_states)
    throw std::invalid_argument("z_at: state out of range");
  if (grid.is_absorbing(state)) return Mat::Zero(grid.dim, grid.model.num_states);
  double tau = grid.time_at(k);
  int p = detail::stage_piece(grid.model, tau, grid.t_start, grid.t_end);
  PsiMatrix pm = make_psi(grid.model.pieces[static_cast<std::size_t>(p)].a, state);
  return canonicalize_z(grid.at_index(k), pm);
}

/// g(X_T) + int F du - int Z dM along one path, which the backward equation
/// pins to u(0, X_0). Drift integrals use midpoint quadrature on grid cells
/// (coarsened by `stride`); the martingale integral splits into exact jump
/// bookkeeping minus the compensator quadrature.
inline Vec pathwise_backward_value(const ChainPath& path, const ValueGrid& grid, int stride = 1) {
  if (std::abs(path.horizon - grid.t_end) > 1e-9 || grid.t_start != 0.0)
    throw std::invalid_argument("pathwise_backward_value: path and grid horizons differ");
  if (path.initial_state < 0 || path.initial_state >= grid.model.num_states)
    throw std::invalid_argument("pathwise_backward_value: path/model mismatch");
  if (stride < 1) stride = 1;

  const int kdim = grid.dim;
  const double cell = grid.step * stride;
  Vec int_f = Vec::Zero(kdim);
  Vec comp_z = Vec::Zero(kdim);
  Vec jump_z = Vec::Zero(kdim);

  // values linearly interpolated between grid nodes, so the midpoint rule and
  // the jump bookkeeping are both second order in the grid step
  auto u_interp = [&](double t) -> Mat {
    double raw = (t - grid.t_start) / grid.step;
    int k0 = std::clamp(static_cast<int>(std::floor(raw)), 0, grid.num_steps() - 1);
    double w = std::clamp(raw - k0, 0.0, 1.0);
    return (1.0 - w) * grid.at_index(k0) + w * grid.at_index(k0 + 1);
  };

  // constant-state segments cut at jumps
  double seg_begin = 0.0;
  int state = path.initial_state;
  std::size_t ev = 0;
  while (seg_begin < grid.t_end) {
    double seg_end = ev < path.events.size() ? std::min(path.events[ev].time, grid.t_end) : grid.t_end;
    double pos = seg_begin;
    while (pos < seg_end - 1e-15) {
      double next = std::min(seg_end, (std::floor(pos / cell + 1e-9) + 1.0) * cell);
      double width = next - pos;
      double tau = 0.5 * (pos + next);
      int p = detail::stage_piece(grid.model, tau, grid.t_start, grid.t_end);
      const Mat& a = grid.model.pieces[static_cast<std::size_t>(p)].a;
      PsiMatrix pm = make_psi(a, state);
      Mat u = u_interp(tau);
      Mat z = grid.is_absorbing(state) ? Mat::Zero(kdim, grid.model.num_states)
                                       : canonicalize_z(u, pm);
      if (!grid.is_absorbing(state)) {
        StateContext ctx{tau, state, &a, &pm};
        int_f += grid.driver(tau, u.col(state), z, ctx) * width;
      }
      comp_z += z * a.col(state) * width;
      pos = next;
    }
    if (ev < path.events.size() && path.events[ev].time <= grid.t_end) {
      const JumpEvent& e = path.events[ev];
      int p = detail::stage_piece(grid.model, e.time, grid.t_start, grid.t_end);
      PsiMatrix pm = make_psi(grid.model.pieces[static_cast<std::size_t>(p)].a, state);
      Mat z = grid.is_absorbing(state) ? Mat::Zero(kdim, grid.model.num_states)
                                       : canonicalize_z(u_interp(e.time), pm);
      jump_z += z.col(e.to_state) - z.col(state);
      state = e.to_state;
      ++ev;
    }
    seg_begin = seg_end;
  }

  Vec g_t = grid.at_index(grid.num_steps()).col(path.state_at(grid.t_end));
  return g_t + int_f - (jump_z - comp_z);
}

/// Residual r = | u(0, X_0) - pathwise_backward_value |; r -> 0 as the grid
/// step shrinks.
inline double forward_residual(const ChainPath& path, const ValueGrid& grid, int stride = 1) {
  Vec u0 = grid.at_index(0).col(path.initial_state);
  return (u0 - pathwise_backward_value(path, grid, stride)).norm();
}

struct ForwardSdeResult {
  Vec terminal;
  std::vector<std::pair<double, Vec>> trajectory; // at 0, after each jump, and at T
};

/// Z as a predictable functional of the path: left-limit state and the count
/// of jumps strictly before t are supplied alongside the raw path.
using ZProcess = std::function<Mat(double t, const ChainPath& path, int state_before, int jumps_before)>;

/// Forward reading of the BSDE along one path:
///   dY = [-F(t, Y, Z) - Z A X_{t-}] dt between jumps,  dY = Z dX at jumps.
inline ForwardSdeResult forward_sde(const ChainPath& path, const RateModel& model, const Vec& y0,
                                    const ZProcess& z_process, const Driver& driver, double step) {
  require_valid(model);
  if (!(step > 0.0)) throw std::invalid_argument("forward_sde: step must be positive");
  detail::ModelAlgebra algebra(model);

  ForwardSdeResult result;
  Vec y = y0;
  result.trajectory.emplace_back(0.0, y);

  double seg_begin = 0.0;
  int state = path.initial_state;
  int jumps = 0;
  std::size_t ev = 0;
  while (seg_begin < path.horizon - 1e-15) {
    double seg_end = ev < path.events.size() ? path.events[ev].time : path.horizon;
    // sub-split at piece boundaries so each RK4 run sees constant A
    double pos = seg_begin;
    while (pos < seg_end - 1e-15) {
      int p = model.piece_index(std::nextafter(pos, model.horizon));
      double stop = std::min(seg_end, model.pieces[static_cast<std::size_t>(p)].t_end);
      const Mat& a = model.pieces[static_cast<std::size_t>(p)].a;
      const PsiMatrix& pm = algebra.psi[static_cast<std::size_t>(p)][static_cast<std::size_t>(state)];
      auto deriv = [&](double tau, const Vec& yy) {
        Mat z = z_process(tau, path, state, jumps);
        StateContext ctx{tau, state, &a, &pm};
        Vec out = -driver(tau, yy, z, ctx) - z * a.col(state);
        if (!out.allFinite()) throw std::runtime_error("forward_sde: non-finite derivative");
        return out;
      };
      int n_sub = std::max(1, static_cast<int>(std::ceil((stop - pos) / step - 1e-12)));
      double hh = (stop - pos) / n_sub;
      for (int s = 0; s < n_sub; ++s) {
        double t0 = pos + s * hh;
        Vec k1 = deriv(t0, y);
        Vec k2 = deriv(t0 + 0.5 * hh, y + 0.5 * hh * k1);
        Vec k3 = deriv(t0 + 0.5 * hh, y + 0.5 * hh * k2);
        Vec k4 = deriv(t0 + hh, y + hh * k3);
        y += (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      }
      pos = stop;
    }
    if (ev < path.events.size()) {
      const JumpEvent& e = path.events[ev];
      Mat z = z_process(e.time, path, state, jumps);
      y += z.col(e.to_state) - z.col(state);
      state = e.to_state;
      ++jumps;
      ++ev;
      result.trajectory.emplace_back(e.time, y);
    }
    seg_begin = seg_end;
  }
  result.terminal = y;
  result.trajectory.emplace_back(path.horizon, y);
  return result;
}

} // namespace mcbsde
