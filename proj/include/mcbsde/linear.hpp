#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "mcbsde/chain.hpp"
#include "mcbsde/driver.hpp"
#include "mcbsde/parallel.hpp"
#include "mcbsde/psi.hpp"

namespace mcbsde {

// Linear BSDE  Y_t - int [phi + beta Y + alpha Z* gamma] du + int Z dM = Q.
// The Z coupling (alpha Z^T) gamma in R^K is the unique reading consistent
// with the adjoint SDE's K x K updates I + alpha psi+ dM gamma*.

/// Coefficients on one rate piece; alpha is per state.
struct LinearCoeffs {
  std::vector<Mat> alpha; // one K x N block per state
  Mat beta;               // K x K
  Vec gamma;              // K
  Vec phi;                // K
};

struct LinearDriverSpec {
  int dim = 1;                      // K
  std::vector<LinearCoeffs> pieces; // aligned with the RateModel pieces
};

inline void require_aligned(const LinearDriverSpec& spec, const RateModel& model) {
  if (spec.pieces.size() != model.pieces.size())
    throw std::invalid_argument("linear spec: piece count must match the rate model");
  for (const LinearCoeffs& c : spec.pieces) {
    if (static_cast<int>(c.alpha.size()) != model.num_states)
      throw std::invalid_argument("linear spec: one alpha block per state required");
    for (const Mat& a : c.alpha) {
      if (a.rows() != spec.dim || a.cols() != model.num_states || !a.allFinite())
        throw std::invalid_argument("linear spec: bad alpha block");
    }
    if (c.beta.rows() != spec.dim || c.beta.cols() != spec.dim || !c.beta.allFinite())
      throw std::invalid_argument("linear spec: bad beta");
    if (static_cast<int>(c.gamma.size()) != spec.dim || !c.gamma.allFinite())
      throw std::invalid_argument("linear spec: bad gamma");
    if (static_cast<int>(c.phi.size()) != spec.dim || !c.phi.allFinite())
      throw std::invalid_argument("linear spec: bad phi");
  }
}

/// Spec as an evaluable driver for the Markovian solver.
inline Driver make_linear_driver(const LinearDriverSpec& spec, const RateModel& model) {
  require_aligned(spec, model);
  Driver d;
  d.dim = spec.dim;
  d.name = "linear";
  bool any_beta = false, any_z = false, any_phi = false;
  bool beta_diag = true, z_separable = true;
  double c = 0.0;
  for (const LinearCoeffs& piece : spec.pieces) {
    if (piece.beta.norm() > 0.0) any_beta = true;
    if (piece.phi.norm() > 0.0) any_phi = true;
    for (int i = 0; i < spec.dim; ++i)
      for (int j = 0; j < spec.dim; ++j)
        if (i != j && piece.beta(i, j) != 0.0) beta_diag = false;
    double alpha_norm = 0.0;
    for (const Mat& a : piece.alpha) {
      alpha_norm = std::max(alpha_norm, a.norm());
      for (int i = 0; i < spec.dim; ++i)
        if (a.row(i).norm() > 0.0)
          for (int r = 0; r < spec.dim; ++r)
            if (r != i && piece.gamma(r) != 0.0) z_separable = false;
    }
    if (alpha_norm * piece.gamma.norm() > 0.0) any_z = true;
    c = std::max(c, piece.beta.norm() + alpha_norm * piece.gamma.norm() / std::sqrt(model.epsilon_r));
  }
  d.depends_on_y = any_beta;
  d.depends_on_z = any_z;
  d.normalized_at_zero = !any_beta && !any_phi;
  d.component_separable = beta_diag && z_separable;
  d.y_component_separable = beta_diag;
  d.lipschitz_c = c;
  RateModel m = model;
  LinearDriverSpec s = spec;
  d.eval = [s, m](double t, const Vec& y, const Mat& z, const StateContext& ctx) {
    const LinearCoeffs& piece = s.pieces[static_cast<std::size_t>(m.piece_index(t))];
    return Vec(piece.phi + piece.beta * y +
               piece.alpha[static_cast<std::size_t>(ctx.state)] * z.transpose() * piece.gamma);
  };
  return d;
}

/// Product integral Pi_(s,t] (I + H_u du) approximated by n sequential
/// exponential-midpoint factors exp(int_sub H du); second order in n and
/// exact when H is constant.
inline Mat product_integral(const std::function<Mat(double)>& h, double s, double t, int n) {
  if (!(s < t)) throw std::invalid_argument("product_integral: need s < t");
  if (n < 1) throw std::invalid_argument("product_integral: need n >= 1");
  double width = (t - s) / n;
  Mat g;
  for (int i = 0; i < n; ++i) {
    Mat factor = (h(s + (i + 0.5) * width) * width).exp();
    g = (i == 0) ? factor : Mat(g * factor);
  }
  return g;
}

/// Reversed product of exp(-int_sub H du): the inverse of product_integral
/// with the same subdivision.
inline Mat product_integral_inverse(const std::function<Mat(double)>& h, double s, double t, int n) {
  if (!(s < t)) throw std::invalid_argument("product_integral_inverse: need s < t");
  if (n < 1) throw std::invalid_argument("product_integral_inverse: need n >= 1");
  double width = (t - s) / n;
  Mat g;
  for (int i = n - 1; i >= 0; --i) {
    Mat factor = (-h(s + (i + 0.5) * width) * width).exp();
    g = (i == n - 1) ? factor : Mat(g * factor);
  }
  return g;
}

namespace detail {

/// Per (piece, state) adjoint ingredients: the inter-jump generator
/// H = beta - alpha psi+ A x gamma* and the jump updates I + alpha psi+ (e_j - x) gamma*.
struct AdjointIngredients {
  Mat h;                        // K x K
  std::vector<Mat> jump_update; // per target state (identity where inactive)
  std::vector<char> active;
};

struct PreparedLinear {
  int dim = 0;
  std::vector<std::vector<AdjointIngredients>> by_piece_state;
  std::vector<Vec> phi; // per piece

  PreparedLinear(const LinearDriverSpec& spec, const RateModel& model) {
    require_aligned(spec, model);
    dim = spec.dim;
    const int n = model.num_states;
    by_piece_state.resize(model.pieces.size());
    for (std::size_t p = 0; p < model.pieces.size(); ++p) {
      phi.push_back(spec.pieces[p].phi);
      by_piece_state[p].resize(static_cast<std::size_t>(n));
      const Mat& a = model.pieces[p].a;
      for (int x = 0; x < n; ++x) {
        PsiMatrix pm = make_psi(a, x);
        Mat pinv = pseudoinverse(pm);
        const Mat& alpha = spec.pieces[p].alpha[static_cast<std::size_t>(x)];
        const Vec& gamma = spec.pieces[p].gamma;
        AdjointIngredients ing;
        ing.h = spec.pieces[p].beta - (alpha * pinv * a.col(x)) * gamma.transpose();
        ing.active.assign(static_cast<std::size_t>(n), 0);
        ing.jump_update.assign(static_cast<std::size_t>(n), Mat::Identity(dim, dim));
        for (int j : pm.active_targets()) {
          ing.active[static_cast<std::size_t>(j)] = 1;
          Vec diff = Vec::Zero(n);
          diff(j) = 1.0;
          diff(x) = -1.0;
          ing.jump_update[static_cast<std::size_t>(j)] =
              Mat::Identity(dim, dim) + (alpha * pinv * diff) * gamma.transpose();
        }
        by_piece_state[p][static_cast<std::size_t>(x)] = std::move(ing);
      }
    }
  }
};

/// exp([[H, I], [0, 0]] len): top-left is the transfer exp(H len), top-right
/// the integral int_0^len exp(H s) ds used for the phi term.
inline void transfer_and_integral(const Mat& h, double len, Mat& transfer, Mat& integral) {
  const int k = static_cast<int>(h.rows());
  Mat block = Mat::Zero(2 * k, 2 * k);
  block.topLeftCorner(k, k) = h * len;
  block.topRightCorner(k, k) = Mat::Identity(k, k) * len;
  Mat e = block.exp();
  transfer = e.topLeftCorner(k, k);
  integral = e.topRightCorner(k, k);
}

} // namespace detail

/// Piecewise representation of the adjoint Gamma along one path, anchored at
/// t_start with Gamma = I there. Inter-jump transfers are the constant-H
/// product integrals; each jump appends I + alpha psi+ DX gamma*.
struct AdjointSegment {
  double t_begin = 0.0;
  double t_end = 0.0;
  Mat h;        // generator on the segment
  Mat transfer; // exp(h * (t_end - t_begin))
  bool jump_at_end = false;
  Mat jump_update;
};

struct AdjointPath {
  double t_start = 0.0;
  int dim = 0;
  std::vector<AdjointSegment> segments;

  /// Gamma_{t_start}^s; jumps at exactly s are included (sum over t < u <= s).
  Mat at(double s) const {
    Mat g = Mat::Identity(dim, dim);
    for (const AdjointSegment& seg : segments) {
      if (s <= seg.t_begin + 1e-15) break;
      if (s >= seg.t_end - 1e-15) {
        g = g * seg.transfer;
        if (seg.jump_at_end && s >= seg.t_end - 1e-15) g = g * seg.jump_update;
      } else {
        g = g * (seg.h * (s - seg.t_begin)).exp();
        break;
      }
    }
    return g;
  }

  /// (Gamma_{t_start}^s)^{-1} assembled as the reversed product of inverse
  /// factors, the exponential form of the reversed-product inverse.
  Mat inverse_at(double s) const {
    std::vector<Mat> factors;
    for (const AdjointSegment& seg : segments) {
      if (s <= seg.t_begin + 1e-15) break;
      if (s >= seg.t_end - 1e-15) {
        factors.push_back((-seg.h * (seg.t_end - seg.t_begin)).exp());
        if (seg.jump_at_end) {
          Eigen::FullPivLU<Mat> lu(seg.jump_update);
          if (!lu.isInvertible())
            throw std::domain_error("adjoint inverse: singular jump update");
          factors.push_back(lu.inverse());
        }
      } else {
        factors.push_back((-seg.h * (s - seg.t_begin)).exp());
        break;
      }
    }
    Mat g = Mat::Identity(dim, dim);
    for (auto it = factors.rbegin(); it != factors.rend(); ++it) g = g * (*it);
    return g;
  }
};

inline AdjointPath adjoint_on_path(const ChainPath& path, const LinearDriverSpec& spec,
                                   const RateModel& model, double t_start) {
  require_aligned(spec, model);
  if (t_start < 0.0 || t_start >= path.horizon)
    throw std::invalid_argument("adjoint_on_path: t_start outside [0, T)");
  ValidationReport pv = validate_path(path, model);
  if (!pv.ok) throw std::invalid_argument("adjoint_on_path: " + pv.summary());

  detail::PreparedLinear prep(spec, model);
  AdjointPath out;
  out.t_start = t_start;
  out.dim = spec.dim;

  double pos = t_start;
  int state = path.state_at(t_start);
  std::size_t ev = 0;
  while (ev < path.events.size() && path.events[ev].time <= t_start) ++ev;
  while (pos < path.horizon - 1e-15) {
    double jump_time = ev < path.events.size() ? path.events[ev].time : path.horizon;
    int p = model.piece_index(std::nextafter(pos, model.horizon));
    double stop = std::min({jump_time, model.pieces[static_cast<std::size_t>(p)].t_end, path.horizon});
    const detail::AdjointIngredients& ing =
        prep.by_piece_state[static_cast<std::size_t>(p)][static_cast<std::size_t>(state)];
    AdjointSegment seg;
    seg.t_begin = pos;
    seg.t_end = stop;
    seg.h = ing.h;
    seg.transfer = (ing.h * (stop - pos)).exp();
    if (ev < path.events.size() && stop == path.events[ev].time) {
      seg.jump_at_end = true;
      seg.jump_update = ing.jump_update[static_cast<std::size_t>(path.events[ev].to_state)];
      state = path.events[ev].to_state;
      ++ev;
    }
    out.segments.push_back(std::move(seg));
    pos = stop;
  }
  return out;
}

struct JumpConditionVerdict {
  int piece = 0;
  int state = 0;
  int target = 0;
  bool invertible = true;
  bool nonnegative = true;
};

struct DriftConditionVerdict {
  int piece = 0;
  int state = 0;
  double min_offdiag = 0.0;
  bool nonnegative_offdiag = true;
};

/// Hypothesis report for the closed form (3.10) and the nonnegativity of
/// Gamma: invertibility of I + alpha psi+ (e_j - x) gamma* per active (state,
/// j), entrywise nonnegativity of the same, and nonnegative off-diagonals of
/// beta - alpha psi+ A x gamma*. In the scalar case invertibility coincides
/// with alpha psi+ (e_j - x) gamma > -1.
struct LinearConditionReport {
  bool invertibility_ok = true;
  bool jump_nonneg_ok = true;
  bool drift_offdiag_ok = true;
  std::vector<JumpConditionVerdict> jump_checks;
  std::vector<DriftConditionVerdict> drift_checks;

  bool theorem_3_16_ok() const { return jump_nonneg_ok && drift_offdiag_ok; }

  std::string first_invertibility_failure() const {
    for (const JumpConditionVerdict& v : jump_checks)
      if (!v.invertible) {
        std::ostringstream os;
        os << "singular jump update at piece " << v.piece + 1 << ", state " << v.state + 1
           << ", target " << v.target + 1;
        return os.str();
      }
    return "";
  }
};

inline LinearConditionReport check_linear_conditions(const LinearDriverSpec& spec,
                                                     const RateModel& model) {
  detail::PreparedLinear prep(spec, model);
  LinearConditionReport report;
  const int n = model.num_states;
  for (std::size_t p = 0; p < model.pieces.size(); ++p) {
    for (int x = 0; x < n; ++x) {
      const detail::AdjointIngredients& ing = prep.by_piece_state[p][static_cast<std::size_t>(x)];
      DriftConditionVerdict drift;
      drift.piece = static_cast<int>(p);
      drift.state = x;
      drift.min_offdiag = 0.0;
      for (int i = 0; i < spec.dim; ++i)
        for (int j = 0; j < spec.dim; ++j)
          if (i != j) drift.min_offdiag = std::min(drift.min_offdiag, ing.h(i, j));
      drift.nonnegative_offdiag = drift.min_offdiag >= -1e-12;
      if (!drift.nonnegative_offdiag) report.drift_offdiag_ok = false;
      report.drift_checks.push_back(drift);
      for (int j = 0; j < n; ++j) {
        if (!ing.active[static_cast<std::size_t>(j)]) continue;
        JumpConditionVerdict v;
        v.piece = static_cast<int>(p);
        v.state = x;
        v.target = j;
        Eigen::FullPivLU<Mat> lu(ing.jump_update[static_cast<std::size_t>(j)]);
        lu.setThreshold(1e-9);
        v.invertible = lu.isInvertible();
        v.nonnegative = ing.jump_update[static_cast<std::size_t>(j)].minCoeff() >= -1e-12;
        if (!v.invertible) report.invertibility_ok = false;
        if (!v.nonnegative) report.jump_nonneg_ok = false;
        report.jump_checks.push_back(v);
      }
    }
  }
  return report;
}

struct McEstimate {
  Vec mean;
  Vec std_error;
  int n_paths = 0;
  std::uint64_t seed = 0;
};

/// Monte Carlo estimate of Y_0 = E[Gamma_0^T Q + int Gamma_0^u phi du] along
/// simulated paths. Refuses to run when the invertibility hypothesis of the
/// closed form fails. Transfers and phi integrals are segment-exact (one
/// block exponential per constant segment), so the only error is sampling.
inline McEstimate closed_form_estimate(const LinearDriverSpec& spec, const std::vector<Vec>& terminal,
                                       const RateModel& model, int x0, double t_end, int n_paths,
                                       std::uint64_t seed) {
  require_valid(model);
  require_aligned(spec, model);
  if (static_cast<int>(terminal.size()) != model.num_states)
    throw std::invalid_argument("closed_form_estimate: one terminal vector per state required");
  if (n_paths < 2) throw std::invalid_argument("closed_form_estimate: need at least 2 paths");
  LinearConditionReport cond = check_linear_conditions(spec, model);
  if (!cond.invertibility_ok)
    throw std::domain_error("closed_form_estimate: invertibility hypothesis fails (" +
                            cond.first_invertibility_failure() + ")");

  detail::PreparedLinear prep(spec, model);
  const int k = spec.dim;
  std::vector<Vec> samples(static_cast<std::size_t>(n_paths));
  parallel_for(n_paths, [&](int idx) {
    Rng rng = Rng::for_path(seed, static_cast<std::uint64_t>(idx));
    ChainPath path = simulate_path(model, x0, t_end, rng.next_u64());
    Mat g = Mat::Identity(k, k);
    Vec integ = Vec::Zero(k);
    double pos = 0.0;
    int state = x0;
    std::size_t ev = 0;
    while (pos < t_end - 1e-15) {
      double jump_time = ev < path.events.size() ? path.events[ev].time : t_end;
      int p = model.piece_index(std::nextafter(pos, model.horizon));
      double stop = std::min({jump_time, model.pieces[static_cast<std::size_t>(p)].t_end, t_end});
      const detail::AdjointIngredients& ing =
          prep.by_piece_state[static_cast<std::size_t>(p)][static_cast<std::size_t>(state)];
      Mat transfer, integral;
      detail::transfer_and_integral(ing.h, stop - pos, transfer, integral);
      integ += g * integral * prep.phi[static_cast<std::size_t>(p)];
      g = g * transfer;
      if (ev < path.events.size() && stop == path.events[ev].time) {
        g = g * ing.jump_update[static_cast<std::size_t>(path.events[ev].to_state)];
        state = path.events[ev].to_state;
        ++ev;
      }
      pos = stop;
    }
    samples[static_cast<std::size_t>(idx)] = g * terminal[static_cast<std::size_t>(state)] + integ;
  });

  McEstimate est;
  est.n_paths = n_paths;
  est.seed = seed;
  est.mean = Vec::Zero(k);
  for (const Vec& s : samples) est.mean += s;
  est.mean /= n_paths;
  Vec var = Vec::Zero(k);
  for (const Vec& s : samples) var += (s - est.mean).cwiseAbs2();
  var /= (n_paths - 1);
  est.std_error = (var / n_paths).cwiseSqrt();
  return est;
}

} // namespace mcbsde
