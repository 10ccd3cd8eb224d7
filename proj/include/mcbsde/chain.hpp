#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "mcbsde/rng.hpp"
#include "mcbsde/types.hpp"

namespace mcbsde {

// Rate matrices use the column-generator convention throughout: entry (j, i)
// is the jump intensity from state i to state j, so every column sums to zero
// and probability vectors evolve by dp/dt = A p.

struct RatePiece {
  double t_end = 0.0; // piece covers (previous t_end, t_end]
  Mat a;              // N x N rate matrix, constant on the piece
};

struct RateModel {
  int num_states = 0;
  std::vector<RatePiece> pieces;
  double epsilon_r = 0.0; // nonzero off-diagonal rates lie in [eps_r, 1/eps_r]
  double horizon = 0.0;   // T_max; pieces cover (0, T_max]

  /// Index of the piece whose half-open interval contains t. A is left
  /// continuous, so pieces are closed on the right; t <= 0 maps to piece 0.
  int piece_index(double t) const {
    for (std::size_t p = 0; p + 1 < pieces.size(); ++p) {
      if (t <= pieces[p].t_end) return static_cast<int>(p);
    }
    return static_cast<int>(pieces.size()) - 1;
  }

  const Mat& rate_matrix(double t) const { return pieces[piece_index(t)].a; }

  double piece_begin(int p) const { return p == 0 ? 0.0 : pieces[p - 1].t_end; }
};

struct Violation {
  std::string what;
  int piece = -1;
  int row = -1;
  int col = -1;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;

  std::string summary() const {
    if (ok) return "ok";
    std::ostringstream os;
    const Violation& v = violations.front();
    os << v.what;
    if (v.piece >= 0) os << " [piece " << v.piece + 1;
    if (v.row >= 0) os << ", entry (" << v.row + 1 << "," << v.col + 1 << ")";
    if (v.piece >= 0) os << "]";
    return os.str();
  }
};

namespace detail {
inline constexpr double kColumnSumTol = 1e-9;
inline constexpr double kRateBoundTol = 1e-12;
}

inline ValidationReport validate_rate_model(const RateModel& m) {
  ValidationReport report;
  auto fail = [&](std::string what, int piece = -1, int row = -1, int col = -1) {
    report.ok = false;
    report.violations.push_back({std::move(what), piece, row, col});
  };

  if (m.num_states < 2) fail("num_states must be at least 2");
  if (!(m.epsilon_r > 0.0) || m.epsilon_r > 1.0) fail("epsilon_r must lie in (0, 1]");
  if (!(m.horizon > 0.0)) fail("horizon must be positive");
  if (m.pieces.empty()) {
    fail("no rate pieces given");
    return report;
  }

  double prev_end = 0.0;
  for (std::size_t p = 0; p < m.pieces.size(); ++p) {
    const RatePiece& piece = m.pieces[p];
    if (!(piece.t_end > prev_end)) fail("piece end times must be strictly increasing", static_cast<int>(p));
    prev_end = piece.t_end;
    if (piece.a.rows() != m.num_states || piece.a.cols() != m.num_states) {
      fail("rate matrix has wrong dimensions", static_cast<int>(p));
      continue;
    }
    for (int i = 0; i < m.num_states; ++i) {
      double colsum = piece.a.col(i).sum();
      if (!std::isfinite(colsum) || std::abs(colsum) > detail::kColumnSumTol)
        fail("column sum nonzero", static_cast<int>(p), i, i);
      for (int j = 0; j < m.num_states; ++j) {
        if (j == i) continue;
        double r = piece.a(j, i);
        if (r == 0.0) continue;
        if (!(r >= m.epsilon_r - detail::kRateBoundTol && r <= 1.0 / m.epsilon_r + detail::kRateBoundTol))
          fail("entry outside [eps_r, 1/eps_r] u {0}", static_cast<int>(p), j, i);
      }
    }
  }
  if (m.pieces.back().t_end < m.horizon - 1e-12)
    fail("pieces do not cover (0, horizon]");
  return report;
}

inline void require_valid(const RateModel& m) {
  ValidationReport r = validate_rate_model(m);
  if (!r.ok) throw std::invalid_argument("invalid rate model: " + r.summary());
}

/// Single-piece model, the common case in tests and fixtures.
inline RateModel make_model(const Mat& a, double epsilon_r, double horizon) {
  RateModel m;
  m.num_states = static_cast<int>(a.rows());
  m.pieces.push_back({horizon, a});
  m.epsilon_r = epsilon_r;
  m.horizon = horizon;
  return m;
}

struct JumpEvent {
  double time = 0.0; // in (0, horizon]
  int to_state = 0;
};

/// One realized trajectory; states are 0-based indices.
struct ChainPath {
  int initial_state = 0;
  std::vector<JumpEvent> events;
  double horizon = 0.0;

  /// X_{t-}: state an instant before t.
  int state_before(double t) const {
    int s = initial_state;
    for (const JumpEvent& e : events) {
      if (e.time < t) s = e.to_state; else break;
    }
    return s;
  }

  /// X_t for the cadlag path (jump at t already applied).
  int state_at(double t) const {
    int s = initial_state;
    for (const JumpEvent& e : events) {
      if (e.time <= t) s = e.to_state; else break;
    }
    return s;
  }

  /// J_t: number of jumps strictly before t.
  int jumps_before(double t) const {
    int n = 0;
    for (const JumpEvent& e : events) {
      if (e.time < t) ++n; else break;
    }
    return n;
  }
};

inline ValidationReport validate_path(const ChainPath& path, const RateModel& model) {
  ValidationReport report;
  auto fail = [&](std::string what) {
    report.ok = false;
    report.violations.push_back({std::move(what)});
  };
  if (path.initial_state < 0 || path.initial_state >= model.num_states)
    fail("initial state out of range");
  double prev = 0.0;
  int state = path.initial_state;
  for (const JumpEvent& e : path.events) {
    if (!(e.time > prev)) fail("jump times not strictly increasing");
    if (!(e.time <= path.horizon)) fail("jump beyond horizon");
    if (e.to_state == state) fail("self-jump");
    if (e.to_state < 0 || e.to_state >= model.num_states) fail("jump target out of range");
    else if (!(model.rate_matrix(e.time)(e.to_state, state) > 0.0))
      fail("jump with zero transition rate"); // Lemma 3.14 would be violated
    prev = e.time;
    state = e.to_state;
  }
  return report;
}

/// Exact simulation: within each constant-rate piece the holding time is
/// exponential and the target is drawn proportionally to the rates. A jump
/// landing exactly on a piece boundary belongs to the earlier piece (left
/// continuity of A).
inline ChainPath simulate_path(const RateModel& model, int initial_state, double horizon,
                               std::uint64_t seed) {
  require_valid(model);
  if (initial_state < 0 || initial_state >= model.num_states)
    throw std::invalid_argument("simulate_path: initial state out of range");
  if (!(horizon > 0.0) || horizon > model.horizon + 1e-12)
    throw std::invalid_argument("simulate_path: horizon out of range");

  Rng rng(seed);
  ChainPath path;
  path.initial_state = initial_state;
  path.horizon = horizon;

  double t = 0.0;
  int state = initial_state;
  std::size_t piece = 0;
  std::vector<double> weights(model.num_states);
  while (t < horizon) {
    const Mat& a = model.pieces[piece].a;
    double boundary = std::min(model.pieces[piece].t_end, horizon);
    double rate = -a(state, state);
    if (rate <= 0.0) {
      t = boundary;
    } else {
      double hold = rng.exponential(rate);
      if (t + hold <= boundary) {
        t += hold;
        for (int j = 0; j < model.num_states; ++j)
          weights[j] = (j == state) ? 0.0 : std::max(0.0, a(j, state));
        state = rng.categorical(weights);
        path.events.push_back({t, state});
        continue;
      }
      t = boundary;
    }
    if (piece + 1 < model.pieces.size() && t >= model.pieces[piece].t_end) ++piece;
    if (t >= horizon) break;
  }
  return path;
}

/// M_t = X_t - X_0 - int A_u X_{u-} du sampled at the grid times; the
/// compensator integral is evaluated in closed form on every constant
/// segment, so the only inexactness is the floating point of the sums.
inline std::vector<Vec> martingale_increments(const ChainPath& path, const RateModel& model,
                                              const std::vector<double>& grid) {
  for (double t : grid)
    if (t < 0.0 || t > path.horizon + 1e-12)
      throw std::invalid_argument("martingale_increments: grid point beyond horizon");

  const int n = model.num_states;
  std::vector<Vec> out;
  out.reserve(grid.size());

  for (double t : grid) {
    Vec integral = Vec::Zero(n);
    // walk segments cut at jumps and piece boundaries up to t
    double pos = 0.0;
    int state = path.initial_state;
    std::size_t ev = 0;
    while (pos < t) {
      while (ev < path.events.size() && path.events[ev].time <= pos) {
        state = path.events[ev].to_state;
        ++ev;
      }
      double seg_end = t;
      if (ev < path.events.size()) seg_end = std::min(seg_end, path.events[ev].time);
      int p = model.piece_index(std::nextafter(pos, model.horizon));
      seg_end = std::min(seg_end, model.pieces[p].t_end);
      if (seg_end > pos) integral += model.pieces[p].a.col(state) * (seg_end - pos);
      pos = seg_end;
    }
    Vec m = Vec::Zero(n);
    m(path.state_at(t)) += 1.0;
    m(path.initial_state) -= 1.0;
    m -= integral;
    out.push_back(std::move(m));
  }
  return out;
}

/// P(s, t): entry (j, i) is P(X_t = j | X_s = i); ordered product of the
/// per-piece matrix exponentials.
inline Mat transition_matrix(const RateModel& model, double s, double t) {
  if (s > t) throw std::invalid_argument("transition_matrix: s > t");
  const int n = model.num_states;
  Mat p = Mat::Identity(n, n);
  if (s == t) return p;
  double pos = s;
  while (pos < t) {
    int idx = model.piece_index(std::nextafter(pos, model.horizon));
    double seg_end = std::min(model.pieces[idx].t_end, t);
    if (seg_end > pos) {
      Mat step = (model.pieces[idx].a * (seg_end - pos)).exp();
      p = step * p; // later pieces act on the left
    }
    pos = seg_end;
  }
  return p;
}

/// States reachable from `from_state` with positive probability over (s, t],
/// via graph closure through each piece's positive-rate edges in time order.
inline std::vector<int> reachable_states(const RateModel& model, int from_state, double s, double t) {
  const int n = model.num_states;
  std::vector<char> reach(n, 0);
  reach[from_state] = 1;
  for (std::size_t p = 0; p < model.pieces.size(); ++p) {
    double begin = std::max(model.piece_begin(static_cast<int>(p)), s);
    double end = std::min(model.pieces[p].t_end, t);
    if (!(end > begin)) continue;
    const Mat& a = model.pieces[p].a;
    bool grew = true;
    while (grew) {
      grew = false;
      for (int i = 0; i < n; ++i) {
        if (!reach[i]) continue;
        for (int j = 0; j < n; ++j) {
          if (!reach[j] && a(j, i) > 0.0) {
            reach[j] = 1;
            grew = true;
          }
        }
      }
    }
  }
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (reach[i]) out.push_back(i);
  return out;
}

/// Random model with nonzero rates in [eps_r, 1/eps_r] and an optional chance
/// of zeroed edges; used by the verify suite and tests.
inline RateModel make_random_model(int num_states, std::uint64_t seed, double horizon = 1.0,
                                   int n_pieces = 1, double zero_edge_prob = 0.0) {
  Rng rng(seed);
  RateModel m;
  m.num_states = num_states;
  m.epsilon_r = 0.2;
  m.horizon = horizon;
  for (int p = 0; p < n_pieces; ++p) {
    Mat a = Mat::Zero(num_states, num_states);
    for (int i = 0; i < num_states; ++i) {
      double total = 0.0;
      for (int j = 0; j < num_states; ++j) {
        if (j == i) continue;
        if (zero_edge_prob > 0.0 && rng.uniform() < zero_edge_prob) continue;
        double r = rng.uniform(m.epsilon_r, 1.0 / m.epsilon_r);
        a(j, i) = r;
        total += r;
      }
      a(i, i) = -total;
    }
    m.pieces.push_back({horizon * static_cast<double>(p + 1) / n_pieces, a});
  }
  return m;
}

} // namespace mcbsde
