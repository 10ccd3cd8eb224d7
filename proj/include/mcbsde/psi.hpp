#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mcbsde/chain.hpp"
#include "mcbsde/types.hpp"

namespace mcbsde {

// The quadratic covariation density of the chain martingale at state x is
//   psi = diag(A x) - A diag(x) - diag(x) A*.
// It is symmetric PSD with zero row and column sums, diagonal away from the
// row/column of x, and its range is spanned by {e_j - e_x : rate x->j > 0}.
// All of the structure below exploits that form; nothing here falls back to a
// generic factorization.

struct PsiMatrix {
  Mat psi;  // N x N
  int state = 0;
  Mat a;    // rate matrix snapshot the psi was built from

  int size() const { return static_cast<int>(psi.rows()); }

  /// Targets j != state with positive rate; these index the range basis
  /// vectors e_j - e_state.
  std::vector<int> active_targets() const {
    std::vector<int> out;
    for (int j = 0; j < size(); ++j)
      if (j != state && a(j, state) > 0.0) out.push_back(j);
    return out;
  }
};

inline PsiMatrix make_psi(const Mat& a, int state) {
  const int n = static_cast<int>(a.rows());
  if (state < 0 || state >= n) throw std::invalid_argument("make_psi: state out of range");
  Vec col = a.col(state);
  Mat psi = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) psi(j, j) = col(j);
  psi.col(state) -= col;
  psi.row(state) -= col.transpose();
  return {std::move(psi), state, a};
}

inline PsiMatrix psi_at(const RateModel& model, double t, int state) {
  require_valid(model);
  if (state < 0 || state >= model.num_states)
    throw std::invalid_argument("psi_at: state out of range");
  if (!(t > 0.0) || t > model.horizon + 1e-12)
    throw std::invalid_argument("psi_at: time out of (0, T_max]");
  return make_psi(model.rate_matrix(t), state);
}

enum class SeminormForm { trace, jump };

/// Squared stochastic seminorm ||Z||^2_{X_t-}. The trace form Tr(Z psi Z*)
/// accepts any Z; the jump form sum_j (e_j* A x) [Z (e_j - x)]^2 is the
/// Lemma 3.8 expansion and is quoted for canonical Z (it agrees on active
/// targets either way, since a_j = 0 kills the rest).
inline double seminorm_sq(const Mat& z, const PsiMatrix& pm, SeminormForm form = SeminormForm::trace) {
  if (z.cols() != pm.size()) throw std::invalid_argument("seminorm_sq: dimension mismatch");
  if (form == SeminormForm::trace) return (z * pm.psi * z.transpose()).trace();
  double total = 0.0;
  for (int j : pm.active_targets()) {
    double a_j = pm.a(j, pm.state);
    total += a_j * (z.col(j) - z.col(pm.state)).squaredNorm();
  }
  return total;
}

namespace detail {

// E = (I + 11*)^{-1} = I - 11*/(m+1) on the active coordinates.
inline Mat active_gram_inverse(int m) {
  return Mat::Identity(m, m) - Mat::Constant(m, m, 1.0 / (m + 1));
}

// Embeds an m x m block W as B W B* with B's columns e_{J[p]} - e_x. Border
// entries are written as negated partial sums so the zero row/column sums
// hold exactly in floating point.
inline Mat embed_on_active(const Mat& w, const std::vector<int>& active, int state, int n) {
  const int m = static_cast<int>(w.rows());
  Mat out = Mat::Zero(n, n);
  double corner = 0.0;
  for (int p = 0; p < m; ++p) {
    double row_sum = 0.0;
    for (int q = 0; q < m; ++q) {
      out(active[p], active[q]) = w(p, q);
      row_sum += w(p, q);
    }
    out(active[p], state) = -row_sum;
    corner += row_sum;
  }
  for (int q = 0; q < m; ++q) {
    double col_sum = 0.0;
    for (int p = 0; p < m; ++p) col_sum += w(p, q);
    out(state, active[q]) = -col_sum;
  }
  out(state, state) = corner;
  return out;
}

} // namespace detail

/// Moore-Penrose inverse by the structured route: with psi = B D B* (D the
/// diagonal of active rates, B the e_j - e_x basis), psi+ = B E D^{-1} E B*
/// where E = (B*B)^{-1}. Only strictly positive rates are inverted, so no
/// singular-value tolerance enters. An all-zero psi maps to the zero matrix.
inline Mat pseudoinverse(const PsiMatrix& pm) {
  const int n = pm.size();
  std::vector<int> active = pm.active_targets();
  const int m = static_cast<int>(active.size());
  if (m == 0) return Mat::Zero(n, n);
  Mat e = detail::active_gram_inverse(m);
  Mat dinv = Mat::Zero(m, m);
  for (int p = 0; p < m; ++p) dinv(p, p) = 1.0 / pm.a(active[p], pm.state);
  Mat w = e * dinv * e;
  return detail::embed_on_active(w, active, pm.state, n);
}

/// Orthogonal projection psi psi+ onto span{e_j - e_x : j active}; equals
/// B E B* in the factorization above.
inline Mat range_projection(const PsiMatrix& pm) {
  const int n = pm.size();
  std::vector<int> active = pm.active_targets();
  const int m = static_cast<int>(active.size());
  if (m == 0) return Mat::Zero(n, n);
  return detail::embed_on_active(detail::active_gram_inverse(m), active, pm.state, n);
}

/// Z psi psi+, built from the active jump differences d_j = Z(e_j - x): the
/// canonical representative is (d E) placed on the active columns with the
/// state column balancing each row to zero. Rows with all differences zero
/// map to exactly zero (Lemma 3.6).
inline Mat canonicalize_z(const Mat& z, const PsiMatrix& pm) {
  if (z.cols() != pm.size()) throw std::invalid_argument("canonicalize_z: dimension mismatch");
  const int k = static_cast<int>(z.rows());
  const int n = pm.size();
  std::vector<int> active = pm.active_targets();
  const int m = static_cast<int>(active.size());
  Mat out = Mat::Zero(k, n);
  if (m == 0) return out;
  Mat d(k, m);
  for (int p = 0; p < m; ++p) d.col(p) = z.col(active[p]) - z.col(pm.state);
  Mat c = d - (d.rowwise().sum() / (m + 1)) * RowVec::Ones(m); // d * E
  for (int p = 0; p < m; ++p) out.col(active[p]) = c.col(p);
  out.col(pm.state) = -c.rowwise().sum();
  return out;
}

/// Strict upper bound eps_r^{3/2} N^{-3/2} on the admissible epsilon of
/// Lemma 3.10 and the comparison theorems.
inline double epsilon_threshold(double epsilon_r, int num_states) {
  if (!(epsilon_r > 0.0) || epsilon_r > 1.0)
    throw std::invalid_argument("epsilon_threshold: epsilon_r out of (0, 1]");
  if (num_states < 2) throw std::invalid_argument("epsilon_threshold: need at least 2 states");
  return std::pow(epsilon_r, 1.5) * std::pow(static_cast<double>(num_states), -1.5);
}

struct Lemma310Result {
  bool premise_holds = false;    // (e_j* A x) Z (e_j - x) >= -eps ||Z|| for all j
  bool conclusion_holds = false; // Z psi x <= -eps ||Z||
};

inline Lemma310Result check_lemma_3_10(const RowVec& z, const PsiMatrix& pm, double epsilon_r,
                                       double eps) {
  if (!(eps > 0.0) || !(eps < epsilon_threshold(epsilon_r, pm.size())))
    throw std::invalid_argument("check_lemma_3_10: eps outside (0, eps_r^{3/2} N^{-3/2})");
  double norm = std::sqrt(std::max(0.0, seminorm_sq(z, pm)));
  Lemma310Result result;
  result.premise_holds = true;
  for (int j : pm.active_targets()) {
    double a_j = pm.a(j, pm.state);
    double term = a_j * (z(j) - z(pm.state));
    if (term < -eps * norm) {
      result.premise_holds = false;
      break;
    }
  }
  double drift = (z * pm.psi.col(pm.state)).value();
  result.conclusion_holds = drift <= -eps * norm;
  return result;
}

} // namespace mcbsde
