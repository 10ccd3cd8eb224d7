#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mcbsde/psi.hpp"

namespace mcbsde {

/// Everything a driver may consult about the current (t, state): the rate
/// matrix of the active piece, the psi algebra at the state, and the seminorm
/// (supplied, never recomputed by driver code).
struct StateContext {
  double t = 0.0;
  int state = 0;
  const Mat* a = nullptr;        // active rate matrix
  const PsiMatrix* psi = nullptr;

  double seminorm_sq_of(const Mat& z) const { return seminorm_sq(z, *psi); }
  double seminorm_of(const Mat& z) const { return std::sqrt(std::max(0.0, seminorm_sq_of(z))); }
  Vec rate_column() const { return a->col(state); }
};

/// F(t, y, Z) with its declared structure. The flags drive which comparison
/// and risk-measure hypotheses may be invoked; spot_check_driver_flags
/// samples them against the evaluator.
struct Driver {
  int dim = 1;              // K
  double lipschitz_c = 0.0; // declared constant of the well-posedness contract
  bool depends_on_y = false;
  bool depends_on_z = false;
  bool normalized_at_zero = false;   // F(t, y, 0) = 0 for all y
  bool component_separable = true;   // e_i* F depends on (e_i* y, e_i* Z) only
  bool y_component_separable = true; // e_i* F depends on e_i* y (and all of Z) only
  std::string name;
  std::function<Vec(double, const Vec&, const Mat&, const StateContext&)> eval;

  Vec operator()(double t, const Vec& y, const Mat& z, const StateContext& ctx) const {
    return eval(t, y, z, ctx);
  }
};

inline Driver make_zero_driver(int dim) {
  Driver d;
  d.dim = dim;
  d.lipschitz_c = 0.0;
  d.normalized_at_zero = true;
  d.name = "zero";
  d.eval = [dim](double, const Vec&, const Mat&, const StateContext&) { return Vec::Zero(dim); };
  return d;
}

/// Scalar F = -c ||Z||_{X_t-}; concave, positively homogeneous, Y-free.
inline Driver make_znorm_driver(double c) {
  Driver d;
  d.dim = 1;
  d.lipschitz_c = c;
  d.depends_on_z = true;
  d.normalized_at_zero = true;
  d.name = "znorm";
  d.eval = [c](double, const Vec&, const Mat& z, const StateContext& ctx) {
    Vec out(1);
    out(0) = -c * ctx.seminorm_of(z);
    return out;
  };
  return d;
}

/// Scalar F = -||Z||_{X_t-} - Z A X_t-, the Example 4.2 driver.
inline Driver make_zdrift_driver() {
  Driver d;
  d.dim = 1;
  d.lipschitz_c = 2.0; // |Z A x| = |Z psi x| <= ||Z|| sqrt(x* psi x), bounded rates
  d.depends_on_z = true;
  d.normalized_at_zero = true;
  d.name = "zdrift";
  d.eval = [](double, const Vec&, const Mat& z, const StateContext& ctx) {
    Vec out(1);
    out(0) = -ctx.seminorm_of(z) - (z * ctx.rate_column()).value();
    return out;
  };
  return d;
}

/// F = v(piece, state), a tabulated inhomogeneity.
inline Driver make_table_driver(std::vector<std::vector<Vec>> values, const RateModel& model) {
  if (values.size() != model.pieces.size())
    throw std::invalid_argument("table driver: one value block per rate piece required");
  int dim = static_cast<int>(values.front().front().size());
  bool all_zero = true;
  for (const auto& piece : values)
    for (const Vec& v : piece)
      if (v.norm() != 0.0) all_zero = false;
  Driver d;
  d.dim = dim;
  d.lipschitz_c = 0.0;
  d.normalized_at_zero = all_zero;
  d.name = "table";
  RateModel m = model;
  d.eval = [values = std::move(values), m](double t, const Vec&, const Mat&,
                                           const StateContext& ctx) {
    return values[static_cast<std::size_t>(m.piece_index(t))][static_cast<std::size_t>(ctx.state)];
  };
  return d;
}

/// Scalar F = beta * y, Z-free; the integrating-factor test driver.
inline Driver make_scalar_y_driver(double beta) {
  Driver d;
  d.dim = 1;
  d.lipschitz_c = std::abs(beta);
  d.depends_on_y = true;
  d.name = "scalar_y";
  d.eval = [beta](double, const Vec& y, const Mat&, const StateContext&) {
    return Vec(beta * y);
  };
  return d;
}

struct FlagCheckResult {
  bool ok = true;
  std::string detail;
};

/// Samples (t, y, Z, state) tuples and verifies every declared structural
/// flag against the evaluator. Used before property harnesses trust a flag.
inline FlagCheckResult spot_check_driver_flags(const Driver& d, const RateModel& model,
                                               int n_samples, std::uint64_t seed) {
  Rng rng(seed);
  const int n = model.num_states;
  const int k = d.dim;
  auto random_mat = [&](int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-2.0, 2.0);
    return m;
  };
  FlagCheckResult result;
  auto fail = [&](const std::string& what) {
    result.ok = false;
    if (!result.detail.empty()) result.detail += "; ";
    result.detail += what;
  };
  const double tol = 1e-12;
  for (int s = 0; s < n_samples && result.ok; ++s) {
    double t = rng.uniform(1e-6, model.horizon);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(model.rate_matrix(t), state);
    StateContext ctx{t, state, &model.rate_matrix(t), &pm};
    Vec y = random_mat(k, 1);
    Mat z1 = random_mat(k, n);
    Mat z2 = random_mat(k, n);
    if (!d.depends_on_z && (d(t, y, z1, ctx) - d(t, y, z2, ctx)).norm() > tol)
      fail("depends_on_z=false but F varies with Z");
    if (!d.depends_on_y && (d(t, y, z1, ctx) - d(t, random_mat(k, 1), z1, ctx)).norm() > tol)
      fail("depends_on_y=false but F varies with Y");
    if (d.normalized_at_zero && d(t, y, Mat::Zero(k, n), ctx).norm() > tol)
      fail("normalized_at_zero but F(t, y, 0) != 0");
    if (d.component_separable && k > 1) {
      int i = rng.uniform_int(k);
      Vec y2 = y;
      Mat z3 = z1;
      for (int r = 0; r < k; ++r) {
        if (r == i) continue;
        y2(r) = rng.uniform(-2.0, 2.0);
        z3.row(r) = random_mat(1, n);
      }
      if (std::abs(d(t, y, z1, ctx)(i) - d(t, y2, z3, ctx)(i)) > tol)
        fail("component_separable but e_i*F sees other components");
    }
    if (d.y_component_separable && k > 1) {
      int i = rng.uniform_int(k);
      Vec y2 = y;
      for (int r = 0; r < k; ++r)
        if (r != i) y2(r) = rng.uniform(-2.0, 2.0);
      if (std::abs(d(t, y, z1, ctx)(i) - d(t, y2, z1, ctx)(i)) > tol)
        fail("y_component_separable but e_i*F sees other Y components");
    }
  }
  return result;
}

} // namespace mcbsde
