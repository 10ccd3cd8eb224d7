#include <gtest/gtest.h>

#include <cmath>

#include "mcbsde/linear.hpp"
#include "mcbsde/solver.hpp"
#include "oracles.hpp"

using namespace mcbsde;

namespace {

Mat coupling_matrix() {
  Mat b(2, 2);
  b << 0, 0, 1, 1;
  return b;
}

LinearDriverSpec zero_spec(int dim, const RateModel& model) {
  LinearDriverSpec spec;
  spec.dim = dim;
  for (std::size_t p = 0; p < model.pieces.size(); ++p) {
    LinearCoeffs c;
    c.beta = Mat::Zero(dim, dim);
    c.gamma = Vec::Zero(dim);
    c.phi = Vec::Zero(dim);
    c.alpha.assign(static_cast<std::size_t>(model.num_states), Mat::Zero(dim, model.num_states));
    spec.pieces.push_back(std::move(c));
  }
  return spec;
}

LinearDriverSpec random_spec(int dim, const RateModel& model, Rng& rng, double alpha_scale) {
  LinearDriverSpec spec;
  spec.dim = dim;
  for (std::size_t p = 0; p < model.pieces.size(); ++p) {
    LinearCoeffs c;
    c.beta = Mat(dim, dim);
    c.gamma = Vec(dim);
    c.phi = Vec(dim);
    for (int i = 0; i < dim; ++i) {
      c.gamma(i) = rng.uniform(-1.0, 1.0);
      c.phi(i) = rng.uniform(-1.0, 1.0);
      for (int j = 0; j < dim; ++j) c.beta(i, j) = rng.uniform(-1.0, 1.0);
    }
    for (int s = 0; s < model.num_states; ++s) {
      Mat a(dim, model.num_states);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < model.num_states; ++j) a(i, j) = alpha_scale * rng.uniform(-1.0, 1.0);
      c.alpha.push_back(a);
    }
    spec.pieces.push_back(std::move(c));
  }
  return spec;
}

std::vector<Vec> scalar_terminal(std::initializer_list<double> values) {
  std::vector<Vec> g;
  for (double v : values) g.push_back(Vec::Constant(1, v));
  return g;
}

} // namespace

TEST(ProductIntegral, IdempotentCouplingClosedForm) {
  Mat b = coupling_matrix();
  auto h = [&](double) { return b; };
  double tau = 0.7;
  Mat expected = Mat::Identity(2, 2) + (std::exp(tau) - 1.0) * b;
  Mat got = product_integral(h, 0.0, tau, 700);
  EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProductIntegral, ZeroGeneratorGivesIdentity) {
  auto h = [](double) { return Mat::Zero(3, 3); };
  EXPECT_EQ((product_integral(h, 0.2, 1.0, 10) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ProductIntegral, RichardsonSecondOrder) {
  auto h = [](double t) {
    Mat m(2, 2);
    m << 0.1 * t, std::sin(3.0 * t), std::cos(2.0 * t), -0.2 * t;
    return m;
  };
  Mat ref = product_integral(h, 0.0, 1.0, 1 << 14);
  double err_n = (product_integral(h, 0.0, 1.0, 64) - ref).cwiseAbs().maxCoeff();
  double err_2n = (product_integral(h, 0.0, 1.0, 128) - ref).cwiseAbs().maxCoeff();
  EXPECT_LE(err_2n, err_n / 3.0); // ~ quarter for a second-order scheme
}

TEST(ProductIntegral, MetzlerGeneratorStaysNonnegative) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Mat m(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(i, j) = i == j ? rng.uniform(-3.0, 1.0) : rng.uniform(0.0, 2.0);
    auto h = [&](double t) { return Mat(m * (1.0 + 0.3 * std::sin(t))); };
    Mat g = product_integral(h, 0.0, 1.5, 200);
    EXPECT_GE(g.minCoeff(), -1e-12);
  }
}

TEST(ProductIntegral, ReversedProductIsExactInverse) {
  auto h = [](double t) {
    Mat m(2, 2);
    m << 0.0, 1.0 + t, -0.5, 0.3 * t;
    return m;
  };
  Mat fwd = product_integral(h, 0.1, 1.3, 77);
  Mat inv = product_integral_inverse(h, 0.1, 1.3, 77);
  EXPECT_LE((fwd * inv - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(ProductIntegral, BadIntervalThrows) {
  auto h = [](double) { return Mat::Zero(2, 2); };
  EXPECT_THROW(product_integral(h, 1.0, 1.0, 4), std::invalid_argument);
  EXPECT_THROW(product_integral(h, 0.0, 1.0, 0), std::invalid_argument);
}

TEST(AdjointOnPath, ZeroSpecGivesIdentity) {
  RateModel m = oracles::three_state_model();
  ChainPath path = simulate_path(m, 0, 1.0, 5150);
  AdjointPath gamma = adjoint_on_path(path, zero_spec(2, m), m, 0.0);
  for (double s : {0.1, 0.5, 1.0})
    EXPECT_EQ((gamma.at(s) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(AdjointOnPath, NoJumpConstantCoefficientsMatchExponential) {
  RateModel m = oracles::two_state_model();
  Rng rng(88);
  LinearDriverSpec spec = random_spec(2, m, rng, 0.3);
  ChainPath path;
  path.initial_state = 0;
  path.horizon = 1.0;
  AdjointPath gamma = adjoint_on_path(path, spec, m, 0.0);
  // oracle: exp((beta - alpha psi+ A x gamma*) s) via test-local Taylor expm
  PsiMatrix pm = make_psi(m.pieces[0].a, 0);
  Mat h = spec.pieces[0].beta -
          (spec.pieces[0].alpha[0] * oracles::svd_pinv(pm.psi) * m.pieces[0].a.col(0)) *
              spec.pieces[0].gamma.transpose();
  for (double s : {0.3, 0.85}) {
    Mat expected = oracles::expm_taylor(h * s);
    EXPECT_LE((gamma.at(s) - expected).cwiseAbs().maxCoeff(), 1e-8) << "s=" << s;
  }
}

TEST(AdjointOnPath, SemigroupOnRandomPaths) {
  Rng rng(777);
  for (int trial = 0; trial < 15; ++trial) {
    RateModel m = make_random_model(3, rng.next_u64(), 1.0, trial % 2 + 1);
    LinearDriverSpec spec = random_spec(2, m, rng, 0.2);
    ChainPath path = simulate_path(m, 0, 1.0, rng.next_u64());
    double r = rng.uniform(0.2, 0.5), s = rng.uniform(0.6, 0.99);
    AdjointPath g0 = adjoint_on_path(path, spec, m, 0.0);
    AdjointPath gr = adjoint_on_path(path, spec, m, r);
    ASSERT_LE((g0.at(r) * gr.at(s) - g0.at(s)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(AdjointOnPath, InverseMatchesAssembledGamma) {
  Rng rng(4321);
  for (int trial = 0; trial < 15; ++trial) {
    RateModel m = make_random_model(3, rng.next_u64(), 1.0);
    LinearDriverSpec spec = random_spec(2, m, rng, 0.2);
    ChainPath path = simulate_path(m, 0, 1.0, rng.next_u64());
    AdjointPath gamma = adjoint_on_path(path, spec, m, 0.0);
    double s = rng.uniform(0.5, 1.0);
    ASSERT_LE((gamma.at(s) * gamma.inverse_at(s) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(CheckLinearConditions, ZeroAlphaPasses) {
  RateModel m = oracles::three_state_model();
  LinearDriverSpec spec = zero_spec(2, m);
  LinearConditionReport rep = check_linear_conditions(spec, m);
  EXPECT_TRUE(rep.invertibility_ok);
  EXPECT_TRUE(rep.jump_nonneg_ok);
  EXPECT_TRUE(rep.drift_offdiag_ok);
}

// Lemma 3.18 shape: updates I + u e_1* with nonnegative u
TEST(CheckLinearConditions, RankOneNonnegativeUpdatePasses) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(2, m);
  // alpha per state tuned so alpha psi+ (e_j - x) = (c1, c2) >= 0
  Mat a0(2, 2), a1(2, 2);
  a0 << -2.0 * 0.6, 0.0, -2.0 * 0.4, 0.0; // state 1: psi+ (e2 - e1) = (-1/2, 1/2)
  a1 << 0.0, -2.0 * 0.6, 0.0, -2.0 * 0.4; // state 2: psi+ (e1 - e2) = (1/2, -1/2)
  spec.pieces[0].alpha = {a0, a1};
  spec.pieces[0].gamma = Vec::Zero(2);
  spec.pieces[0].gamma(0) = 1.0; // gamma = e_1
  LinearConditionReport rep = check_linear_conditions(spec, m);
  EXPECT_TRUE(rep.invertibility_ok);
  EXPECT_TRUE(rep.jump_nonneg_ok);
}

TEST(CheckLinearConditions, ScalarMinusOneFailsInvertibilityWithIndices) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(1, m);
  Mat alpha(1, 2);
  alpha << 0.0, -2.0; // alpha psi+ (e2 - e1) = -1 at state 1
  spec.pieces[0].alpha = {alpha, alpha};
  spec.pieces[0].gamma = Vec::Constant(1, 1.0);
  LinearConditionReport rep = check_linear_conditions(spec, m);
  EXPECT_FALSE(rep.invertibility_ok);
  bool found = false;
  for (const JumpConditionVerdict& v : rep.jump_checks)
    if (!v.invertible) {
      EXPECT_EQ(v.state, 0);
      EXPECT_EQ(v.target, 1);
      found = true;
    }
  EXPECT_TRUE(found);
  EXPECT_NE(rep.first_invertibility_failure().find("state 1"), std::string::npos);
}

TEST(ClosedFormEstimate, PureExpectationMatchesTransitionOracle) {
  RateModel m = oracles::three_state_model();
  std::vector<Vec> g = scalar_terminal({1.0, -0.5, 2.0});
  McEstimate est = closed_form_estimate(zero_spec(1, m), g, m, 0, 1.0, 20000, 9001);
  Vec oracle = oracles::conditional_expectation(m, 0.0, 1.0, 0, g);
  EXPECT_NEAR(est.mean(0), oracle(0), 3.0 * est.std_error(0));
}

TEST(ClosedFormEstimate, ScalarBetaIntegratingFactor) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(1, m);
  spec.pieces[0].beta = Mat::Constant(1, 1, 1.0);
  McEstimate est = closed_form_estimate(spec, scalar_terminal({1.0, 0.0}), m, 0, 1.0, 10000, 31);
  double oracle = 0.5 * (std::exp(1.0) + std::exp(-1.0)); // e * (1 + e^-2)/2
  EXPECT_NEAR(est.mean(0), oracle, 3.0 * est.std_error(0));
}

TEST(ClosedFormEstimate, ConstantPhiShiftsByPhiT) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(1, m);
  spec.pieces[0].phi = Vec::Constant(1, 0.4);
  std::vector<Vec> g = scalar_terminal({1.0, 0.0});
  McEstimate est = closed_form_estimate(spec, g, m, 0, 1.0, 10000, 77);
  Vec oracle = oracles::conditional_expectation(m, 0.0, 1.0, 0, g);
  EXPECT_NEAR(est.mean(0), oracle(0) + 0.4, 3.0 * est.std_error(0));
}

// Corollary 3.20: nonnegative Q and phi under the Theorem 3.16 conditions
TEST(ClosedFormEstimate, NonnegativeDataGivesNonnegativeValue) {
  RateModel m = oracles::three_state_model();
  LinearDriverSpec spec = zero_spec(2, m);
  spec.pieces[0].beta << 0.0, 0.3, 0.2, 0.0; // Metzler
  spec.pieces[0].phi << 0.1, 0.2;
  std::vector<Vec> g(3, Vec::Zero(2));
  g[0] << 1.0, 0.5;
  g[2] << 0.2, 0.0;
  LinearConditionReport rep = check_linear_conditions(spec, m);
  ASSERT_TRUE(rep.theorem_3_16_ok());
  McEstimate est = closed_form_estimate(spec, g, m, 1, 1.0, 5000, 55);
  for (int c = 0; c < 2; ++c) EXPECT_GE(est.mean(c), -3.0 * est.std_error(c));
}

TEST(ClosedFormEstimate, RefusesWhenInvertibilityFails) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(1, m);
  Mat alpha(1, 2);
  alpha << 0.0, -2.0;
  spec.pieces[0].alpha = {alpha, alpha};
  spec.pieces[0].gamma = Vec::Constant(1, 1.0);
  EXPECT_THROW(closed_form_estimate(spec, scalar_terminal({1.0, 0.0}), m, 0, 1.0, 100, 1),
               std::domain_error);
}

// Gamma stays entrywise nonnegative along paths under the 3.16 conditions,
// and a negative off-diagonal drift breaks it over a short interval (3.17).
TEST(AdjointOnPath, NonnegativityAndNecessityProbe) {
  RateModel m = oracles::three_state_model();
  LinearDriverSpec good = zero_spec(2, m);
  good.pieces[0].beta << -0.1, 0.4, 0.3, -0.2;
  ASSERT_TRUE(check_linear_conditions(good, m).theorem_3_16_ok());
  double min_entry = 0.0;
  Rng rng(2025);
  for (int i = 0; i < 200; ++i) {
    ChainPath path = simulate_path(m, 0, 1.0, rng.next_u64());
    AdjointPath gamma = adjoint_on_path(path, good, m, 0.0);
    for (const AdjointSegment& seg : gamma.segments) {
      min_entry = std::min(min_entry, gamma.at(seg.t_end).minCoeff());
      min_entry = std::min(min_entry, gamma.at(0.5 * (seg.t_begin + seg.t_end)).minCoeff());
    }
  }
  EXPECT_GE(min_entry, -1e-10);

  LinearDriverSpec bad = zero_spec(2, m);
  bad.pieces[0].beta << 0.0, -0.8, 0.1, 0.0; // negative off-diagonal
  ASSERT_FALSE(check_linear_conditions(bad, m).drift_offdiag_ok);
  ChainPath still;
  still.initial_state = 0;
  still.horizon = 1.0;
  AdjointPath gamma = adjoint_on_path(still, bad, m, 0.0);
  double delta = 1e-3;
  EXPECT_LT(gamma.at(delta).minCoeff(), 0.0); // first-order expansion I + H delta
}

// closed form vs Markovian solver on the same linear BSDE
TEST(ClosedFormEstimate, AgreesWithMarkovianSolver) {
  Rng rng(13579);
  int done = 0;
  while (done < 3) {
    RateModel m = make_random_model(3, rng.next_u64(), 1.0);
    LinearDriverSpec spec = random_spec(2, m, rng, 0.15);
    if (!check_linear_conditions(spec, m).invertibility_ok) continue;
    ++done;
    std::vector<Vec> g;
    for (int i = 0; i < 3; ++i) {
      Vec v(2);
      v << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
      g.push_back(v);
    }
    McEstimate est = closed_form_estimate(spec, g, m, 0, 1.0, 10000, rng.next_u64());
    Driver lin = make_linear_driver(spec, m);
    ValueGrid sol = solve_markovian(m, lin, g, 1.0, {0.0, 1e-3});
    for (int c = 0; c < 2; ++c)
      ASSERT_NEAR(est.mean(c), sol.at_index(0)(c, 0), 3.0 * est.std_error(c) + 1e-6)
          << "component " << c;
  }
}

TEST(MakeLinearDriver, EvaluatesAffineForm) {
  RateModel m = oracles::two_state_model();
  Rng rng(24680);
  LinearDriverSpec spec = random_spec(2, m, rng, 0.5);
  Driver d = make_linear_driver(spec, m);
  PsiMatrix pm = make_psi(m.pieces[0].a, 0);
  StateContext ctx{0.5, 0, &m.pieces[0].a, &pm};
  Vec y(2);
  y << 0.3, -0.7;
  Mat z(2, 2);
  z << 0.1, -0.1, 0.4, -0.4;
  Vec expected = spec.pieces[0].phi + spec.pieces[0].beta * y +
                 spec.pieces[0].alpha[0] * z.transpose() * spec.pieces[0].gamma;
  EXPECT_LE((d(0.5, y, z, ctx) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(RequireAligned, RejectsMismatchedSpecs) {
  RateModel m = oracles::two_state_model();
  LinearDriverSpec spec = zero_spec(1, m);
  spec.pieces.push_back(spec.pieces[0]); // one piece too many
  EXPECT_THROW(require_aligned(spec, m), std::invalid_argument);
}
