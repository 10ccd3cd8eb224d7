#include <gtest/gtest.h>

#include <cmath>

#include "mcbsde/chain.hpp"
#include "mcbsde/parallel.hpp"
#include "mcbsde/psi.hpp"
#include "oracles.hpp"

using namespace mcbsde;

TEST(ValidateRateModel, SymmetricTwoStateIsOk) {
  RateModel m = oracles::two_state_model();
  ValidationReport r = validate_rate_model(m);
  EXPECT_TRUE(r.ok) << r.summary();
}

TEST(ValidateRateModel, ColumnSumViolation) {
  Mat a(2, 2);
  a << -0.9, 1.0, 1.0, -1.0; // first column sums to 0.1
  RateModel m = make_model(a, 1.0, 1.0);
  ValidationReport r = validate_rate_model(m);
  ASSERT_FALSE(r.ok);
  EXPECT_NE(r.summary().find("column sum nonzero"), std::string::npos);
}

TEST(ValidateRateModel, RateOutsideBandViolation) {
  Mat a(2, 2);
  a << -0.5, 0.5, 0.5, -0.5; // off-diagonal 0.5 < eps_r = 0.9
  RateModel m = make_model(a, 0.9, 1.0);
  ValidationReport r = validate_rate_model(m);
  ASSERT_FALSE(r.ok);
  EXPECT_NE(r.summary().find("outside [eps_r, 1/eps_r]"), std::string::npos);
}

TEST(ValidateRateModel, PieceTimesMustIncrease) {
  RateModel m = oracles::two_state_model();
  m.pieces.push_back({0.5, m.pieces[0].a}); // end time goes backwards
  EXPECT_FALSE(validate_rate_model(m).ok);
}

TEST(SimulatePath, AbsorbingZeroMatrixNeverJumps) {
  RateModel m = make_model(Mat::Zero(3, 3), 0.5, 2.0);
  ASSERT_TRUE(validate_rate_model(m).ok);
  ChainPath p = simulate_path(m, 1, 2.0, 99);
  EXPECT_TRUE(p.events.empty());
  EXPECT_EQ(p.state_at(2.0), 1);
}

TEST(SimulatePath, DeterministicGivenSeed) {
  RateModel m = oracles::two_state_model();
  ChainPath a = simulate_path(m, 0, 1.0, 2024);
  ChainPath b = simulate_path(m, 0, 1.0, 2024);
  ASSERT_EQ(a.events.size(), b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    EXPECT_EQ(a.events[i].time, b.events[i].time);
    EXPECT_EQ(a.events[i].to_state, b.events[i].to_state);
  }
}

TEST(SimulatePath, TwoStateOccupancyMatchesMatrixExponential) {
  RateModel m = oracles::two_state_model();
  const int n = 100000;
  std::vector<char> stayed(n);
  parallel_for(n, [&](int i) {
    Rng rng = Rng::for_path(7, static_cast<std::uint64_t>(i));
    ChainPath p = simulate_path(m, 0, 1.0, rng.next_u64());
    stayed[static_cast<std::size_t>(i)] = p.state_at(1.0) == 0 ? 1 : 0;
  });
  double phat = 0.0;
  for (char c : stayed) phat += c;
  phat /= n;
  double p = oracles::two_state_stay_probability(1.0); // (1 + e^-2)/2
  double sigma = std::sqrt(p * (1.0 - p) / n);
  EXPECT_NEAR(phat, p, 3.0 * sigma);
}

TEST(SimulatePath, RealizedJumpsHavePositiveRates) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    RateModel m = make_random_model(4, 1000 + s, 1.0, 2, 0.4);
    ChainPath p = simulate_path(m, 0, 1.0, s);
    EXPECT_TRUE(validate_path(p, m).ok);
  }
}

TEST(MartingaleIncrements, NoJumpPathClosedForm) {
  RateModel m = oracles::two_state_model();
  ChainPath p;
  p.initial_state = 0;
  p.horizon = 1.0;
  std::vector<Vec> ms = martingale_increments(p, m, {0.0, 1.0});
  EXPECT_EQ(ms[0].cwiseAbs().maxCoeff(), 0.0); // M_0 = 0
  // X constant: M_1 = -A e_1 = (1, -1)
  EXPECT_NEAR(ms[1](0), 1.0, 1e-15);
  EXPECT_NEAR(ms[1](1), -1.0, 1e-15);
}

TEST(MartingaleIncrements, GridBeyondHorizonThrows) {
  RateModel m = oracles::two_state_model();
  ChainPath p = simulate_path(m, 0, 1.0, 5);
  EXPECT_THROW(martingale_increments(p, m, {1.5}), std::invalid_argument);
}

TEST(MartingaleIncrements, MeanZeroOverPaths) {
  RateModel m = make_random_model(3, 77, 1.0);
  const int n = 100000;
  std::vector<Vec> samples(n);
  parallel_for(n, [&](int i) {
    Rng rng = Rng::for_path(11, static_cast<std::uint64_t>(i));
    ChainPath p = simulate_path(m, 0, 1.0, rng.next_u64());
    samples[static_cast<std::size_t>(i)] = martingale_increments(p, m, {1.0})[0];
  });
  for (int c = 0; c < 3; ++c) {
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)] = samples[static_cast<std::size_t>(i)](c);
    auto st = oracles::mean_stderr(xs);
    EXPECT_LE(std::abs(st.mean), 3.0 * st.stderr_ + 1e-12) << "component " << c;
  }
}

TEST(TransitionMatrix, IdentityAtEqualTimes) {
  RateModel m = oracles::two_state_model();
  EXPECT_EQ((transition_matrix(m, 0.3, 0.3) - Mat::Identity(2, 2)).norm(), 0.0);
}

TEST(TransitionMatrix, TwoStateClosedForm) {
  RateModel m = oracles::two_state_model();
  Mat p = transition_matrix(m, 0.0, 1.0);
  double expected = oracles::two_state_stay_probability(1.0);
  EXPECT_NEAR(p(0, 0), expected, 1e-12);
  EXPECT_NEAR(p(1, 1), expected, 1e-12);
  EXPECT_NEAR(p(1, 0), 1.0 - expected, 1e-12);
}

TEST(TransitionMatrix, StochasticOnRandomModels) {
  for (std::uint64_t s = 0; s < 25; ++s) {
    RateModel m = make_random_model(2 + static_cast<int>(s % 5), 300 + s, 1.0, 1 + static_cast<int>(s % 3));
    Mat p = transition_matrix(m, 0.1, 0.9);
    for (int i = 0; i < m.num_states; ++i) {
      EXPECT_NEAR(p.col(i).sum(), 1.0, 1e-12);
      EXPECT_GE(p.col(i).minCoeff(), -1e-12);
      EXPECT_LE(p.col(i).maxCoeff(), 1.0 + 1e-12);
    }
  }
}

TEST(TransitionMatrix, BackwardTimeThrows) {
  RateModel m = oracles::two_state_model();
  EXPECT_THROW(transition_matrix(m, 0.5, 0.2), std::invalid_argument);
}

TEST(TransitionMatrix, EmpiricalOccupancyThreeState) {
  RateModel m = make_random_model(3, 1234, 1.0);
  Mat p = transition_matrix(m, 0.0, 1.0);
  const int n = 50000;
  std::vector<int> terminal(n);
  parallel_for(n, [&](int i) {
    Rng rng = Rng::for_path(31, static_cast<std::uint64_t>(i));
    terminal[static_cast<std::size_t>(i)] = simulate_path(m, 1, 1.0, rng.next_u64()).state_at(1.0);
  });
  for (int j = 0; j < 3; ++j) {
    double phat = 0.0;
    for (int t : terminal) phat += t == j ? 1.0 : 0.0;
    phat /= n;
    double pj = p(j, 1);
    double sigma = std::sqrt(std::max(pj * (1.0 - pj), 1e-12) / n);
    EXPECT_LE(std::abs(phat - pj), 3.0 * sigma + 1.0 / n) << "state " << j;
  }
}

// Lemma 3.1: E[(int Z dM)^2] = E[int ||Z||^2 du] for a fixed row Z, paired
// per path.
TEST(Isometry, ConstantRowZ) {
  RateModel m = make_random_model(3, 555, 1.0);
  Mat z(1, 3);
  z << 0.4, -0.9, 0.2;
  const int n = 100000;
  std::vector<double> diffs(n);
  parallel_for(n, [&](int i) {
    Rng rng = Rng::for_path(13, static_cast<std::uint64_t>(i));
    ChainPath path = simulate_path(m, 0, 1.0, rng.next_u64());
    double stoch = 0.0, qv = 0.0;
    double pos = 0.0;
    int state = 0;
    std::size_t ev = 0;
    const Mat& a = m.pieces[0].a;
    while (pos < 1.0) {
      double seg_end = ev < path.events.size() ? std::min(path.events[ev].time, 1.0) : 1.0;
      PsiMatrix pm = make_psi(a, state);
      qv += seminorm_sq(z, pm) * (seg_end - pos);
      stoch -= (z * a.col(state)).value() * (seg_end - pos);
      if (ev < path.events.size() && path.events[ev].time <= 1.0) {
        stoch += z(0, path.events[ev].to_state) - z(0, state);
        state = path.events[ev].to_state;
        ++ev;
      }
      pos = seg_end;
    }
    diffs[static_cast<std::size_t>(i)] = stoch * stoch - qv;
  });
  auto st = oracles::mean_stderr(diffs);
  EXPECT_LE(std::abs(st.mean), 3.0 * st.stderr_) << "isometry defect " << st.mean;
}

TEST(ReachableStates, RespectsZeroRatesAcrossPieces) {
  // piece 1: 1 -> 2 only; piece 2: 2 -> 3 only
  Mat a1 = Mat::Zero(3, 3), a2 = Mat::Zero(3, 3);
  a1(1, 0) = 1.0;
  a1(0, 0) = -1.0;
  a2(2, 1) = 1.0;
  a2(1, 1) = -1.0;
  RateModel m;
  m.num_states = 3;
  m.epsilon_r = 0.5;
  m.horizon = 2.0;
  m.pieces = {{1.0, a1}, {2.0, a2}};
  ASSERT_TRUE(validate_rate_model(m).ok);
  std::vector<int> full = reachable_states(m, 0, 0.0, 2.0);
  EXPECT_EQ(full, (std::vector<int>{0, 1, 2}));
  std::vector<int> first_piece = reachable_states(m, 0, 0.0, 1.0);
  EXPECT_EQ(first_piece, (std::vector<int>{0, 1}));
  std::vector<int> late_start = reachable_states(m, 0, 1.0, 2.0);
  EXPECT_EQ(late_start, (std::vector<int>{0}));
}
