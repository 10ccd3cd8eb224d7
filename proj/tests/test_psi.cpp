#include <gtest/gtest.h>

#include <cmath>

#include "mcbsde/psi.hpp"
#include "oracles.hpp"

using namespace mcbsde;

namespace {

Mat random_z(Rng& rng, int k, int n) {
  Mat z(k, n);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) z(i, j) = rng.uniform(-2.0, 2.0);
  return z;
}

} // namespace

// Appendix example: X = e_3, A x = (a1, a2, -a1-a2-a4, a4).
TEST(PsiAt, AppendixLayoutExact) {
  RateModel m = oracles::appendix_model(1.0, 2.0, 3.0);
  PsiMatrix pm = psi_at(m, 0.5, 2);
  Mat expected(4, 4);
  expected << 1, 0, -1, 0,
              0, 2, -2, 0,
             -1, -2, 6, -3,
              0, 0, -3, 3;
  EXPECT_EQ((pm.psi - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PsiAt, TwoStateRateOne) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  Mat expected(2, 2);
  expected << 1, -1, -1, 1;
  EXPECT_EQ((pm.psi - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PsiAt, ZeroRateTargetGivesZeroRowAndColumn) {
  Mat a = Mat::Zero(3, 3);
  a(1, 0) = 1.0; // only 1 -> 2 active
  a(0, 0) = -1.0;
  a(0, 1) = 1.0;
  a(1, 1) = -1.0;
  RateModel m = make_model(a, 0.5, 1.0);
  PsiMatrix pm = psi_at(m, 0.5, 0);
  EXPECT_EQ(pm.psi.row(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(pm.psi.col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PsiAt, RejectsBadStateAndTime) {
  RateModel m = oracles::two_state_model();
  EXPECT_THROW(psi_at(m, 0.5, 2), std::invalid_argument);
  EXPECT_THROW(psi_at(m, -0.1, 0), std::invalid_argument);
  EXPECT_THROW(psi_at(m, 2.0, 0), std::invalid_argument);
}

TEST(SeminormSq, HandExampleBothForms) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  Mat z(1, 2);
  z << 0, 1;
  EXPECT_NEAR(seminorm_sq(z, pm, SeminormForm::trace), 1.0, 1e-15);
  EXPECT_NEAR(seminorm_sq(z, pm, SeminormForm::jump), 1.0, 1e-15);
}

TEST(SeminormSq, ZeroForZeroZ) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  EXPECT_EQ(seminorm_sq(Mat::Zero(2, 2), pm), 0.0);
}

TEST(SeminormSq, TraceEqualsJumpOnCanonicalRandom) {
  Rng rng(2718);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, trial % 2 == 0 ? 0.3 : 0.0);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    Mat zc = canonicalize_z(random_z(rng, 2, n), pm);
    double tr = seminorm_sq(zc, pm, SeminormForm::trace);
    double ju = seminorm_sq(zc, pm, SeminormForm::jump);
    ASSERT_LE(std::abs(tr - ju), 1e-10) << "n=" << n << " state=" << state;
  }
}

TEST(Pseudoinverse, TwoStateQuarter) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  Mat expected(2, 2);
  expected << 0.25, -0.25, -0.25, 0.25;
  EXPECT_LE((pseudoinverse(pm) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Pseudoinverse, ZeroPsiMapsToZero) {
  RateModel m = make_model(Mat::Zero(3, 3), 0.5, 1.0);
  PsiMatrix pm = psi_at(m, 0.5, 1);
  EXPECT_EQ(pseudoinverse(pm).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pseudoinverse, AppendixProjectionFixesJumpDirections) {
  RateModel m = oracles::appendix_model(1.0, 1.0, 1.0);
  PsiMatrix pm = psi_at(m, 0.5, 2);
  Mat pinv = pseudoinverse(pm);
  for (int j : {0, 1, 3}) {
    Vec d = Vec::Zero(4);
    d(j) = 1.0;
    d(2) = -1.0;
    EXPECT_LE((pinv * pm.psi * d - d).cwiseAbs().maxCoeff(), 1e-12) << "j=" << j;
    EXPECT_LE((pm.psi * pinv * d - d).cwiseAbs().maxCoeff(), 1e-12) << "j=" << j;
  }
}

TEST(Pseudoinverse, MatchesSvdOracleOnRandomModels) {
  Rng rng(31415);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, trial % 3 == 0 ? 0.4 : 0.0);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    Mat structured = pseudoinverse(pm);
    Mat oracle = oracles::svd_pinv(pm.psi);
    ASSERT_LE((structured - oracle).cwiseAbs().maxCoeff(), 1e-9) << "n=" << n << " state=" << state;
  }
}

TEST(Pseudoinverse, PenroseIdentitiesAndZeroSums) {
  Rng rng(999);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, 0.3);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    const Mat& psi = pm.psi;
    Mat pinv = pseudoinverse(pm);
    ASSERT_LE((psi * pinv * psi - psi).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_LE((pinv * psi * pinv - pinv).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_LE((psi * pinv - (psi * pinv).transpose()).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_LE((pinv * psi - (pinv * psi).transpose()).cwiseAbs().maxCoeff(), 1e-10);
    ASSERT_LE(pinv.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_LE(pinv.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
    // zero rows/columns exactly where psi has them
    for (int j = 0; j < n; ++j) {
      bool psi_zero = psi.row(j).cwiseAbs().maxCoeff() == 0.0;
      bool pinv_zero = pinv.row(j).cwiseAbs().maxCoeff() == 0.0;
      ASSERT_EQ(psi_zero, pinv_zero);
    }
  }
}

TEST(CanonicalizeZ, HandExample) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  Mat z(1, 2);
  z << 0, 1;
  Mat zc = canonicalize_z(z, pm);
  EXPECT_NEAR(zc(0, 0), -0.5, 1e-15);
  EXPECT_NEAR(zc(0, 1), 0.5, 1e-15);
}

TEST(CanonicalizeZ, EqualsLiteralProjectionProduct) {
  Rng rng(8080);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, trial % 2 ? 0.3 : 0.0);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    Mat z = random_z(rng, 3, n);
    Mat via_product = z * pm.psi * pseudoinverse(pm);
    ASSERT_LE((canonicalize_z(z, pm) - via_product).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CanonicalizeZ, IdempotentAndNormPreserving) {
  Rng rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    Mat z = random_z(rng, 2, n);
    Mat zc = canonicalize_z(z, pm);
    ASSERT_LE((canonicalize_z(zc, pm) - zc).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_LE(std::abs(seminorm_sq(z, pm) - seminorm_sq(zc, pm)), 1e-10);
    ASSERT_LE(zc.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);     // Lemma 3.9
    ASSERT_LE((zc * pm.psi).rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CanonicalizeZ, ZeroSeminormMapsToExactZero) {
  RateModel m = oracles::appendix_model(1.0, 2.0, 3.0);
  PsiMatrix pm = psi_at(m, 0.5, 2);
  // kernel rows: constants, and any multiple of them
  Mat z(2, 4);
  z.row(0) = Mat::Ones(1, 4);
  z.row(1) = -3.0 * Mat::Ones(1, 4);
  EXPECT_EQ(seminorm_sq(z, pm, SeminormForm::jump), 0.0);
  EXPECT_EQ(canonicalize_z(z, pm).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CheckLemma310, HandExample) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  RowVec z(2);
  z << -0.5, 0.5;
  Lemma310Result r = check_lemma_3_10(z, pm, 1.0, 0.1);
  EXPECT_TRUE(r.premise_holds);
  EXPECT_TRUE(r.conclusion_holds);
}

TEST(CheckLemma310, NonnegativeJumpTermsAlwaysSatisfyPremise) {
  RateModel m = oracles::three_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  RowVec z(3);
  z << -2.0, 1.0, 1.0; // jumps from state 1: z(e_j - e_1) = 3 > 0
  for (double eps : {0.01, 0.05, 0.1, 0.19}) {
    Lemma310Result r = check_lemma_3_10(z, pm, 1.0, eps);
    EXPECT_TRUE(r.premise_holds);
  }
}

TEST(CheckLemma310, EpsOutOfRangeThrows) {
  RateModel m = oracles::two_state_model();
  PsiMatrix pm = psi_at(m, 1.0, 0);
  RowVec z(2);
  z << -0.5, 0.5;
  EXPECT_THROW(check_lemma_3_10(z, pm, 1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(check_lemma_3_10(z, pm, 1.0, 0.36), std::invalid_argument); // > 2^{-3/2}
}

// Lemma 3.10 as a property: premise implies conclusion on random models.
TEST(CheckLemma310, PremiseImpliesConclusionRandomized) {
  Rng rng(60606);
  int tested = 0;
  for (int trial = 0; trial < 500; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, trial % 4 == 0 ? 0.3 : 0.0);
    int state = rng.uniform_int(n);
    PsiMatrix pm = make_psi(m.pieces[0].a, state);
    RowVec z = canonicalize_z(random_z(rng, 1, n), pm).row(0);
    if (seminorm_sq(z, pm) < 1e-12) continue;
    double eps = rng.uniform(0.05, 0.95) * epsilon_threshold(m.epsilon_r, n);
    Lemma310Result r = check_lemma_3_10(z, pm, m.epsilon_r, eps);
    if (r.premise_holds) {
      ++tested;
      ASSERT_TRUE(r.conclusion_holds) << "n=" << n << " state=" << state << " eps=" << eps;
    }
  }
  EXPECT_GT(tested, 20); // the premise must actually fire often enough to test
}

TEST(PsiInvariants, PsdAndZeroSumsOnRandomModels) {
  Rng rng(515);
  for (int trial = 0; trial < 200; ++trial) {
    int n = 2 + static_cast<int>(rng.next_u64() % 5);
    RateModel m = make_random_model(n, rng.next_u64(), 1.0, 1, trial % 2 ? 0.5 : 0.0);
    for (int state = 0; state < n; ++state) {
      PsiMatrix pm = make_psi(m.pieces[0].a, state);
      ASSERT_EQ((pm.psi - pm.psi.transpose()).cwiseAbs().maxCoeff(), 0.0);
      ASSERT_LE(pm.psi.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
      ASSERT_LE(pm.psi.colwise().sum().cwiseAbs().maxCoeff(), 1e-12);
      Eigen::SelfAdjointEigenSolver<Mat> eig(pm.psi);
      ASSERT_GE(eig.eigenvalues().minCoeff(), -1e-10);
      // Eq. (3.3): psi x = -A x
      Vec x = Vec::Zero(n);
      x(state) = 1.0;
      ASSERT_LE((pm.psi * x + pm.a * x).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(EpsilonThreshold, ValuesAndMonotonicity) {
  EXPECT_NEAR(epsilon_threshold(1.0, 2), 0.35355339059327373, 1e-15);
  EXPECT_THROW(epsilon_threshold(1.0, 1), std::invalid_argument);
  EXPECT_THROW(epsilon_threshold(0.0, 3), std::invalid_argument);
  EXPECT_THROW(epsilon_threshold(1.5, 3), std::invalid_argument);
  EXPECT_LT(epsilon_threshold(0.5, 4), epsilon_threshold(0.5, 3));
  EXPECT_LT(epsilon_threshold(0.3, 4), epsilon_threshold(0.5, 4));
}
