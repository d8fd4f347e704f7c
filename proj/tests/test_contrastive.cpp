#include <gtest/gtest.h>

#include "croco/contrastive.hpp"
#include "oracles.hpp"

using namespace croco;

namespace {

Mat<double> random_mat(std::mt19937_64& g, int rows, int cols) {
  std::normal_distribution<double> nd;
  Mat<double> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = nd(g);
  return m;
}

oracle::Rows rows_of(const Mat<double>& m) {
  oracle::Rows out(m.rows());
  for (int i = 0; i < m.rows(); ++i) out[i].assign(m.row(i).data(), m.row(i).data() + m.cols());
  return out;
}

double fd_rel(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}); }

/// Max relative error between the analytic gradient and central differences.
double grad_check(const Mat<double>& rgb, const Mat<double>& dem, const LossConfig& cfg, double h = 1e-5) {
  const auto g = nt_xent_grad(rgb, dem, cfg);
  double worst = 0.0;
  for (int side = 0; side < 2; ++side) {
    const Mat<double>& base = side == 0 ? rgb : dem;
    const Mat<double>& an = side == 0 ? g.d_rgb : g.d_dem;
    for (int i = 0; i < base.rows(); ++i)
      for (int j = 0; j < base.cols(); ++j) {
        Mat<double> p = base, m = base;
        p(i, j) += h;
        m(i, j) -= h;
        const double lp = side == 0 ? nt_xent(p, dem, cfg).loss : nt_xent(rgb, p, cfg).loss;
        const double lm = side == 0 ? nt_xent(m, dem, cfg).loss : nt_xent(rgb, m, cfg).loss;
        worst = std::max(worst, fd_rel(an(i, j), (lp - lm) / (2 * h)));
      }
  }
  return worst;
}

const LossConfig kAll{0.5, NegativeSet::All2N};
const LossConfig kCross{0.5, NegativeSet::CrossModalOnly};

}  // namespace

TEST(Sim, Examples) {
  const std::vector<double> u = {0.3, -1.2, 4.0};
  EXPECT_NEAR(sim(u, u), 1.0, 1e-15);
  EXPECT_EQ(sim(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_EQ(sim(std::vector<double>{2, 0}, std::vector<double>{-1, 0}), -1.0);
}

TEST(Sim, PositiveScaleInvariance) {
  const std::vector<double> u = {0.3, -1.2, 4.0}, v = {1.0, 2.0, -0.5};
  std::vector<double> au = u, bv = v;
  for (auto& x : au) x *= 17.0;
  for (auto& x : bv) x *= 1e-7;
  EXPECT_NEAR(sim(au, bv), sim(u, v), 1e-15);
  EXPECT_NEAR(sim(u, v), static_cast<double>(oracle::cosine(u, v)), 1e-15);
}

TEST(Sim, ZeroAndMismatchedVectorsAreRejected) {
  EXPECT_THROW(sim(std::vector<double>{0, 0}, std::vector<double>{1, 0}), Error);
  EXPECT_THROW(sim(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}), Error);
}

TEST(NtXent, IdenticalEmbeddingsGiveLogTwoNMinusOne) {
  for (int n : {2, 4, 8})
    for (double tau : {0.1, 0.5, 2.0}) {
      Mat<double> z = Mat<double>::Constant(n, 5, 0.7);
      const auto v = nt_xent(z, z, LossConfig{tau, NegativeSet::All2N});
      EXPECT_NEAR(v.loss, std::log(2.0 * n - 1.0), 1e-12);
    }
}

TEST(NtXent, OrthogonalNegativesCase) {
  Mat<double> rgb(2, 2), dem(2, 2);
  rgb << 1, 0, 0, 1;
  dem = rgb;
  const auto v = nt_xent(rgb, dem, LossConfig{1.0, NegativeSet::All2N});
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  EXPECT_NEAR(v.loss, expect, 1e-12);
  EXPECT_NEAR(expect, 0.5514, 1e-4);
  for (double l : v.per_anchor) EXPECT_NEAR(l, expect, 1e-12);
}

TEST(NtXent, MatchesTermByTermOracle) {
  std::mt19937_64 g(42);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + trial % 6, d = 3 + trial % 9;
    const double tau = std::array{0.1, 0.5, 1.0}[trial % 3];
    const auto rgb = random_mat(g, n, d), dem = random_mat(g, n, d);
    for (bool cross : {false, true}) {
      const LossConfig cfg{tau, cross ? NegativeSet::CrossModalOnly : NegativeSet::All2N};
      std::vector<long double> per;
      const long double ref = oracle::nt_xent(rows_of(rgb), rows_of(dem), tau, cross, &per);
      const auto v = nt_xent(rgb, dem, cfg);
      EXPECT_LE(std::abs(v.loss - static_cast<double>(ref)) / static_cast<double>(ref), 1e-9);
      for (int i = 0; i < 2 * n; ++i) EXPECT_NEAR(v.per_anchor[i], static_cast<double>(per[i]), 1e-9);
    }
  }
}

TEST(NtXent, PairPermutationInvariance) {
  std::mt19937_64 g(7);
  const auto rgb = random_mat(g, 6, 10), dem = random_mat(g, 6, 10);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  Mat<double> pr(6, 10), pd(6, 10);
  for (int i = 0; i < 6; ++i) pr.row(i) = rgb.row(perm[i]), pd.row(i) = dem.row(perm[i]);
  for (const auto& cfg : {kAll, kCross}) EXPECT_NEAR(nt_xent(rgb, dem, cfg).loss, nt_xent(pr, pd, cfg).loss, 1e-13);
}

TEST(NtXent, NonNegative) {
  std::mt19937_64 g(8);
  for (int t = 0; t < 50; ++t) {
    auto rgb = random_mat(g, 3, 4);
    Mat<double> dem = rgb;  // perfectly aligned positives push the loss toward its floor
    if (t % 2) dem = random_mat(g, 3, 4);
    for (const auto& cfg : {LossConfig{0.05, NegativeSet::All2N}, LossConfig{0.05, NegativeSet::CrossModalOnly}}) {
      const auto v = nt_xent(rgb, dem, cfg);
      EXPECT_GE(v.loss, 0.0);
      for (double l : v.per_anchor) EXPECT_GE(l, 0.0);
    }
  }
}

TEST(NtXent, SingleEmbeddingScaleInvariance) {
  std::mt19937_64 g(9);
  const auto rgb = random_mat(g, 5, 8), dem = random_mat(g, 5, 8);
  for (double alpha : {1e-6, 0.3, 42.0, 1e9}) {
    Mat<double> r2 = rgb;
    r2.row(2) *= alpha;
    EXPECT_NEAR(nt_xent(r2, dem, kAll).loss, nt_xent(rgb, dem, kAll).loss, 1e-9);
  }
}

TEST(NtXent, HigherPositiveSimilarityLowersThatAnchor) {
  std::mt19937_64 g(10);
  Mat<double> rgb = random_mat(g, 4, 6), dem = random_mat(g, 4, 6);
  Vec<double> a = rgb.row(0).transpose().normalized();
  Vec<double> w = dem.row(0).transpose();
  w -= a * a.dot(w);
  w.normalize();
  double prev = std::numeric_limits<double>::infinity();
  for (double theta = 3.0; theta >= 0.0; theta -= 0.25) {
    dem.row(0) = (std::cos(theta) * a + std::sin(theta) * w).transpose();
    const double l0 = nt_xent(rgb, dem, kAll).per_anchor[0];
    EXPECT_LT(l0, prev);
    prev = l0;
  }
}

TEST(NtXent, ExtremeNormsStayFinite) {
  std::mt19937_64 g(11);
  Mat<double> rgb = random_mat(g, 4, 8), dem = random_mat(g, 4, 8);
  rgb.row(0) *= 1e-20;
  rgb.row(1) *= 1e20;
  dem.row(2) *= 1e-20;
  dem.row(3) *= 1e20;
  for (const auto& cfg : {kAll, kCross, LossConfig{0.01, NegativeSet::All2N}}) {
    const auto gr = nt_xent_grad(rgb, dem, cfg);
    EXPECT_TRUE(std::isfinite(gr.value.loss));
    EXPECT_TRUE(gr.d_rgb.allFinite());
    EXPECT_TRUE(gr.d_dem.allFinite());
  }
}

TEST(NtXent, ModesDifferOnGenericInput) {
  std::mt19937_64 g(12);
  const auto rgb = random_mat(g, 2, 5), dem = random_mat(g, 2, 5);
  EXPECT_GT(std::abs(nt_xent(rgb, dem, kAll).loss - nt_xent(rgb, dem, kCross).loss), 1e-6);
}

TEST(NtXent, InvalidInputsAreRejected) {
  Mat<double> one = Mat<double>::Ones(1, 4);
  EXPECT_THROW(nt_xent(one, one, kAll), Error);
  Mat<double> z = Mat<double>::Ones(3, 4);
  Mat<double> zero = z;
  zero.row(1).setZero();
  EXPECT_THROW(nt_xent(z, zero, kAll), Error);
  EXPECT_THROW(nt_xent(z, z, LossConfig{0.0, NegativeSet::All2N}), Error);
  EXPECT_THROW(nt_xent(z, Mat<double>(Mat<double>::Ones(3, 5)), kAll), Error);
}

TEST(NtXentGrad, MatchesFiniteDifferences) {
  std::mt19937_64 g(13);
  for (int t = 0; t < 10; ++t) {
    const auto rgb = random_mat(g, 4, 8), dem = random_mat(g, 4, 8);
    EXPECT_LE(grad_check(rgb, dem, kAll), 1e-4);
    EXPECT_LE(grad_check(rgb, dem, kCross), 1e-4);
  }
}

TEST(NtXentGrad, ValueAgreesWithLoss) {
  std::mt19937_64 g(14);
  const auto rgb = random_mat(g, 5, 7), dem = random_mat(g, 5, 7);
  EXPECT_EQ(nt_xent_grad(rgb, dem, kAll).value.loss, nt_xent(rgb, dem, kAll).loss);
}

TEST(NtXentGrad, UniformRescalingDirectionIsFlat) {
  Mat<double> z = Mat<double>::Constant(4, 6, 0.25);
  const auto gr = nt_xent_grad(z, z, kAll);
  // d/ds L(s z) at s = 1 is the sum of <grad_i, z_i>.
  const double dir = (gr.d_rgb.cwiseProduct(z)).sum() + (gr.d_dem.cwiseProduct(z)).sum();
  EXPECT_NEAR(dir, 0.0, 1e-14);
  std::mt19937_64 g(15);
  const auto r = random_mat(g, 4, 6), d = random_mat(g, 4, 6);
  const auto gr2 = nt_xent_grad(r, d, kCross);
  EXPECT_NEAR((gr2.d_rgb.cwiseProduct(r)).sum() + (gr2.d_dem.cwiseProduct(d)).sum(), 0.0, 1e-13);
}

TEST(NtXentGrad, PermutationEquivariance) {
  std::mt19937_64 g(16);
  const auto rgb = random_mat(g, 5, 6), dem = random_mat(g, 5, 6);
  const std::vector<int> perm = {4, 2, 0, 3, 1};
  Mat<double> pr(5, 6), pd(5, 6);
  for (int i = 0; i < 5; ++i) pr.row(i) = rgb.row(perm[i]), pd.row(i) = dem.row(perm[i]);
  const auto a = nt_xent_grad(rgb, dem, kAll), b = nt_xent_grad(pr, pd, kAll);
  for (int i = 0; i < 5; ++i) {
    EXPECT_LT((b.d_rgb.row(i) - a.d_rgb.row(perm[i])).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((b.d_dem.row(i) - a.d_dem.row(perm[i])).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(NegativeSetNames, RoundTrip) {
  for (auto m : {NegativeSet::All2N, NegativeSet::CrossModalOnly}) EXPECT_EQ(negative_set_from_string(to_string(m)), m);
  EXPECT_THROW(negative_set_from_string("half"), Error);
}
