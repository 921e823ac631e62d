#include "mlmi/statkern.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mlmi;

namespace {

Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

}  // namespace

TEST(SymMatrix, RejectsAsymmetricInput) {
    EXPECT_THROW(SymMatrix(mat2(1, 0.5, 0.4, 1)), std::invalid_argument);
    EXPECT_THROW(SymMatrix(Matrix::Zero(2, 3)), std::invalid_argument);
    EXPECT_NO_THROW(SymMatrix(mat2(1, 0.5, 0.5 + 1e-14, 1)));
}

TEST(SymMatrix, StoresExactlySymmetricEntries) {
    const SymMatrix s(mat2(1, 0.5, 0.5 + 1e-14, 1));
    EXPECT_EQ(s(0, 1), s(1, 0));
}

TEST(Cholesky, IdentityAndScalar) {
    EXPECT_TRUE(cholesky(SymMatrix::identity(2))->isApprox(Matrix::Identity(2, 2)));
    Matrix nine(1, 1);
    nine << 9.0;
    EXPECT_DOUBLE_EQ((*cholesky(SymMatrix(nine)))(0, 0), 3.0);
}

TEST(Cholesky, KnownTwoByTwo) {
    const auto l = cholesky(SymMatrix(mat2(4, 2, 2, 3)));
    ASSERT_TRUE(l);
    EXPECT_NEAR((*l)(0, 0), 2.0, 1e-15);
    EXPECT_NEAR((*l)(1, 0), 1.0, 1e-15);
    EXPECT_NEAR((*l)(1, 1), std::sqrt(2.0), 1e-15);
    EXPECT_EQ((*l)(0, 1), 0.0);
    EXPECT_LT(((*l) * l->transpose() - mat2(4, 2, 2, 3)).norm(), 1e-10 * 5.0);
}

TEST(Cholesky, RoundTripOfRandomFactors) {
    SeededRng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Index p = 1 + trial % 6;
        Matrix l = Matrix::Zero(p, p);
        for (Index i = 0; i < p; ++i) {
            for (Index j = 0; j < i; ++j) l(i, j) = rng.normal();
            l(i, i) = 0.5 + rng.uniform();
        }
        const auto back = cholesky(SymMatrix::from_symmetric_part(l * l.transpose()));
        ASSERT_TRUE(back);
        EXPECT_LT((*back - l).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Cholesky, IndefiniteFails) {
    EXPECT_FALSE(cholesky(SymMatrix(mat2(1, 2, 2, 1))));
    EXPECT_THROW((void)cholesky_or_throw(SymMatrix(mat2(1, 2, 2, 1)), "test"), DecompositionError);
}

TEST(Cholesky, SingularGetsJitteredOnce) {
    // Rank one: the first pass hits a zero pivot, the jittered retry succeeds.
    const auto l = cholesky(SymMatrix(mat2(1, 1, 1, 1)));
    ASSERT_TRUE(l);
    EXPECT_LT(((*l) * l->transpose() - mat2(1, 1, 1, 1)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_FALSE(cholesky(SymMatrix::zero(2)));
}

TEST(InverseSpd, MatchesDirectInverse) {
    const SymMatrix a(mat2(4, 2, 2, 3));
    EXPECT_LT((inverse_spd(a).matrix() * a.matrix() - Matrix::Identity(2, 2)).norm(), 1e-14);
    EXPECT_NEAR(log_det_spd(a), std::log(8.0), 1e-14);
}

TEST(SeededRng, IdenticalSeedsGiveIdenticalStreams) {
    SeededRng a(42, 3), b(42, 3), c(42, 4);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const double va = a.normal();
        EXPECT_EQ(va, b.normal());
        differs |= va != c.normal();
    }
    EXPECT_TRUE(differs);
}

TEST(SeededRng, DeriveIsPure) {
    const SeededRng root(7);
    SeededRng a = root.derive(5), b = root.derive(5), c = root.derive(6);
    EXPECT_EQ(a.stream(), b.stream());
    EXPECT_NE(a.stream(), c.stream());
    EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(SampleMvnormal, ZeroCovarianceReturnsMean) {
    SeededRng rng(1);
    const Vector mean = Vector::LinSpaced(3, -1.0, 1.0);
    EXPECT_EQ(sample_mvnormal(mean, SymMatrix::zero(3), rng), mean);
}

TEST(SampleMvnormal, DimensionMismatchThrows) {
    SeededRng rng(1);
    EXPECT_THROW((void)sample_mvnormal(Vector::Zero(3), SymMatrix::identity(2), rng), std::invalid_argument);
}

TEST(SampleMvnormal, MomentsOverManyDraws) {
    SeededRng rng(2024);
    const int n = 100000;
    const SymMatrix cov(mat2(1, 0.5, 0.5, 1));
    Vector sum = Vector::Zero(2);
    Matrix ss = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vector v = sample_mvnormal(Vector::Zero(2), cov, rng);
        sum += v;
        ss += v * v.transpose();
    }
    const Vector mean = sum / n;
    const Matrix emp = ss / n - mean * mean.transpose();
    EXPECT_LT(mean.cwiseAbs().maxCoeff(), 0.02);
    EXPECT_LT((emp - cov.matrix()).cwiseAbs().maxCoeff(), 0.02);
}

TEST(SampleMvnormal, IdentityMeanNearZero) {
    SeededRng rng(99);
    Vector sum = Vector::Zero(2);
    for (int i = 0; i < 100000; ++i) sum += sample_mvnormal(Vector::Zero(2), SymMatrix::identity(2), rng);
    EXPECT_LT((sum / 100000.0).cwiseAbs().maxCoeff(), 0.02);
}

TEST(SampleInvWishart, ScalarMeanIsInverseGammaMean) {
    SeededRng rng(5);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += sample_invwishart(SymMatrix::identity(1), 5.0, rng)(0, 0);
    EXPECT_NEAR(sum / n, 1.0 / 3.0, 0.02);
}

TEST(SampleInvWishart, MatrixMean) {
    SeededRng rng(6);
    const int n = 100000;
    Matrix sum = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) sum += sample_invwishart(SymMatrix::identity(2), 6.0, rng).matrix();
    EXPECT_LT((sum / n - Matrix::Identity(2, 2) / 3.0).cwiseAbs().maxCoeff(), 0.03);
}

TEST(SampleInvWishart, DiagonalVariance) {
    SeededRng rng(7);
    const int n = 100000;
    const double df = 10.0;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double w = sample_invwishart(SymMatrix::identity(2), df, rng)(1, 1);
        s1 += w;
        s2 += w * w;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    // 2 s^2 / ((df-p-1)^2 (df-p-3))
    const double expected = 2.0 / (49.0 * 5.0);
    EXPECT_NEAR(var / expected, 1.0, 0.1);
}

TEST(SampleInvWishart, NonIdentityScaleMean) {
    SeededRng rng(8);
    const SymMatrix scale(mat2(2.0, 0.6, 0.6, 1.0));
    const double df = 10.0;
    Matrix sum = Matrix::Zero(2, 2);
    const int n = 50000;
    for (int i = 0; i < n; ++i) sum += sample_invwishart(scale, df, rng).matrix();
    EXPECT_LT((sum / n - scale.matrix() / (df - 3.0)).cwiseAbs().maxCoeff(), 0.01);
}

TEST(SampleInvWishart, DrawsAreSymmetricPositiveDefinite) {
    SeededRng rng(9);
    for (int i = 0; i < 2000; ++i) {
        const SymMatrix w = sample_invwishart(SymMatrix::identity(3), 3.0, rng);
        EXPECT_EQ(w.matrix(), w.matrix().transpose());
        EXPECT_TRUE(cholesky(w));
    }
}

TEST(SampleInvWishart, SmallDfThrows) {
    SeededRng rng(1);
    EXPECT_THROW((void)sample_invwishart(SymMatrix::identity(2), 1.0, rng), std::invalid_argument);
    EXPECT_NO_THROW((void)sample_invwishart(SymMatrix::identity(2), 1.5, rng));
}

TEST(ConditionalNormal, NothingObservedLeavesMoments) {
    const Vector mean = Vector::Constant(2, 0.3);
    const SymMatrix cov(mat2(1, 0.5, 0.5, 1));
    const auto c = conditional_normal(mean, cov, {}, Vector());
    EXPECT_EQ(c.mean, mean);
    EXPECT_EQ(c.cov.matrix(), cov.matrix());
}

TEST(ConditionalNormal, BivariateExample) {
    const std::vector<Index> obs{1};
    Vector v(1);
    v << 1.0;
    const auto c = conditional_normal(Vector::Zero(2), SymMatrix(mat2(1, 0.5, 0.5, 1)), obs, v);
    ASSERT_EQ(c.missing_idx, std::vector<Index>{0});
    EXPECT_NEAR(c.mean(0), 0.5, 1e-15);
    EXPECT_NEAR(c.cov(0, 0), 0.75, 1e-15);
}

TEST(ConditionalNormal, BivariateExampleAgreesWithIntegration) {
    // E[X0 | X1 = 1] and var by quadrature over the joint density.
    const double rho = 0.5;
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (int k = -40000; k <= 40000; ++k) {
        const double x = k * 2.5e-4;
        const double q = (x * x - 2 * rho * x * 1.0 + 1.0) / (1 - rho * rho);
        const double f = std::exp(-0.5 * q);
        m0 += f;
        m1 += x * f;
        m2 += x * x * f;
    }
    const double mean = m1 / m0;
    const double var = m2 / m0 - mean * mean;
    const std::vector<Index> obs{1};
    const auto c = conditional_normal(Vector::Zero(2), SymMatrix(mat2(1, rho, rho, 1)), obs, Vector::Ones(1));
    EXPECT_NEAR(c.mean(0), mean, 1e-8);
    EXPECT_NEAR(c.cov(0, 0), var, 1e-8);
}

TEST(ConditionalNormal, AllObservedGivesEmptyMissingPart) {
    const std::vector<Index> obs{0, 1};
    const auto c = conditional_normal(Vector::Zero(2), SymMatrix::identity(2), obs, Vector::Ones(2));
    EXPECT_TRUE(c.missing_idx.empty());
    EXPECT_EQ(c.mean.size(), 0);
}

TEST(ConditionalNormal, BlockDiagonalLeavesMissingBlockAlone) {
    Matrix cov = Matrix::Zero(4, 4);
    cov.block(0, 0, 2, 2) = mat2(2, 0.3, 0.3, 1);
    cov.block(2, 2, 2, 2) = mat2(1, -0.2, -0.2, 3);
    Vector mean(4);
    mean << 1, 2, 3, 4;
    const std::vector<Index> obs{2, 3};
    const auto c = conditional_normal(mean, SymMatrix(cov), obs, Vector::Constant(2, 10.0));
    EXPECT_EQ(c.mean, mean.head(2));
    EXPECT_EQ(c.cov.matrix(), cov.block(0, 0, 2, 2));
}

TEST(ConditionalNormal, SingularObservedBlockThrows) {
    const std::vector<Index> obs{1, 2};
    Matrix cov = Matrix::Zero(3, 3);
    cov(0, 0) = 1.0;
    EXPECT_THROW((void)conditional_regression(SymMatrix(cov), obs), DecompositionError);
}

TEST(ConditionalNormal, BadIndicesThrow) {
    const std::vector<Index> dup{0, 0};
    const std::vector<Index> out_of_range{5};
    EXPECT_THROW((void)conditional_regression(SymMatrix::identity(2), dup), std::invalid_argument);
    EXPECT_THROW((void)conditional_regression(SymMatrix::identity(2), out_of_range), std::invalid_argument);
}
