#pragma once

// Dense linear algebra and seeded sampling shared by every other module.
// Dimensions here are small (p <= ~8); nothing is tuned for large matrices.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace mlmi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Raised when a Cholesky factorization fails even after the single jitter
/// retry. Callers inside the sampler translate this into a degenerate-state
/// error that carries the cycle index.
class DecompositionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Square matrix that is symmetric to within 1e-12 (relative to its largest
/// entry). The stored copy is exactly symmetric.
class SymMatrix {
public:
    SymMatrix() = default;
    explicit SymMatrix(const Matrix& m);

    static SymMatrix identity(Index p);
    static SymMatrix zero(Index p);
    /// Symmetrizes (m + m^T)/2 without checking; for results that are
    /// symmetric up to rounding by construction.
    static SymMatrix from_symmetric_part(const Matrix& m);

    [[nodiscard]] const Matrix& matrix() const { return m_; }
    [[nodiscard]] Index dim() const { return m_.rows(); }
    [[nodiscard]] double operator()(Index i, Index j) const { return m_(i, j); }
    [[nodiscard]] double trace() const { return m_.trace(); }

private:
    Matrix m_;
};

/// Deterministic random stream identified by (seed, stream). Two instances
/// constructed from the same pair produce bitwise-identical sequences.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream = 0);

    /// Independent child stream; derivation is a pure function of
    /// (seed, stream, substream).
    [[nodiscard]] SeededRng derive(std::uint64_t substream) const;

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t stream() const { return stream_; }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double chi_squared(double df);
    bool coin() { return uniform() < 0.5; }

    Vector normal_vector(Index n);
    Matrix normal_matrix(Index rows, Index cols);

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Lower Cholesky factor L with L*L^T = a. Pivots below 1e-12 count as
/// failure; one retry with 1e-10*trace/p added to the diagonal is made
/// before giving up.
[[nodiscard]] std::optional<Matrix> cholesky(const SymMatrix& a);

/// Same as cholesky() but throws DecompositionError on failure.
[[nodiscard]] Matrix cholesky_or_throw(const SymMatrix& a, const char* what);

/// Inverse of a positive definite matrix via its Cholesky factor.
[[nodiscard]] SymMatrix inverse_spd(const SymMatrix& a);

/// log|a| for positive definite a.
[[nodiscard]] double log_det_spd(const SymMatrix& a);

/// mean + L*z with z standard normal. Positive semidefinite covariances are
/// allowed (a pivoted LDL^T factor is used), so a zero covariance returns
/// the mean exactly.
[[nodiscard]] Vector sample_mvnormal(const Vector& mean, const SymMatrix& cov, SeededRng& rng);

/// Draw W from the inverse-Wishart with density
///   |W|^(-(df+p+1)/2) * exp(-tr(scale * W^-1) / 2),
/// i.e. W^-1 ~ Wishart(scale^-1, df) and E[W] = scale / (df - p - 1).
/// Sampled with the Bartlett decomposition; requires df > p - 1.
[[nodiscard]] SymMatrix sample_invwishart(const SymMatrix& scale, double df, SeededRng& rng);

/// Gaussian conditioning expressed as a regression of the missing block on
/// the observed block: E[v_M | v_O] = mu_M + coef * (v_O - mu_O).
struct ConditionalRegression {
    std::vector<Index> missing_idx;
    std::vector<Index> observed_idx;
    Matrix coef;     // |M| x |O|
    SymMatrix cov;   // |M| x |M|
};

/// Throws DecompositionError when the observed block is singular.
[[nodiscard]] ConditionalRegression conditional_regression(const SymMatrix& cov,
                                                           std::span<const Index> observed_idx);

struct ConditionalNormal {
    std::vector<Index> missing_idx;
    Vector mean;
    SymMatrix cov;
};

[[nodiscard]] ConditionalNormal conditional_normal(const Vector& mean, const SymMatrix& cov,
                                                   std::span<const Index> observed_idx,
                                                   const Vector& observed_vals);

}  // namespace mlmi
