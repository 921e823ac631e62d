#pragma once

// Maximum-likelihood fit of the two-level random-coefficient regression
//   y_ij = beta0 + beta1 x_ij + b0_j + b1_j x_ij + e_ij,
//   (b0_j, b1_j) ~ N(0, Psi), e_ij ~ N(0, sigma2).

#include "mlmi/datamodel.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mlmi {

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitConfig {
    double tolerance = 1e-8;    // absolute deviance change
    int max_iterations = 2000;
    double start_delta = 0.1;   // initial Psi/sigma2 = diag(start_delta)/sigma2_OLS
    double restart_delta = 0.5; // used once if the first run does not converge
};

struct RcModelFit {
    double beta0 = 0.0;
    double beta1 = 0.0;
    double psi11 = 0.0;
    double psi22 = 0.0;
    double psi12 = 0.0;
    double sigma2 = 0.0;
    double loglik = 0.0;
    bool converged = false;
    std::size_t n_used = 0;
    std::size_t g_used = 0;
    int iterations = 0;
    /// Sampling covariance of (beta0, beta1) given the variance parameters.
    Eigen::Matrix2d cov_beta = Eigen::Matrix2d::Zero();
    /// Relative Cholesky factor of Psi/sigma2 at the optimum.
    Eigen::Matrix2d lambda = Eigen::Matrix2d::Zero();

    [[nodiscard]] Eigen::Matrix2d psi() const {
        Eigen::Matrix2d p;
        p << psi11, psi12, psi12, psi22;
        return p;
    }
};

/// Per-group cross products of Z = [1, x] and y. Z doubles as the fixed
/// design, so these are all the deviance needs.
struct RcSufficientStats {
    struct Group {
        Eigen::Matrix2d ztz;
        Eigen::Vector2d zty;
        double yty;
    };
    std::vector<Group> groups;
    std::size_t n = 0;
};

/// Throws std::invalid_argument if x or y has masked cells.
[[nodiscard]] RcSufficientStats rc_sufficient_stats(const TwoLevelDataset& ds);

/// -2 * profiled log-likelihood at relative factor lambda (Psi/sigma2 =
/// lambda*lambda^T), with beta and sigma2 at their closed-form maximizers.
/// Each group uses the 2x2 form |I + L^T Z^T Z L|; the sign of either column
/// of lambda does not matter. Returns +inf when the GLS system is singular.
[[nodiscard]] double profiled_deviance(const Eigen::Matrix2d& lambda, const RcSufficientStats& stats);
[[nodiscard]] double profiled_deviance(const Eigen::Matrix2d& lambda, const TwoLevelDataset& ds);

/// ML fit on complete data. Throws FitError on fewer than 2 groups or
/// fewer than 3 rows. A fit that exhausts max_iterations (after one
/// restart) comes back with converged = false and the best point found.
[[nodiscard]] RcModelFit fit_rc_ml(const TwoLevelDataset& ds, const FitConfig& cfg = {});

/// Listwise deletion over {x, y}, then fit_rc_ml.
[[nodiscard]] RcModelFit fit_with_ld(const TwoLevelDataset& ds, const FitConfig& cfg = {});

}  // namespace mlmi
