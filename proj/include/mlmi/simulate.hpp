#pragma once

#include "mlmi/datamodel.hpp"
#include "mlmi/statkern.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mlmi {

class InvalidDesignError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct VarianceComponents {
    double sigma2;  // Level-1 residual variance
    double psi11;   // intercept variance
};

/// Level-1 residual and intercept variances that make x and y standardized
/// with the requested intraclass correlations. Throws InvalidDesignError
/// when sigma2 <= 0 or psi11 < 0.
[[nodiscard]] VarianceComponents derive_variance_components(double rho_x, double rho_y, double beta1, double psi22);

/// Raw generating parameters of the bivariate two-level population.
struct GeneratingModel {
    std::size_t n_groups = 0;
    std::size_t group_size = 0;
    double var_x_between = 0.0;
    double var_x_within = 0.0;
    double beta0 = 0.0;
    double beta1 = 0.0;
    double psi11 = 0.0;
    double psi22 = 0.0;
    double psi12 = 0.0;
    double sigma2 = 0.0;
};

/// Standardized population parametrized by ICCs. beta0 and psi12 are zero.
struct PopulationSpec {
    std::size_t n_groups = 50;
    std::size_t group_size = 10;
    double rho_x = 0.05;
    double rho_y = 0.05;
    double beta1 = 0.5;
    double psi22 = 0.01;

    /// Throws InvalidDesignError when the spec is not realizable.
    [[nodiscard]] GeneratingModel model() const;
};

/// Complete dataset; group labels are 1..G and rows are grouped contiguously.
[[nodiscard]] TwoLevelDataset generate_dataset(const GeneratingModel& model, SeededRng& rng);
[[nodiscard]] TwoLevelDataset generate_dataset(const PopulationSpec& spec, SeededRng& rng);

enum class Mechanism { mcar, mar, mnar };
enum class Pattern { univariate_y, univariate_x, multivariate };

[[nodiscard]] std::string to_string(Mechanism m);
[[nodiscard]] std::string to_string(Pattern p);
[[nodiscard]] Mechanism parse_mechanism(std::string_view s);
[[nodiscard]] Pattern parse_pattern(std::string_view s);

/// Intercept of the latent response giving P(R* > 0) = pi.
[[nodiscard]] double alpha_for_proportion(double pi);

/// Residual variance of R* that keeps var(R*) = 1:
/// 1 - l1^2 - l2^2 - 2 l1 l2 cov_xy. Throws InvalidDesignError if <= 0.
[[nodiscard]] double residual_variance_rstar(double l1, double l2, double cov_xy);

struct MechanismCoefficients {
    double on_x;
    double on_y;
};

/// MCAR: none. MAR: 0.5 on the variable that is not the target. MNAR:
/// sqrt(0.25/3) on both, positive.
[[nodiscard]] MechanismCoefficients mechanism_coefficients(Mechanism m, Variable target);

struct MissingnessSpec {
    Pattern pattern = Pattern::univariate_y;
    Mechanism mechanism = Mechanism::mcar;
    double proportion = 0.25;
    double lambda_other = 0.0;  // weight of the driver (non-target) variable
    double lambda_self = 0.0;   // weight of the target variable itself
    double cov_xy = 0.5;        // population Cov(X, Y), equal to beta1 here

    /// Fills the lambdas from mechanism_coefficients().
    [[nodiscard]] static MissingnessSpec make(Pattern pattern, Mechanism mechanism, double proportion,
                                              double cov_xy = 0.5);

    [[nodiscard]] double alpha() const { return alpha_for_proportion(proportion); }
    void validate() const;
};

/// Masks cells through the latent response R* = alpha + l_other*other +
/// l_self*self + e; a target cell is masked when R* > 0. In the
/// multivariate pattern a per-row fair coin (drawn from its own substream)
/// picks which variable is the target, so no row loses both cells.
[[nodiscard]] TwoLevelDataset impose_missing(const TwoLevelDataset& ds, const MissingnessSpec& spec, SeededRng& rng);

}  // namespace mlmi
