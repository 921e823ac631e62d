#include "mlmi/simulate.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>

namespace mlmi {

namespace {

constexpr double kMarWeight = 0.5;

double mnar_weight() { return std::sqrt(0.25 / 3.0); }

}  // namespace

VarianceComponents derive_variance_components(double rho_x, double rho_y, double beta1, double psi22) {
    if (!(rho_x > 0.0 && rho_x < 1.0) || !(rho_y > 0.0 && rho_y < 1.0)) {
        throw InvalidDesignError("ICCs must lie in (0, 1)");
    }
    if (!(psi22 >= 0.0)) {
        throw InvalidDesignError("slope variance must be nonnegative");
    }
    const double b2 = beta1 * beta1;
    VarianceComponents vc{};
    vc.sigma2 = (1.0 - rho_y) - b2 * (1.0 - rho_x) - psi22 * (1.0 - rho_x);
    vc.psi11 = rho_y - b2 * rho_x - psi22 * rho_x;
    if (!(vc.sigma2 > 0.0)) {
        throw InvalidDesignError("derived Level-1 residual variance is not positive");
    }
    if (!(vc.psi11 >= 0.0)) {
        throw InvalidDesignError("derived intercept variance is negative");
    }
    return vc;
}

GeneratingModel PopulationSpec::model() const {
    if (n_groups == 0 || group_size == 0) {
        throw InvalidDesignError("group count and group size must be positive");
    }
    const VarianceComponents vc = derive_variance_components(rho_x, rho_y, beta1, psi22);
    GeneratingModel m;
    m.n_groups = n_groups;
    m.group_size = group_size;
    m.var_x_between = rho_x;
    m.var_x_within = 1.0 - rho_x;
    m.beta0 = 0.0;
    m.beta1 = beta1;
    m.psi11 = vc.psi11;
    m.psi22 = psi22;
    m.psi12 = 0.0;
    m.sigma2 = vc.sigma2;
    return m;
}

TwoLevelDataset generate_dataset(const GeneratingModel& m, SeededRng& rng) {
    if (m.var_x_between < 0.0 || m.var_x_within < 0.0 || m.psi11 < 0.0 || m.psi22 < 0.0 || m.sigma2 < 0.0) {
        throw InvalidDesignError("generating variances must be nonnegative");
    }
    if (m.psi12 * m.psi12 > m.psi11 * m.psi22) {
        throw InvalidDesignError("random-effect covariance matrix is not positive semidefinite");
    }
    // Factor of [[psi11, psi12], [psi12, psi22]].
    const double l11 = std::sqrt(m.psi11);
    const double l21 = l11 > 0.0 ? m.psi12 / l11 : 0.0;
    const double l22 = std::sqrt(std::max(0.0, m.psi22 - l21 * l21));
    const double sd_xb = std::sqrt(m.var_x_between);
    const double sd_xw = std::sqrt(m.var_x_within);
    const double sd_e = std::sqrt(m.sigma2);

    const std::size_t n = m.n_groups * m.group_size;
    std::vector<std::int64_t> labels;
    std::vector<double> x, y;
    labels.reserve(n);
    x.reserve(n);
    y.reserve(n);
    for (std::size_t j = 0; j < m.n_groups; ++j) {
        const double xb = sd_xb * rng.normal();
        const double z0 = rng.normal();
        const double z1 = rng.normal();
        const double b0 = l11 * z0;
        const double b1 = l21 * z0 + l22 * z1;
        for (std::size_t i = 0; i < m.group_size; ++i) {
            const double xi = xb + sd_xw * rng.normal();
            const double e = sd_e * rng.normal();
            labels.push_back(static_cast<std::int64_t>(j + 1));
            x.push_back(xi);
            y.push_back(m.beta0 + b0 + (m.beta1 + b1) * xi + e);
        }
    }
    return TwoLevelDataset::from_columns(std::move(labels), std::move(x), std::move(y));
}

TwoLevelDataset generate_dataset(const PopulationSpec& spec, SeededRng& rng) {
    return generate_dataset(spec.model(), rng);
}

std::string to_string(Mechanism m) {
    switch (m) {
        case Mechanism::mcar: return "MCAR";
        case Mechanism::mar: return "MAR";
        case Mechanism::mnar: return "MNAR";
    }
    return "?";
}

std::string to_string(Pattern p) {
    switch (p) {
        case Pattern::univariate_y: return "univariate_y";
        case Pattern::univariate_x: return "univariate_x";
        case Pattern::multivariate: return "multivariate";
    }
    return "?";
}

Mechanism parse_mechanism(std::string_view s) {
    if (s == "MCAR" || s == "mcar") return Mechanism::mcar;
    if (s == "MAR" || s == "mar") return Mechanism::mar;
    if (s == "MNAR" || s == "mnar") return Mechanism::mnar;
    throw std::invalid_argument("unknown missingness mechanism '" + std::string(s) + "'");
}

Pattern parse_pattern(std::string_view s) {
    if (s == "univariate_y" || s == "y") return Pattern::univariate_y;
    if (s == "univariate_x" || s == "x") return Pattern::univariate_x;
    if (s == "multivariate") return Pattern::multivariate;
    throw std::invalid_argument("unknown missingness pattern '" + std::string(s) + "'");
}

double alpha_for_proportion(double pi) {
    if (!(pi > 0.0 && pi < 1.0)) {
        throw std::invalid_argument("missing-data proportion must lie in (0, 1)");
    }
    return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), pi);
}

double residual_variance_rstar(double l1, double l2, double cov_xy) {
    const double v = 1.0 - l1 * l1 - l2 * l2 - 2.0 * l1 * l2 * cov_xy;
    if (!(v > 0.0)) {
        throw InvalidDesignError("latent-response residual variance is not positive");
    }
    return v;
}

MechanismCoefficients mechanism_coefficients(Mechanism m, Variable target) {
    switch (m) {
        case Mechanism::mcar:
            return {0.0, 0.0};
        case Mechanism::mar:
            return target == Variable::y ? MechanismCoefficients{kMarWeight, 0.0}
                                         : MechanismCoefficients{0.0, kMarWeight};
        case Mechanism::mnar:
            return {mnar_weight(), mnar_weight()};
    }
    return {0.0, 0.0};
}

MissingnessSpec MissingnessSpec::make(Pattern pattern, Mechanism mechanism, double proportion, double cov_xy) {
    MissingnessSpec s;
    s.pattern = pattern;
    s.mechanism = mechanism;
    s.proportion = proportion;
    s.cov_xy = cov_xy;
    // The coefficients are symmetric in the target, so the y-target
    // decomposition gives (other, self) for every pattern.
    const MechanismCoefficients c = mechanism_coefficients(mechanism, Variable::y);
    s.lambda_other = c.on_x;
    s.lambda_self = c.on_y;
    return s;
}

void MissingnessSpec::validate() const {
    (void)alpha();
    if (mechanism == Mechanism::mcar && (lambda_other != 0.0 || lambda_self != 0.0)) {
        throw InvalidDesignError("MCAR requires both latent-response weights to be zero");
    }
    if (mechanism == Mechanism::mar && lambda_self != 0.0) {
        throw InvalidDesignError("MAR requires a zero weight on the target variable");
    }
    (void)residual_variance_rstar(lambda_other, lambda_self, cov_xy);
}

TwoLevelDataset impose_missing(const TwoLevelDataset& ds, const MissingnessSpec& spec, SeededRng& rng) {
    spec.validate();
    if (!ds.complete()) {
        throw std::invalid_argument("impose_missing: dataset already has missing cells");
    }
    const double alpha = spec.alpha();
    const double sd = std::sqrt(residual_variance_rstar(spec.lambda_other, spec.lambda_self, spec.cov_xy));
    SeededRng noise = rng.derive(0);
    SeededRng coin = rng.derive(1);

    const std::size_t n = ds.rows();
    std::vector<bool> miss_x(n, false), miss_y(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        Variable target = Variable::y;
        switch (spec.pattern) {
            case Pattern::univariate_y: target = Variable::y; break;
            case Pattern::univariate_x: target = Variable::x; break;
            case Pattern::multivariate: target = coin.coin() ? Variable::x : Variable::y; break;
        }
        const double rstar = alpha + spec.lambda_other * ds.value(other(target), i) +
                             spec.lambda_self * ds.value(target, i) + sd * noise.normal();
        if (rstar > 0.0) {
            (target == Variable::x ? miss_x : miss_y)[i] = true;
        }
    }
    return ds.with_missing(Variable::x, miss_x).with_missing(Variable::y, miss_y);
}

}  // namespace mlmi
