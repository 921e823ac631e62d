#pragma once

#include "mlmi/mixedfit.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mlmi {

/// Parameters of the analyst's random-coefficient model, in report order.
enum class Parameter { beta0, beta1, psi11, psi22, psi12, sigma2 };

inline constexpr std::array<Parameter, 6> kParameters = {Parameter::beta0, Parameter::beta1, Parameter::psi11,
                                                         Parameter::psi22, Parameter::psi12, Parameter::sigma2};

[[nodiscard]] const char* to_string(Parameter p);
[[nodiscard]] Parameter parse_parameter(std::string_view s);
[[nodiscard]] double parameter_value(const RcModelFit& fit, Parameter p);
/// Sampling variance from the fit when the fitter provides one (fixed
/// effects only); variance components have none.
[[nodiscard]] std::optional<double> sampling_variance(const RcModelFit& fit, Parameter p);

class PoolingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PooledParameter {
    double estimate = 0.0;          // mean over the M fits
    double between = 0.0;           // B, sample variance of the estimates
    std::optional<double> within;   // W-bar
    std::optional<double> total;    // W-bar + (1 + 1/M) B
    std::optional<double> df;       // Rubin's degrees of freedom (inf when B = 0)
};

struct PooledEstimates {
    std::array<PooledParameter, 6> params{};
    std::size_t m_used = 0;
    std::size_t m_excluded = 0;

    [[nodiscard]] const PooledParameter& operator[](Parameter p) const { return params[static_cast<std::size_t>(p)]; }
    [[nodiscard]] double estimate(Parameter p) const { return (*this)[p].estimate; }
};

/// Rubin's rules over the converged fits; non-converged fits are skipped
/// and counted. Throws PoolingError when fewer than 2 fits remain.
[[nodiscard]] PooledEstimates pool_rubin(std::span<const RcModelFit> fits);

/// mean(estimates) - truth. Throws std::invalid_argument on empty input.
[[nodiscard]] double bias(std::span<const double> estimates, double truth);
/// sqrt(mean((estimates - truth)^2)). Throws std::invalid_argument on empty input.
[[nodiscard]] double rmse(std::span<const double> estimates, double truth);

struct ParameterMetrics {
    double bias = 0.0;
    double rmse = 0.0;
    std::size_t n_reps = 0;
    std::size_t n_converged = 0;
};

using CellMetrics = std::array<ParameterMetrics, 6>;

}  // namespace mlmi
