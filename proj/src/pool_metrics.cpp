#include "mlmi/pool_metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace mlmi {

const char* to_string(Parameter p) {
    switch (p) {
        case Parameter::beta0: return "beta0";
        case Parameter::beta1: return "beta1";
        case Parameter::psi11: return "psi11";
        case Parameter::psi22: return "psi22";
        case Parameter::psi12: return "psi12";
        case Parameter::sigma2: return "sigma2";
    }
    return "?";
}

Parameter parse_parameter(std::string_view s) {
    for (Parameter p : kParameters) {
        if (s == to_string(p)) return p;
    }
    throw std::invalid_argument("unknown parameter '" + std::string(s) + "'");
}

double parameter_value(const RcModelFit& fit, Parameter p) {
    switch (p) {
        case Parameter::beta0: return fit.beta0;
        case Parameter::beta1: return fit.beta1;
        case Parameter::psi11: return fit.psi11;
        case Parameter::psi22: return fit.psi22;
        case Parameter::psi12: return fit.psi12;
        case Parameter::sigma2: return fit.sigma2;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> sampling_variance(const RcModelFit& fit, Parameter p) {
    switch (p) {
        case Parameter::beta0: return fit.cov_beta(0, 0);
        case Parameter::beta1: return fit.cov_beta(1, 1);
        default: return std::nullopt;
    }
}

PooledEstimates pool_rubin(std::span<const RcModelFit> fits) {
    std::vector<const RcModelFit*> used;
    for (const auto& f : fits) {
        if (f.converged) used.push_back(&f);
    }
    PooledEstimates out;
    out.m_used = used.size();
    out.m_excluded = fits.size() - used.size();
    if (used.size() < 2) {
        throw PoolingError("pooling needs at least 2 converged fits, got " + std::to_string(used.size()));
    }
    const auto m = static_cast<double>(used.size());
    for (Parameter p : kParameters) {
        PooledParameter& pp = out.params[static_cast<std::size_t>(p)];
        double sum = 0.0;
        for (const auto* f : used) sum += parameter_value(*f, p);
        pp.estimate = sum / m;
        double ss = 0.0;
        for (const auto* f : used) {
            const double d = parameter_value(*f, p) - pp.estimate;
            ss += d * d;
        }
        pp.between = ss / (m - 1.0);

        double wsum = 0.0;
        bool have_within = true;
        for (const auto* f : used) {
            const auto w = sampling_variance(*f, p);
            if (!w) {
                have_within = false;
                break;
            }
            wsum += *w;
        }
        if (have_within) {
            const double w = wsum / m;
            const double inflated_b = (1.0 + 1.0 / m) * pp.between;
            pp.within = w;
            pp.total = w + inflated_b;
            if (inflated_b > 0.0) {
                const double ratio = 1.0 + w / inflated_b;
                pp.df = (m - 1.0) * ratio * ratio;
            } else {
                pp.df = std::numeric_limits<double>::infinity();
            }
        }
    }
    return out;
}

double bias(std::span<const double> estimates, double truth) {
    if (estimates.empty()) {
        throw std::invalid_argument("bias of an empty estimate list");
    }
    double sum = 0.0;
    for (double e : estimates) sum += e;
    return sum / static_cast<double>(estimates.size()) - truth;
}

double rmse(std::span<const double> estimates, double truth) {
    if (estimates.empty()) {
        throw std::invalid_argument("rmse of an empty estimate list");
    }
    double ss = 0.0;
    for (double e : estimates) ss += (e - truth) * (e - truth);
    return std::sqrt(ss / static_cast<double>(estimates.size()));
}

}  // namespace mlmi
