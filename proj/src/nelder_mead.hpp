#pragma once

// Derivative-free simplex minimizer used by the mixed-model fitter.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace mlmi::detail {

struct SimplexResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

/// Nelder-Mead with the standard coefficients (1, 2, 0.5, 0.5). Stops when
/// the spread of objective values over the simplex drops below `ftol`.
/// Non-finite objective values are treated as +inf.
template <class F>
SimplexResult nelder_mead(F&& f, const Eigen::VectorXd& x0, double step, double ftol, int max_iter) {
    const Eigen::Index n = x0.size();
    const auto eval = [&](const Eigen::VectorXd& x) {
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> vals(static_cast<std::size_t>(n + 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        pts[static_cast<std::size_t>(i + 1)](i) += step;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
        vals[i] = eval(pts[i]);
    }
    std::vector<std::size_t> order(pts.size());

    SimplexResult res;
    for (int it = 0; it < max_iter; ++it) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second = order[order.size() - 2];
        res.iterations = it;

        if (std::isfinite(vals[worst]) && vals[worst] - vals[best] < ftol) {
            res.converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
            centroid += pts[order[k]];
        }
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr < vals[best]) {
            const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[second]) {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        // Contraction, outside or inside.
        const bool outside = fr < vals[worst];
        const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                           : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = eval(xc);
        if (fc < (outside ? fr : vals[worst])) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for (std::size_t k = 0; k < pts.size(); ++k) {
            if (k == best) continue;
            pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
            vals[k] = eval(pts[k]);
        }
    }

    const auto best_it = std::min_element(vals.begin(), vals.end());
    res.x = pts[static_cast<std::size_t>(best_it - vals.begin())];
    res.f = *best_it;
    if (!res.converged) {
        res.iterations = max_iter;
    }
    return res;
}

}  // namespace mlmi::detail
