#include "mlmi/mixedfit.hpp"

#include "nelder_mead.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mlmi {

namespace {

using Eigen::Matrix2d;
using Eigen::Vector2d;

struct GlsSystem {
    Matrix2d a = Matrix2d::Zero();  // X^T V^-1 X
    Vector2d b = Vector2d::Zero();  // X^T V^-1 y
    double c = 0.0;                 // y^T V^-1 y
    double log_det_v = 0.0;         // sum_j log|V_j|
};

// V_j = I + Z L L^T Z^T, handled through M_j = I + L^T Z^T Z L.
GlsSystem assemble(const Matrix2d& lambda, const RcSufficientStats& stats) {
    GlsSystem sys;
    const Matrix2d lt = lambda.transpose();
    for (const auto& g : stats.groups) {
        const Matrix2d lts = lt * g.ztz;  // L^T S
        Matrix2d m = lts * lambda;
        m.diagonal().array() += 1.0;
        const Eigen::LLT<Matrix2d> llt(m);
        const Matrix2d lm = llt.matrixL();
        const Matrix2d w = lm.triangularView<Eigen::Lower>().solve(lts);
        const Vector2d v = lm.triangularView<Eigen::Lower>().solve(lt * g.zty);
        sys.a += g.ztz - w.transpose() * w;
        sys.b += g.zty - w.transpose() * v;
        sys.c += g.yty - v.squaredNorm();
        sys.log_det_v += 2.0 * (std::log(lm(0, 0)) + std::log(lm(1, 1)));
    }
    return sys;
}

struct Profile {
    double deviance = std::numeric_limits<double>::infinity();
    Vector2d beta = Vector2d::Zero();
    double sigma2 = 0.0;
    Matrix2d a_inv = Matrix2d::Zero();
};

Profile profile(const Matrix2d& lambda, const RcSufficientStats& stats) {
    Profile out;
    const GlsSystem sys = assemble(lambda, stats);
    const Eigen::LLT<Matrix2d> llt(sys.a);
    if (llt.info() != Eigen::Success || !(llt.matrixL()(1, 1) > 1e-12)) {
        return out;
    }
    out.beta = llt.solve(sys.b);
    const double r2 = sys.c - sys.b.dot(out.beta);
    const auto n = static_cast<double>(stats.n);
    if (!(r2 > 0.0)) {
        return out;
    }
    out.sigma2 = r2 / n;
    out.a_inv = llt.solve(Matrix2d::Identity());
    out.deviance = sys.log_det_v + n * (1.0 + std::log(2.0 * std::numbers::pi * out.sigma2));
    return out;
}

Matrix2d lambda_from(const Eigen::VectorXd& theta) {
    Matrix2d l;
    l << theta(0), 0.0, theta(1), theta(2);
    return l;
}

double ols_sigma2(const RcSufficientStats& stats) {
    return profile(Matrix2d::Zero(), stats).sigma2;
}

}  // namespace

RcSufficientStats rc_sufficient_stats(const TwoLevelDataset& ds) {
    if (ds.missing_count(Variable::x) > 0 || ds.missing_count(Variable::y) > 0) {
        throw std::invalid_argument("mixed-model fit requires complete x and y");
    }
    RcSufficientStats stats;
    stats.n = ds.rows();
    stats.groups.reserve(ds.groups());
    for (const GroupView& gv : ds.group_views()) {
        RcSufficientStats::Group g{Matrix2d::Zero(), Vector2d::Zero(), 0.0};
        for (std::size_t row : gv.rows) {
            const double x = ds.value(Variable::x, row);
            const double y = ds.value(Variable::y, row);
            g.ztz(0, 0) += 1.0;
            g.ztz(0, 1) += x;
            g.ztz(1, 1) += x * x;
            g.zty(0) += y;
            g.zty(1) += x * y;
            g.yty += y * y;
        }
        g.ztz(1, 0) = g.ztz(0, 1);
        stats.groups.push_back(g);
    }
    return stats;
}

double profiled_deviance(const Matrix2d& lambda, const RcSufficientStats& stats) {
    return profile(lambda, stats).deviance;
}

double profiled_deviance(const Matrix2d& lambda, const TwoLevelDataset& ds) {
    return profiled_deviance(lambda, rc_sufficient_stats(ds));
}

RcModelFit fit_rc_ml(const TwoLevelDataset& ds, const FitConfig& cfg) {
    if (ds.groups() < 2) {
        throw FitError("mixed-model fit needs at least 2 groups");
    }
    if (ds.rows() < 3) {
        throw FitError("mixed-model fit needs at least 3 rows");
    }
    if (!(cfg.tolerance > 0.0)) {
        throw std::invalid_argument("fit tolerance must be positive");
    }
    const RcSufficientStats stats = rc_sufficient_stats(ds);
    const double s2_ols = ols_sigma2(stats);
    if (!(s2_ols > 0.0)) {
        throw FitError("degenerate data: pooled regression has no residual variance or singular design");
    }

    const auto objective = [&](const Eigen::VectorXd& theta) { return profiled_deviance(lambda_from(theta), stats); };
    const auto start_at = [&](double delta) {
        const double d = std::sqrt(delta / s2_ols);
        return Eigen::Vector3d(d, 0.0, d);
    };
    constexpr double kStep = 0.1;

    auto run = detail::nelder_mead(objective, start_at(cfg.start_delta), kStep, cfg.tolerance, cfg.max_iterations);
    int iterations = run.iterations;
    if (!run.converged) {
        auto retry = detail::nelder_mead(objective, Eigen::Vector3d(std::sqrt(cfg.restart_delta), 0.0,
                                                                    std::sqrt(cfg.restart_delta)),
                                         kStep, cfg.tolerance, cfg.max_iterations);
        iterations += retry.iterations;
        if (retry.converged || retry.f < run.f) {
            run = std::move(retry);
        }
    }
    if (run.converged) {
        // A fresh simplex at the optimum guards against a collapsed simplex.
        auto polish = detail::nelder_mead(objective, run.x, kStep, cfg.tolerance, cfg.max_iterations);
        iterations += polish.iterations;
        if (polish.f <= run.f) {
            run.x = polish.x;
            run.f = polish.f;
            run.converged = polish.converged;
        }
    }

    Matrix2d lambda = lambda_from(run.x);
    if (lambda(0, 0) < 0.0) lambda.col(0) *= -1.0;
    if (lambda(1, 1) < 0.0) lambda(1, 1) = -lambda(1, 1);

    const Profile pr = profile(lambda, stats);
    if (!std::isfinite(pr.deviance)) {
        throw FitError("mixed-model fit failed: deviance is not finite at the optimum");
    }
    const Matrix2d psi = pr.sigma2 * lambda * lambda.transpose();

    RcModelFit fit;
    fit.beta0 = pr.beta(0);
    fit.beta1 = pr.beta(1);
    fit.psi11 = psi(0, 0);
    fit.psi22 = psi(1, 1);
    fit.psi12 = psi(0, 1);
    fit.sigma2 = pr.sigma2;
    fit.loglik = -0.5 * pr.deviance;
    fit.converged = run.converged;
    fit.n_used = ds.rows();
    fit.g_used = ds.groups();
    fit.iterations = iterations;
    fit.cov_beta = pr.sigma2 * pr.a_inv;
    fit.lambda = lambda;
    return fit;
}

RcModelFit fit_with_ld(const TwoLevelDataset& ds, const FitConfig& cfg) {
    return fit_rc_ml(listwise_delete(ds), cfg);
}

}  // namespace mlmi
