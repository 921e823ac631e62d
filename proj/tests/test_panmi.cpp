#include "mlmi/panmi.hpp"
#include "mlmi/pool_metrics.hpp"
#include "mlmi/simulate.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

using namespace mlmi;

namespace {

TwoLevelDataset population(std::uint64_t seed, std::size_t g, std::size_t n, double psi22 = 0.10) {
    PopulationSpec pop{g, n, 0.25, 0.25, 0.5, psi22};
    SeededRng rng(seed);
    return generate_dataset(pop, rng);
}

TwoLevelDataset masked(const TwoLevelDataset& full, Pattern pattern, double prop, std::uint64_t seed) {
    SeededRng rng(seed);
    return impose_missing(full, MissingnessSpec::make(pattern, Mechanism::mcar, prop), rng);
}

GibbsConfig small_run(int burn, int thin, int m, std::uint64_t seed = 1) {
    GibbsConfig cfg;
    cfg.burn_in = burn;
    cfg.thin = thin;
    cfg.m = m;
    cfg.seed = seed;
    cfg.record_trace = false;
    return cfg;
}

SymMatrix random_spd(Index d, SeededRng& rng) {
    const Matrix a = rng.normal_matrix(d, d);
    return SymMatrix::from_symmetric_part(a * a.transpose() + 0.5 * Matrix::Identity(d, d));
}

void check_random_effect_precision(const PanSpec& spec) {
    const auto ds = population(21, 2, 5);
    const PanData data(ds, spec);
    SeededRng rng(22);
    const Index r = spec.r(), q = spec.q(), p = spec.p();
    const SymMatrix sigma = random_spd(r, rng);
    const SymMatrix psi = random_spd(q * r, rng);
    const Matrix beta = rng.normal_matrix(p, r);
    for (const auto& g : data.groups()) {
        const Matrix y = rng.normal_matrix(static_cast<Index>(g.rows.size()), r);
        const auto cond = random_effect_conditional(g, y, beta, inverse_spd(sigma), inverse_spd(psi));
        auto f = [&](const Eigen::VectorXd& v) {
            return oracle::neg2_log_b_density(g, y, beta, sigma.matrix(), psi.matrix(), v);
        };
        const Matrix h = oracle::quadratic_hessian(f, q * r);
        const Matrix brute = 0.5 * h;
        for (Index i = 0; i < q * r; ++i)
            for (Index j = 0; j < q * r; ++j) EXPECT_NEAR(cond.precision(i, j), brute(i, j), 1e-8);
        const Eigen::VectorXd grad = oracle::quadratic_gradient_at_zero(f, h);
        const Eigen::VectorXd mean = -h.fullPivLu().solve(grad);
        for (Index i = 0; i < q * r; ++i) EXPECT_NEAR(cond.mean(i), mean(i), 1e-8);
    }
}

}  // namespace

TEST(PanSpec, LayoutDimensions) {
    const auto rc = build_rc_imputation();
    EXPECT_EQ(rc.r(), 1);
    EXPECT_EQ(rc.p(), 2);
    EXPECT_EQ(rc.q(), 2);
    EXPECT_EQ(rc.responses.front(), Variable::y);
    EXPECT_EQ(build_reversed_rc().responses.front(), Variable::x);
    const auto mv = build_multivariate();
    EXPECT_EQ(mv.r(), 2);
    EXPECT_EQ(mv.p(), 1);
    EXPECT_EQ(mv.q(), 1);
    for (auto m : {ImputationModel::rc, ImputationModel::reversed_rc, ImputationModel::multivariate}) {
        EXPECT_EQ(parse_imputation_model(to_string(m)), m);
    }
    EXPECT_THROW((void)parse_imputation_model("joint"), std::invalid_argument);
}

TEST(PanSpec, ValidationRejectsBadLayouts) {
    auto overlap = build_rc_imputation();
    overlap.fixed_covariates.push_back(Variable::y);
    EXPECT_THROW(overlap.validate(), std::invalid_argument);
    auto none = build_rc_imputation();
    none.responses.clear();
    EXPECT_THROW(none.validate(), std::invalid_argument);
    auto bad_prior = build_multivariate();
    bad_prior.prior.nu_sigma = 0.5;
    EXPECT_THROW(bad_prior.validate(), std::invalid_argument);
    auto wrong_dim = build_rc_imputation();
    wrong_dim.prior = least_informative_prior(1, 1);
    EXPECT_THROW(wrong_dim.validate(), std::invalid_argument);
}

TEST(PriorSpec, LeastInformativeIsIdentityWithDimensionDf) {
    const auto prior = least_informative_prior(2, 2);
    EXPECT_EQ(prior.s_sigma.matrix(), Matrix::Identity(2, 2));
    EXPECT_EQ(prior.nu_sigma, 2.0);
    EXPECT_EQ(prior.s_psi.matrix(), Matrix::Identity(2, 2));
    EXPECT_EQ(prior.nu_psi, 2.0);
    EXPECT_NO_THROW(prior.validate(2, 2));
}

TEST(GibbsConfig, PresetsAndValidation) {
    EXPECT_EQ(GibbsConfig::full().total_cycles(), 20000);
    EXPECT_EQ(GibbsConfig::full().m, 50);
    EXPECT_EQ(GibbsConfig::desk().total_cycles(), 2000);
    EXPECT_THROW(small_run(10, 0, 5).validate(), std::invalid_argument);
    EXPECT_THROW(small_run(-1, 1, 5).validate(), std::invalid_argument);
    EXPECT_THROW(small_run(10, 1, 0).validate(), std::invalid_argument);
}

TEST(PanData, RejectsMaskedDesignAndEmptyResponse) {
    const auto full = population(1, 10, 5);
    const auto x_masked = masked(full, Pattern::univariate_x, 0.3, 2);
    EXPECT_THROW(PanData(x_masked, build_rc_imputation()), std::invalid_argument);
    EXPECT_NO_THROW(PanData(x_masked, build_reversed_rc()));
    std::vector<bool> none(full.rows(), false);
    std::vector<std::int64_t> labels;
    std::vector<double> x, y;
    for (std::size_t i = 0; i < full.rows(); ++i) {
        labels.push_back(full.label(i));
        x.push_back(full.value(Variable::x, i));
        y.push_back(0.0);
    }
    const auto empty_y = TwoLevelDataset::from_columns(labels, x, y, {}, none);
    EXPECT_THROW(PanData(empty_y, build_rc_imputation()), std::invalid_argument);
}

TEST(PanData, RecordsIncompletePatterns) {
    const auto ds = masked(population(3, 20, 5), Pattern::multivariate, 0.4, 4);
    const PanData data(ds, build_multivariate());
    EXPECT_EQ(data.full_mask(), 3u);
    // one variable missing at a time
    EXPECT_EQ(data.patterns(), (std::vector<std::uint32_t>{1u, 2u}));
}

TEST(RandomEffectConditional, MatchesExpandedDensityConditional) { check_random_effect_precision(build_rc_imputation()); }

TEST(RandomEffectConditional, MatchesExpandedDensityMultivariate) {
    check_random_effect_precision(build_multivariate());
}

TEST(FixedEffectConditional, MatchesExpandedDensity) {
    const auto ds = population(23, 4, 6);
    const PanData data(ds, build_multivariate());
    SeededRng rng(24);
    GibbsState state = initial_state(data);
    state.sigma = random_spd(2, rng);
    for (auto& b : state.b) b = rng.normal_matrix(1, 2);
    const auto fe = fixed_effect_conditional(data, state);
    const Index p = 1, r = 2;
    auto f = [&](const Eigen::VectorXd& v) {
        const Matrix beta = Eigen::Map<const Matrix>(v.data(), p, r);
        const Matrix sigma_inv = state.sigma.matrix().inverse();
        double out = 0.0;
        for (std::size_t j = 0; j < data.groups().size(); ++j) {
            const auto& g = data.groups()[j];
            const Matrix e = state.y[j] - g.x * beta - g.z * state.b[j];
            out += (e * sigma_inv * e.transpose()).trace();
        }
        return out;
    };
    const Matrix h = oracle::quadratic_hessian(f, p * r);
    const Eigen::VectorXd mean = -h.fullPivLu().solve(oracle::quadratic_gradient_at_zero(f, h));
    for (Index k = 0; k < r; ++k) EXPECT_NEAR(fe.mean(0, k), mean(k), 1e-8);
    // vec(beta) has covariance Sigma (x) row_cov, the inverse of h / 2
    const Matrix cov = (0.5 * h).inverse();
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < r; ++j) EXPECT_NEAR(state.sigma(i, j) * fe.row_cov(0, 0), cov(i, j), 1e-8);
}

TEST(FixedEffectConditional, ZeroRandomEffectsGiveOls) {
    const auto ds = population(25, 30, 8);
    const PanData data(ds, build_rc_imputation());
    GibbsState state = initial_state(data);
    for (auto& b : state.b) b.setZero();
    const auto fe = fixed_effect_conditional(data, state);
    const auto ols = oracle::ols(ds);
    EXPECT_NEAR(fe.mean(0, 0), ols(0), 1e-10);
    EXPECT_NEAR(fe.mean(1, 0), ols(1), 1e-10);
}

TEST(InitialState, MeanFillAndShapes) {
    const auto ds = masked(population(26, 10, 5), Pattern::univariate_y, 0.3, 27);
    const PanData data(ds, build_rc_imputation());
    const GibbsState s = initial_state(data);
    double mean = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        if (ds.observed(Variable::y, i)) {
            mean += ds.value(Variable::y, i);
            ++n;
        }
    }
    mean /= static_cast<double>(n);
    for (std::size_t j = 0; j < data.groups().size(); ++j) {
        const auto& g = data.groups()[j];
        for (std::size_t i = 0; i < g.rows.size(); ++i) {
            if (!ds.observed(Variable::y, g.rows[i])) EXPECT_DOUBLE_EQ(s.y[j](static_cast<Index>(i), 0), mean);
        }
        EXPECT_TRUE(s.b[j].isZero());
    }
    EXPECT_EQ(s.psi.matrix(), 0.1 * Matrix::Identity(2, 2));
    EXPECT_EQ(s.cycle, 0);
}

TEST(GibbsCycle, CompleteDataResponsesNeverChange) {
    const auto ds = population(28, 10, 5);
    const PanData data(ds, build_multivariate());
    GibbsState s = initial_state(data);
    const auto y0 = s.y;
    SeededRng rng(29);
    for (int c = 0; c < 20; ++c) gibbs_cycle(s, data, rng);
    for (std::size_t j = 0; j < y0.size(); ++j) EXPECT_EQ(s.y[j], y0[j]);
    EXPECT_EQ(s.cycle, 20);
}

TEST(GibbsCycle, CovariancesStayPositiveDefinite) {
    for (auto model : {ImputationModel::rc, ImputationModel::multivariate}) {
        const Pattern pattern = model == ImputationModel::rc ? Pattern::univariate_y : Pattern::multivariate;
        const auto ds = masked(population(30, 15, 4, 0.01), pattern, 0.5, 31);
        const PanData data(ds, build_imputation_model(model));
        GibbsState s = initial_state(data);
        SeededRng rng(32);
        for (int c = 0; c < 500; ++c) {
            gibbs_cycle(s, data, rng);
            ASSERT_TRUE(cholesky(s.sigma).has_value()) << "cycle " << c;
            ASSERT_TRUE(cholesky(s.psi).has_value()) << "cycle " << c;
            ASSERT_EQ(s.sigma.matrix(), s.sigma.matrix().transpose());
            ASSERT_EQ(s.psi.matrix(), s.psi.matrix().transpose());
        }
    }
}

TEST(GibbsCycle, DegenerateStateCarriesCycle) {
    const auto ds = masked(population(33, 10, 5), Pattern::univariate_y, 0.3, 34);
    const PanData data(ds, build_rc_imputation());
    GibbsState s = initial_state(data);
    s.cycle = 41;
    s.sigma = SymMatrix::zero(1);
    SeededRng rng(35);
    try {
        gibbs_cycle(s, data, rng);
        FAIL() << "expected DegenerateStateError";
    } catch (const DegenerateStateError& e) {
        EXPECT_EQ(e.cycle(), 42);
        EXPECT_NE(std::string(e.what()).find("cycle 42"), std::string::npos);
    }
}

TEST(RunImputation, ObservedCellsAreCopiedExactly) {
    for (auto model : {ImputationModel::rc, ImputationModel::reversed_rc, ImputationModel::multivariate}) {
        const Pattern pattern = model == ImputationModel::rc            ? Pattern::univariate_y
                                : model == ImputationModel::reversed_rc ? Pattern::univariate_x
                                                                        : Pattern::multivariate;
        const auto ds = masked(population(36, 20, 5), pattern, 0.3, 37);
        SeededRng rng(38);
        const auto res = run_imputation(ds, build_imputation_model(model), small_run(50, 10, 4), rng);
        ASSERT_EQ(res.imputations.size(), 4u);
        for (const auto& imp : res.imputations) {
            EXPECT_TRUE(imp.complete());
            ASSERT_EQ(imp.rows(), ds.rows());
            for (std::size_t i = 0; i < ds.rows(); ++i) {
                EXPECT_EQ(imp.label(i), ds.label(i));
                for (Variable v : {Variable::x, Variable::y}) {
                    if (ds.observed(v, i)) EXPECT_EQ(imp.value(v, i), ds.value(v, i));
                }
            }
        }
        EXPECT_NE(res.imputations[0], res.imputations[1]);
    }
}

TEST(RunImputation, CompleteDataGivesIdenticalCopies) {
    const auto ds = population(39, 10, 5);
    SeededRng rng(40);
    const auto res = run_imputation(ds, build_rc_imputation(), small_run(10, 5, 3), rng);
    ASSERT_EQ(res.imputations.size(), 3u);
    for (const auto& imp : res.imputations) EXPECT_EQ(imp, ds);
}

TEST(RunImputation, TraceLengthAndDeterminism) {
    const auto ds = masked(population(41, 10, 5), Pattern::univariate_y, 0.3, 42);
    auto cfg = small_run(30, 7, 5);
    cfg.record_trace = true;
    SeededRng a(43), b(43);
    const auto ra = run_imputation(ds, build_rc_imputation(), cfg, a);
    const auto rb = run_imputation(ds, build_rc_imputation(), cfg, b);
    EXPECT_EQ(ra.trace.cycles(), static_cast<std::size_t>(cfg.total_cycles()));
    // beta (2) + sigma (1) + psi upper triangle (3)
    EXPECT_EQ(ra.trace.names.size(), 6u);
    EXPECT_EQ(ra.trace.values, rb.trace.values);
    EXPECT_EQ(ra.imputations, rb.imputations);
}

TEST(RunImputation, TinyChainIsStationaryAcrossSeeds) {
    // two groups of two, one masked y
    const auto ds = TwoLevelDataset::from_columns({1, 1, 2, 2}, {-0.8, 0.6, 0.3, 1.2}, {-0.5, 0.9, 0.1, 0.0}, {},
                                                  {true, true, true, false});
    auto draws = [&](std::uint64_t seed) {
        SeededRng rng(seed);
        const auto res = run_imputation(ds, build_multivariate(), small_run(1000, 10, 10000, seed), rng);
        std::vector<double> v;
        for (const auto& imp : res.imputations) v.push_back(imp.value(Variable::y, 3));
        return v;
    };
    EXPECT_LT(oracle::ks_statistic(draws(44), draws(45)), 0.03);
}

TEST(RunImputation, SmallMissingFractionRecoversCompleteDataFit) {
    const auto full = population(46, 150, 30);
    const auto ds = masked(full, Pattern::univariate_y, 0.01, 47);
    SeededRng rng(48);
    const auto res = run_imputation(ds, build_rc_imputation(), small_run(1000, 50, 20), rng);
    std::vector<RcModelFit> fits;
    for (const auto& imp : res.imputations) fits.push_back(fit_rc_ml(imp));
    const auto pooled = pool_rubin(fits);
    const auto cd = fit_rc_ml(full);
    for (Parameter p : kParameters) {
        EXPECT_NEAR(pooled.estimate(p), parameter_value(cd, p), 0.02) << to_string(p);
    }
}

TEST(AdjustedPrior, TwiceTheListwiseEstimate) {
    const auto ds = masked(population(49, 50, 10), Pattern::univariate_y, 0.25, 50);
    const auto prior = adjusted_prior_from_ld(ds, build_rc_imputation());
    const auto ld = fit_with_ld(ds);
    for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) EXPECT_NEAR(prior.s_psi(i, j), 2.0 * ld.psi()(i, j), 1e-10);
    EXPECT_EQ(prior.nu_psi, 2.0);
    EXPECT_EQ(prior.s_sigma.matrix(), Matrix::Identity(1, 1));
    EXPECT_EQ(prior.nu_sigma, 1.0);
    EXPECT_NO_THROW(prior.validate(1, 2));
}

TEST(AdjustedPrior, DiagonalExample) {
    // S = 2 Psi and nu = 2 give the pseudo-guess S / nu = Psi.
    const auto ds = masked(population(51, 50, 10), Pattern::univariate_y, 0.25, 52);
    const auto prior = adjusted_prior_from_ld(ds, build_rc_imputation());
    const Matrix guess = prior.s_psi.matrix() / prior.nu_psi;
    EXPECT_NEAR((guess - fit_with_ld(ds).psi()).norm(), 0.0, 1e-10);
}

TEST(AdjustedPrior, ReversedLayoutRegressesXOnY) {
    const auto ds = masked(population(53, 50, 10), Pattern::univariate_x, 0.25, 54);
    const auto cc = listwise_delete(ds);
    std::vector<std::int64_t> labels;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < cc.rows(); ++i) {
        labels.push_back(cc.label(i));
        xs.push_back(cc.value(Variable::y, i));
        ys.push_back(cc.value(Variable::x, i));
    }
    const auto swapped = fit_rc_ml(TwoLevelDataset::from_columns(labels, xs, ys));
    const auto prior = adjusted_prior_from_ld(ds, build_reversed_rc());
    EXPECT_NEAR((prior.s_psi.matrix() - 2.0 * swapped.psi()).norm(), 0.0, 1e-10);
    EXPECT_THROW((void)adjusted_prior_from_ld(ds, build_multivariate()), std::invalid_argument);
}

TEST(AdjustedPrior, SingularEstimateIsJittered) {
    GeneratingModel m;
    m.n_groups = 40;
    m.group_size = 10;
    m.var_x_within = 1.0;
    m.beta1 = 0.5;
    m.sigma2 = 0.75;
    SeededRng rng(55);
    const auto ds = generate_dataset(m, rng);
    const auto ld = fit_with_ld(ds);
    const auto prior = adjusted_prior_from_ld(ds, build_rc_imputation());
    EXPECT_TRUE(cholesky(prior.s_psi).has_value());
    EXPECT_NEAR((prior.s_psi.matrix() - 2.0 * ld.psi()).norm(), 0.0, 1e-6);
}

TEST(AdjustedPrior, TooFewRowsSuggestsFallback) {
    const auto ds = TwoLevelDataset::from_columns({1, 1, 1}, {0.1, 0.2, 0.3}, {1, 2, 3});
    try {
        (void)adjusted_prior_from_ld(ds, build_rc_imputation());
        FAIL() << "expected FitError";
    } catch (const FitError& e) {
        EXPECT_NE(std::string(e.what()).find("least-informative"), std::string::npos);
    }
}

TEST(Autocorrelation, ConstantChainIsUndefined) {
    const std::vector<double> c(100, 2.5);
    EXPECT_FALSE(autocorrelation(c, 1).has_value());
    const std::vector<double> shortc = {1.0, 2.0};
    EXPECT_FALSE(autocorrelation(shortc, 2).has_value());
}

TEST(Autocorrelation, WhiteNoiseNearZero) {
    SeededRng rng(56);
    std::vector<double> c(10000);
    for (double& v : c) v = rng.normal();
    EXPECT_NEAR(*autocorrelation(c, 1), 0.0, 0.05);
    EXPECT_NEAR(*autocorrelation(c, 0), 1.0, 1e-12);
}

TEST(Autocorrelation, Ar1RecoversPhi) {
    SeededRng rng(57);
    std::vector<double> c(20000);
    double v = 0.0;
    for (double& e : c) e = v = 0.9 * v + rng.normal();
    EXPECT_NEAR(*autocorrelation(c, 1), 0.9, 0.05);
    EXPECT_NEAR(*autocorrelation(c, 10), std::pow(0.9, 10), 0.05);
}

TEST(ExportDiagnostics, LongFormat) {
    ChainTrace trace;
    trace.names = {"a", "b"};
    trace.values = {{1.0, 5.0}, {2.0, 5.0}, {3.0, 5.0}};
    std::ostringstream out;
    export_diagnostics(trace, out);
    const std::string expected =
        "parameter,kind,index,value\n"
        "a,trace,1,1\n"
        "a,trace,2,2\n"
        "a,trace,3,3\n"
        "a,acf,1,0\n"
        "a,acf,10,\n"
        "a,acf,50,\n"
        "a,acf,200,\n"
        "b,trace,1,5\n"
        "b,trace,2,5\n"
        "b,trace,3,5\n"
        "b,acf,1,\n"
        "b,acf,10,\n"
        "b,acf,50,\n"
        "b,acf,200,\n";
    EXPECT_EQ(out.str(), expected);
}
