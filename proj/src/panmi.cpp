#include "mlmi/panmi.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace mlmi {

namespace {

Matrix kron(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

double column_value(const TwoLevelDataset& ds, Variable v, std::size_t row) { return ds.value(v, row); }

std::string dump_state(const GibbsState& s) {
    std::ostringstream os;
    os << "sigma =\n" << s.sigma.matrix() << "\npsi =\n" << s.psi.matrix() << "\nbeta =\n" << s.beta;
    return os.str();
}

std::vector<Index> observed_indices(std::uint32_t mask, Index r) {
    std::vector<Index> idx;
    for (Index k = 0; k < r; ++k) {
        if (mask & (1u << k)) idx.push_back(k);
    }
    return idx;
}

// Precision and linear term of the random-effect conditional.
void random_effect_terms(const PanData::Group& g, const Matrix& y, const Matrix& beta, const SymMatrix& sigma_inv,
                         const SymMatrix& psi_inv, Matrix& precision, Vector& rhs) {
    const Matrix ztr = g.z.transpose() * y - g.ztx * beta;  // q x r
    const Matrix rhs_mat = ztr * sigma_inv.matrix();
    rhs = Eigen::Map<const Vector>(rhs_mat.data(), rhs_mat.size());
    precision = psi_inv.matrix() + kron(sigma_inv.matrix(), g.ztz);
}

struct PatternDraw {
    std::vector<Index> missing;
    std::vector<Index> observed;
    Matrix coef;
    Matrix chol;
};

}  // namespace

DegenerateStateError::DegenerateStateError(long cycle, const std::string& what)
    : std::runtime_error("degenerate sampler state at cycle " + std::to_string(cycle) + ": " + what),
      cycle_(cycle) {}

void PriorSpec::validate(Index r, Index qr) const {
    if (s_sigma.dim() != r || s_psi.dim() != qr) {
        throw std::invalid_argument("prior scale dimensions do not match the model layout");
    }
    if (!(nu_sigma > static_cast<double>(r) - 1.0) || (qr > 0 && !(nu_psi > static_cast<double>(qr) - 1.0))) {
        throw std::invalid_argument("prior degrees of freedom must exceed dimension - 1");
    }
    if (!cholesky(s_sigma) || (qr > 0 && !cholesky(s_psi))) {
        throw std::invalid_argument("prior scale matrices must be positive definite");
    }
}

PriorSpec least_informative_prior(Index r, Index qr) {
    return PriorSpec{SymMatrix::identity(r), static_cast<double>(r), SymMatrix::identity(qr),
                     static_cast<double>(qr)};
}

void PanSpec::validate() const {
    if (responses.empty() || responses.size() > 2) {
        throw std::invalid_argument("imputation model needs one or two response variables");
    }
    for (Variable v : fixed_covariates) {
        if (std::find(responses.begin(), responses.end(), v) != responses.end()) {
            throw std::invalid_argument("a response cannot also be a fixed covariate");
        }
    }
    for (Variable v : random_covariates) {
        if (std::find(responses.begin(), responses.end(), v) != responses.end()) {
            throw std::invalid_argument("a response cannot also be a random covariate");
        }
    }
    prior.validate(r(), q() * r());
}

PanSpec build_rc_imputation() {
    PanSpec s;
    s.responses = {Variable::y};
    s.fixed_covariates = {Variable::x};
    s.random_intercept = true;
    s.random_covariates = {Variable::x};
    s.prior = least_informative_prior(1, 2);
    return s;
}

PanSpec build_reversed_rc() {
    PanSpec s;
    s.responses = {Variable::x};
    s.fixed_covariates = {Variable::y};
    s.random_intercept = true;
    s.random_covariates = {Variable::y};
    s.prior = least_informative_prior(1, 2);
    return s;
}

PanSpec build_multivariate() {
    PanSpec s;
    s.responses = {Variable::x, Variable::y};
    s.random_intercept = true;
    s.prior = least_informative_prior(2, 2);
    return s;
}

PanSpec build_imputation_model(ImputationModel model) {
    switch (model) {
        case ImputationModel::rc: return build_rc_imputation();
        case ImputationModel::reversed_rc: return build_reversed_rc();
        case ImputationModel::multivariate: return build_multivariate();
    }
    throw std::invalid_argument("unknown imputation model");
}

ImputationModel parse_imputation_model(std::string_view s) {
    if (s == "rc") return ImputationModel::rc;
    if (s == "reversed") return ImputationModel::reversed_rc;
    if (s == "multivariate") return ImputationModel::multivariate;
    throw std::invalid_argument("unknown imputation model '" + std::string(s) + "'");
}

std::string to_string(ImputationModel m) {
    switch (m) {
        case ImputationModel::rc: return "rc";
        case ImputationModel::reversed_rc: return "reversed";
        case ImputationModel::multivariate: return "multivariate";
    }
    return "?";
}

void GibbsConfig::validate() const {
    if (burn_in < 0 || thin <= 0 || m <= 0) {
        throw std::invalid_argument("Gibbs configuration needs burn_in >= 0, thin > 0 and m > 0");
    }
}

PanData::PanData(const TwoLevelDataset& ds, PanSpec spec) : ds_(ds), spec_(std::move(spec)) {
    spec_.validate();
    const Index r = spec_.r();
    const Index p = spec_.p();
    const Index q = spec_.q();

    auto require_complete = [&](Variable v) {
        if (ds_.missing_count(v) > 0) {
            throw std::invalid_argument(std::string("design variable ") + to_string(v) +
                                        " must be fully observed for this imputation model");
        }
    };
    for (Variable v : spec_.fixed_covariates) require_complete(v);
    for (Variable v : spec_.random_covariates) require_complete(v);
    for (Variable v : spec_.responses) {
        if (ds_.missing_count(v) == ds_.rows()) {
            throw std::invalid_argument(std::string("response ") + to_string(v) + " has no observed values");
        }
    }

    full_mask_ = (1u << r) - 1u;
    std::vector<bool> seen(static_cast<std::size_t>(full_mask_) + 1, false);
    xtx_total_ = Matrix::Zero(p, p);
    groups_.reserve(ds_.groups());
    for (const GroupView& gv : ds_.group_views()) {
        Group g;
        const auto n = static_cast<Index>(gv.rows.size());
        g.rows.assign(gv.rows.begin(), gv.rows.end());
        g.x.resize(n, p);
        g.z.resize(n, q);
        g.y = Matrix::Zero(n, r);
        g.observed.resize(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            const std::size_t row = g.rows[static_cast<std::size_t>(i)];
            g.x(i, 0) = 1.0;
            for (Index c = 0; c + 1 < p; ++c) {
                g.x(i, c + 1) = column_value(ds_, spec_.fixed_covariates[static_cast<std::size_t>(c)], row);
            }
            Index zc = 0;
            if (spec_.random_intercept) g.z(i, zc++) = 1.0;
            for (Variable v : spec_.random_covariates) g.z(i, zc++) = column_value(ds_, v, row);
            std::uint32_t mask = 0;
            for (Index k = 0; k < r; ++k) {
                if (auto v = ds_.get(spec_.responses[static_cast<std::size_t>(k)], row)) {
                    g.y(i, k) = *v;
                    mask |= 1u << k;
                }
            }
            g.observed[static_cast<std::size_t>(i)] = mask;
            if (mask != full_mask_ && !seen[mask]) {
                seen[mask] = true;
                patterns_.push_back(mask);
            }
        }
        g.ztz = g.z.transpose() * g.z;
        g.ztx = g.z.transpose() * g.x;
        xtx_total_ += g.x.transpose() * g.x;
        groups_.push_back(std::move(g));
    }
    std::sort(patterns_.begin(), patterns_.end());
    if (!cholesky(SymMatrix::from_symmetric_part(xtx_total_))) {
        throw std::invalid_argument("fixed-effects design is singular");
    }
}

GibbsState initial_state(const PanData& data) {
    const PanSpec& spec = data.spec();
    const Index r = spec.r();
    const Index p = spec.p();
    const Index q = spec.q();

    Vector col_sum = Vector::Zero(r);
    Vector col_n = Vector::Zero(r);
    for (const auto& g : data.groups()) {
        for (std::size_t i = 0; i < g.observed.size(); ++i) {
            for (Index k = 0; k < r; ++k) {
                if (g.observed[i] & (1u << k)) {
                    col_sum(k) += g.y(static_cast<Index>(i), k);
                    col_n(k) += 1.0;
                }
            }
        }
    }
    const Vector col_mean = col_sum.cwiseQuotient(col_n);

    GibbsState s;
    s.y.reserve(data.groups().size());
    Matrix xty = Matrix::Zero(p, r);
    for (const auto& g : data.groups()) {
        Matrix y = g.y;
        for (std::size_t i = 0; i < g.observed.size(); ++i) {
            for (Index k = 0; k < r; ++k) {
                if (!(g.observed[i] & (1u << k))) y(static_cast<Index>(i), k) = col_mean(k);
            }
        }
        xty += g.x.transpose() * y;
        s.y.push_back(std::move(y));
    }
    s.beta = data.xtx_total().ldlt().solve(xty);

    Matrix ete = Matrix::Zero(r, r);
    for (std::size_t j = 0; j < data.groups().size(); ++j) {
        const Matrix e = s.y[j] - data.groups()[j].x * s.beta;
        ete += e.transpose() * e;
    }
    SymMatrix sigma0 = SymMatrix::from_symmetric_part(ete / static_cast<double>(data.rows()));
    s.sigma = cholesky(sigma0) ? sigma0 : SymMatrix::identity(r);
    s.psi = SymMatrix::from_symmetric_part(0.1 * Matrix::Identity(q * r, q * r));
    s.b.assign(data.groups().size(), Matrix::Zero(q, r));
    return s;
}

RandomEffectConditional random_effect_conditional(const PanData::Group& g, const Matrix& y, const Matrix& beta,
                                                  const SymMatrix& sigma_inv, const SymMatrix& psi_inv) {
    Matrix precision;
    Vector rhs;
    random_effect_terms(g, y, beta, sigma_inv, psi_inv, precision, rhs);
    SymMatrix prec = SymMatrix::from_symmetric_part(precision);
    const Matrix l = cholesky_or_throw(prec, "random-effect precision");
    Vector mean = l.transpose().triangularView<Eigen::Upper>().solve(l.triangularView<Eigen::Lower>().solve(rhs));
    return RandomEffectConditional{std::move(mean), std::move(prec)};
}

FixedEffectConditional fixed_effect_conditional(const PanData& data, const GibbsState& state) {
    const PanSpec& spec = data.spec();
    Matrix rhs = Matrix::Zero(spec.p(), spec.r());
    for (std::size_t j = 0; j < data.groups().size(); ++j) {
        const auto& g = data.groups()[j];
        rhs += g.x.transpose() * state.y[j];
        if (spec.q() > 0) rhs -= g.ztx.transpose() * state.b[j];
    }
    const SymMatrix a = SymMatrix::from_symmetric_part(data.xtx_total());
    const Matrix c = cholesky_or_throw(a, "fixed-effects cross-product");
    Matrix mean = c.transpose().triangularView<Eigen::Upper>().solve(c.triangularView<Eigen::Lower>().solve(rhs));
    return FixedEffectConditional{std::move(mean), inverse_spd(a)};
}

void gibbs_cycle(GibbsState& state, const PanData& data, SeededRng& rng) {
    const long cycle = ++state.cycle;
    const PanSpec& spec = data.spec();
    const Index r = spec.r();
    const Index p = spec.p();
    const Index q = spec.q();
    const auto& groups = data.groups();

    try {
        const SymMatrix sigma_inv = inverse_spd(state.sigma);

        // (1) random effects
        if (q > 0) {
            const SymMatrix psi_inv = inverse_spd(state.psi);
            Matrix precision;
            Vector rhs;
            for (std::size_t j = 0; j < groups.size(); ++j) {
                random_effect_terms(groups[j], state.y[j], state.beta, sigma_inv, psi_inv, precision, rhs);
                const Matrix l = cholesky_or_throw(SymMatrix::from_symmetric_part(precision), "random-effect precision");
                const Vector mean =
                    l.transpose().triangularView<Eigen::Upper>().solve(l.triangularView<Eigen::Lower>().solve(rhs));
                const Vector draw = mean + l.transpose().triangularView<Eigen::Upper>().solve(rng.normal_vector(q * r));
                state.b[j] = Eigen::Map<const Matrix>(draw.data(), q, r);
            }
        }

        // (2) fixed effects: beta = mean + C^-T Z B^T with C C^T = sum X^T X, B B^T = Sigma
        {
            const FixedEffectConditional fe = fixed_effect_conditional(data, state);
            const Matrix c = cholesky_or_throw(SymMatrix::from_symmetric_part(data.xtx_total()), "fixed-effects cross-product");
            const Matrix bs = cholesky_or_throw(state.sigma, "sigma");
            const Matrix noise = c.transpose().triangularView<Eigen::Upper>().solve(rng.normal_matrix(p, r));
            state.beta = fe.mean + noise * bs.transpose();
        }

        // (3) Level-1 covariance
        {
            Matrix ete = spec.prior.s_sigma.matrix();
            for (std::size_t j = 0; j < groups.size(); ++j) {
                Matrix e = state.y[j] - groups[j].x * state.beta;
                if (q > 0) e.noalias() -= groups[j].z * state.b[j];
                ete.noalias() += e.transpose() * e;
            }
            state.sigma = sample_invwishart(SymMatrix::from_symmetric_part(ete),
                                            spec.prior.nu_sigma + static_cast<double>(data.rows()), rng);
        }

        // (4) random-effect covariance
        if (q > 0) {
            Matrix bbt = spec.prior.s_psi.matrix();
            for (const Matrix& b : state.b) {
                const Eigen::Map<const Vector> vb(b.data(), b.size());
                bbt.noalias() += vb * vb.transpose();
            }
            state.psi = sample_invwishart(SymMatrix::from_symmetric_part(bbt),
                                          spec.prior.nu_psi + static_cast<double>(groups.size()), rng);
        }

        // (5) missing cells, one conditional regression per observation pattern
        if (!data.patterns().empty()) {
            std::vector<PatternDraw> draws(static_cast<std::size_t>(data.full_mask()) + 1);
            for (std::uint32_t mask : data.patterns()) {
                const auto obs = observed_indices(mask, r);
                ConditionalRegression reg = conditional_regression(state.sigma, obs);
                PatternDraw& d = draws[mask];
                d.chol = cholesky_or_throw(reg.cov, "conditional covariance");
                d.missing = std::move(reg.missing_idx);
                d.observed = std::move(reg.observed_idx);
                d.coef = std::move(reg.coef);
            }
            for (std::size_t j = 0; j < groups.size(); ++j) {
                const auto& g = groups[j];
                Matrix& y = state.y[j];
                for (std::size_t i = 0; i < g.observed.size(); ++i) {
                    const std::uint32_t mask = g.observed[i];
                    if (mask == data.full_mask()) continue;
                    const auto ii = static_cast<Index>(i);
                    Eigen::RowVectorXd mu = g.x.row(ii) * state.beta;
                    if (q > 0) mu.noalias() += g.z.row(ii) * state.b[j];
                    const PatternDraw& d = draws[mask];
                    const auto nm = static_cast<Index>(d.missing.size());
                    Vector cm(nm);
                    for (Index a = 0; a < nm; ++a) cm(a) = mu(d.missing[static_cast<std::size_t>(a)]);
                    if (!d.observed.empty()) {
                        Vector dev(static_cast<Index>(d.observed.size()));
                        for (Index o = 0; o < dev.size(); ++o) {
                            const Index k = d.observed[static_cast<std::size_t>(o)];
                            dev(o) = y(ii, k) - mu(k);
                        }
                        cm.noalias() += d.coef * dev;
                    }
                    cm.noalias() += d.chol * rng.normal_vector(nm);
                    for (Index a = 0; a < nm; ++a) y(ii, d.missing[static_cast<std::size_t>(a)]) = cm(a);
                }
            }
        }
    } catch (const DecompositionError& e) {
        throw DegenerateStateError(cycle, std::string(e.what()) + "\n" + dump_state(state));
    }
}

std::vector<double> ChainTrace::series(std::size_t parameter) const {
    std::vector<double> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(v.at(parameter));
    return out;
}

namespace {

std::vector<std::string> trace_names(const PanSpec& spec) {
    std::vector<std::string> names;
    const Index r = spec.r(), p = spec.p(), qr = spec.q() * spec.r();
    for (Index k = 0; k < r; ++k)
        for (Index i = 0; i < p; ++i) names.push_back("beta_" + std::to_string(i + 1) + "_" + std::to_string(k + 1));
    for (Index i = 0; i < r; ++i)
        for (Index k = i; k < r; ++k) names.push_back("sigma_" + std::to_string(i + 1) + "_" + std::to_string(k + 1));
    for (Index i = 0; i < qr; ++i)
        for (Index k = i; k < qr; ++k) names.push_back("psi_" + std::to_string(i + 1) + "_" + std::to_string(k + 1));
    return names;
}

std::vector<double> trace_values(const GibbsState& s) {
    std::vector<double> v;
    for (Index k = 0; k < s.beta.cols(); ++k)
        for (Index i = 0; i < s.beta.rows(); ++i) v.push_back(s.beta(i, k));
    for (Index i = 0; i < s.sigma.dim(); ++i)
        for (Index k = i; k < s.sigma.dim(); ++k) v.push_back(s.sigma(i, k));
    for (Index i = 0; i < s.psi.dim(); ++i)
        for (Index k = i; k < s.psi.dim(); ++k) v.push_back(s.psi(i, k));
    return v;
}

TwoLevelDataset completed_dataset(const PanData& data, const GibbsState& s) {
    TwoLevelDataset out = data.dataset();
    const PanSpec& spec = data.spec();
    for (Index k = 0; k < spec.r(); ++k) {
        const Variable v = spec.responses[static_cast<std::size_t>(k)];
        if (out.missing_count(v) == 0) continue;
        std::vector<double> fill(out.rows(), 0.0);
        for (std::size_t j = 0; j < data.groups().size(); ++j) {
            const auto& g = data.groups()[j];
            for (std::size_t i = 0; i < g.rows.size(); ++i) {
                fill[g.rows[i]] = s.y[j](static_cast<Index>(i), k);
            }
        }
        out = out.with_imputed(v, fill);
    }
    return out;
}

}  // namespace

ImputationResult run_imputation(const TwoLevelDataset& ds, const PanSpec& spec, const GibbsConfig& cfg,
                                SeededRng& rng) {
    cfg.validate();
    const PanData data(ds, spec);
    GibbsState state = initial_state(data);

    ImputationResult out;
    if (cfg.record_trace) {
        out.trace.names = trace_names(data.spec());
        out.trace.values.reserve(static_cast<std::size_t>(cfg.total_cycles()));
    }
    out.imputations.reserve(static_cast<std::size_t>(cfg.m));
    const long total = cfg.total_cycles();
    for (long c = 1; c <= total; ++c) {
        gibbs_cycle(state, data, rng);
        if (cfg.record_trace) out.trace.values.push_back(trace_values(state));
        if (c > cfg.burn_in && (c - cfg.burn_in) % cfg.thin == 0) {
            out.imputations.push_back(completed_dataset(data, state));
        }
    }
    return out;
}

PriorSpec adjusted_prior_from_ld(const TwoLevelDataset& ds, const PanSpec& layout, const FitConfig& cfg) {
    const bool conditional = layout.r() == 1 && layout.q() == 2 && layout.random_intercept &&
                             layout.random_covariates.size() == 1;
    if (!conditional) {
        throw std::invalid_argument("the adjusted prior is defined for conditional (random-slope) layouts only");
    }
    RcModelFit fit;
    try {
        if (layout.responses.front() == Variable::y) {
            fit = fit_with_ld(ds, cfg);
        } else {
            // Regress x on y: swap the columns before fitting.
            const TwoLevelDataset cc = listwise_delete(ds);
            std::vector<std::int64_t> labels;
            std::vector<double> xs, ys;
            for (std::size_t i = 0; i < cc.rows(); ++i) {
                labels.push_back(cc.label(i));
                xs.push_back(cc.value(Variable::y, i));
                ys.push_back(cc.value(Variable::x, i));
            }
            fit = fit_rc_ml(TwoLevelDataset::from_columns(std::move(labels), std::move(xs), std::move(ys)), cfg);
        }
    } catch (const std::exception& e) {
        throw FitError(std::string("listwise-deletion fit failed (") + e.what() +
                       "); use the least-informative prior instead");
    }
    const SymMatrix psi_ld = SymMatrix::from_symmetric_part(fit.psi());
    const auto l = cholesky(psi_ld);
    if (!l) {
        throw FitError("listwise-deletion random-effect covariance is degenerate; use the least-informative prior instead");
    }
    // Carry the factor's (possibly jittered) matrix forward.
    const SymMatrix psi_pd = SymMatrix::from_symmetric_part(*l * l->transpose());

    PriorSpec prior = least_informative_prior(1, 2);
    prior.s_psi = SymMatrix::from_symmetric_part(2.0 * psi_pd.matrix());
    prior.nu_psi = 2.0;
    return prior;
}

std::optional<double> autocorrelation(std::span<const double> chain, std::size_t lag) {
    const std::size_t n = chain.size();
    if (lag >= n || n < 2) return std::nullopt;
    double mean = 0.0;
    for (double v : chain) mean += v;
    mean /= static_cast<double>(n);
    double denom = 0.0;
    for (double v : chain) denom += (v - mean) * (v - mean);
    if (!(denom > 0.0)) return std::nullopt;
    double num = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) num += (chain[t] - mean) * (chain[t + lag] - mean);
    return num / denom;
}

void export_diagnostics(const ChainTrace& trace, std::ostream& out) {
    out << "parameter,kind,index,value\n";
    for (std::size_t k = 0; k < trace.names.size(); ++k) {
        const std::vector<double> s = trace.series(k);
        for (std::size_t t = 0; t < s.size(); ++t) {
            out << trace.names[k] << ",trace," << (t + 1) << ',' << format_real(s[t]) << '\n';
        }
        for (std::size_t lag : kDiagnosticLags) {
            out << trace.names[k] << ",acf," << lag << ',';
            if (auto a = autocorrelation(s, lag)) out << format_real(*a);
            out << '\n';
        }
    }
    if (!out) {
        throw std::runtime_error("export_diagnostics: output stream failure");
    }
}

}  // namespace mlmi
