#include "mlmi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace mlmi {

namespace {

constexpr std::uint64_t kGenerateStream = 0;
constexpr std::uint64_t kAmputeStream = 1;
constexpr std::uint64_t kMethodStreamBase = 16;

using Estimate = std::array<double, 6>;

Estimate estimate_of(const RcModelFit& f) {
    Estimate e{};
    for (Parameter p : kParameters) e[static_cast<std::size_t>(p)] = parameter_value(f, p);
    return e;
}

Estimate estimate_of(const PooledEstimates& pooled) {
    Estimate e{};
    for (Parameter p : kParameters) e[static_cast<std::size_t>(p)] = pooled.estimate(p);
    return e;
}

std::optional<Estimate> single_fit(const TwoLevelDataset& ds, const FitConfig& cfg) {
    const RcModelFit fit = fit_rc_ml(ds, cfg);
    if (!fit.converged) return std::nullopt;
    return estimate_of(fit);
}

std::optional<Estimate> multiple_imputation(const TwoLevelDataset& masked, PanSpec spec, const StudyDesign& design,
                                            SeededRng& rng) {
    GibbsConfig gibbs = design.gibbs;
    gibbs.record_trace = false;
    const ImputationResult imp = run_imputation(masked, spec, gibbs, rng);
    std::vector<RcModelFit> fits;
    fits.reserve(imp.imputations.size());
    for (const TwoLevelDataset& ds : imp.imputations) {
        try {
            fits.push_back(fit_rc_ml(ds, design.fit));
        } catch (const FitError&) {
            RcModelFit failed;
            failed.converged = false;
            fits.push_back(failed);
        }
    }
    return estimate_of(pool_rubin(fits));
}

std::optional<Estimate> run_method(Method method, const TwoLevelDataset& complete, const TwoLevelDataset& masked,
                                   const StudyDesign& design, SeededRng& rng) {
    try {
        switch (method) {
            case Method::cd: return single_fit(complete, design.fit);
            case Method::ld: return single_fit(listwise_delete(masked), design.fit);
            case Method::mv: return multiple_imputation(masked, build_multivariate(), design, rng);
            case Method::rc: return multiple_imputation(masked, design.conditional_layout(), design, rng);
            case Method::rc_adj: {
                PanSpec spec = design.conditional_layout();
                spec.prior = adjusted_prior_from_ld(masked, spec, design.fit);
                return multiple_imputation(masked, std::move(spec), design, rng);
            }
        }
    } catch (const std::runtime_error&) {
        // FitError, PoolingError, DegenerateStateError: a failed replication.
    }
    return std::nullopt;
}

CellResult aggregate(const Cell& cell, const StudyDesign& design, const std::vector<ReplicationOutcome>& outcomes) {
    CellResult out;
    out.cell = cell;
    const Estimate truth = cell.truth();
    double masked = 0.0;
    for (const auto& o : outcomes) {
        masked += o.masked_fraction;
        out.rows_both_masked += o.rows_both_masked;
    }
    out.masked_fraction = outcomes.empty() ? 0.0 : masked / static_cast<double>(outcomes.size());

    for (std::size_t k = 0; k < design.methods.size(); ++k) {
        MethodResult mr;
        mr.method = design.methods[k];
        std::array<std::vector<double>, 6> values;
        for (const auto& o : outcomes) {
            if (!o.estimates[k]) {
                ++mr.failures;
                continue;
            }
            for (std::size_t p = 0; p < 6; ++p) values[p].push_back((*o.estimates[k])[p]);
        }
        for (std::size_t p = 0; p < 6; ++p) {
            ParameterMetrics& pm = mr.metrics[p];
            pm.n_reps = outcomes.size();
            pm.n_converged = values[p].size();
            if (values[p].empty()) {
                pm.bias = pm.rmse = std::numeric_limits<double>::quiet_NaN();
            } else {
                pm.bias = bias(values[p], truth[p]);
                pm.rmse = rmse(values[p], truth[p]);
            }
        }
        out.methods.push_back(mr);
    }
    return out;
}

std::string optional_real(double v) { return std::isfinite(v) ? short_real(v) : std::string(); }

void write_cell_prefix(std::ostream& out, int study, const Cell& c) {
    out << study << ',' << c.n_groups << ',' << c.group_size << ',' << short_real(c.icc) << ','
        << short_real(c.slope_var) << ',' << short_real(c.md_prop) << ',' << to_string(c.mechanism);
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::cd: return "cd";
        case Method::ld: return "ld";
        case Method::mv: return "mv";
        case Method::rc: return "rc";
        case Method::rc_adj: return "rc_adj";
    }
    return "?";
}

Method parse_method(std::string_view s) {
    for (Method m : {Method::cd, Method::ld, Method::mv, Method::rc, Method::rc_adj}) {
        if (s == to_string(m)) return m;
    }
    throw std::invalid_argument("unknown method '" + std::string(s) + "' (expected cd, ld, mv, rc or rc_adj)");
}

std::string short_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

StudyDesign StudyDesign::for_study(int study) {
    StudyDesign d;
    d.study = study;
    if (study == 3) d.methods = {Method::ld, Method::mv};
    d.validate();
    return d;
}

Pattern StudyDesign::pattern() const {
    switch (study) {
        case 1: return Pattern::univariate_y;
        case 2: return Pattern::univariate_x;
        case 3: return Pattern::multivariate;
        default: throw std::invalid_argument("study id must be 1, 2 or 3");
    }
}

PanSpec StudyDesign::conditional_layout() const {
    switch (pattern()) {
        case Pattern::univariate_y: return build_rc_imputation();
        case Pattern::univariate_x: return build_reversed_rc();
        case Pattern::multivariate: break;
    }
    throw std::invalid_argument("conditional imputation needs a univariate pattern; study 3 supports ld, mv and cd only");
}

void StudyDesign::validate() const {
    (void)pattern();
    if (n_groups.empty() || group_sizes.empty() || iccs.empty() || slopes.empty() || slope_vars.empty() ||
        md_props.empty() || mechanisms.empty()) {
        throw std::invalid_argument("every factor needs at least one level");
    }
    if (methods.empty()) throw std::invalid_argument("study needs at least one method");
    if (reps == 0) throw std::invalid_argument("study needs at least one replication");
    for (Method m : methods) {
        if (std::count(methods.begin(), methods.end(), m) > 1) {
            throw std::invalid_argument("method " + to_string(m) + " listed twice");
        }
        if ((m == Method::rc || m == Method::rc_adj) && pattern() == Pattern::multivariate) {
            (void)conditional_layout();
        }
    }
    for (double p : md_props) (void)alpha_for_proportion(p);
    gibbs.validate();
}

PopulationSpec Cell::population() const {
    PopulationSpec p;
    p.n_groups = n_groups;
    p.group_size = group_size;
    p.rho_x = icc;
    p.rho_y = icc;
    p.beta1 = slope;
    p.psi22 = slope_var;
    return p;
}

std::array<double, 6> Cell::truth() const {
    const VarianceComponents vc = derive_variance_components(icc, icc, slope, slope_var);
    return {0.0, slope, vc.psi11, slope_var, 0.0, vc.sigma2};
}

std::vector<Cell> enumerate_cells(const StudyDesign& design) {
    design.validate();
    std::vector<Cell> cells;
    for (std::size_t g : design.n_groups)
        for (std::size_t n : design.group_sizes)
            for (double icc : design.iccs)
                for (double slope : design.slopes)
                    for (double sv : design.slope_vars)
                        for (double pi : design.md_props)
                            for (Mechanism mech : design.mechanisms) {
                                Cell c;
                                c.index = cells.size();
                                c.study = design.study;
                                c.n_groups = g;
                                c.group_size = n;
                                c.icc = icc;
                                c.slope = slope;
                                c.slope_var = sv;
                                c.md_prop = pi;
                                c.mechanism = mech;
                                try {
                                    (void)derive_variance_components(icc, icc, slope, sv);
                                    MissingnessSpec::make(design.pattern(), mech, pi, slope).validate();
                                    if (g < 2 || n < 1) throw InvalidDesignError("need at least 2 groups of size 1");
                                } catch (const std::invalid_argument& e) {
                                    c.feasible = false;
                                    c.infeasible_reason = e.what();
                                }
                                cells.push_back(std::move(c));
                            }
    return cells;
}

bool MethodResult::failed() const { return 2 * failures > metrics[0].n_reps; }

const MethodResult& CellResult::operator[](Method m) const {
    for (const auto& r : methods) {
        if (r.method == m) return r;
    }
    throw std::out_of_range("method " + to_string(m) + " was not run");
}

ReplicationOutcome run_replication(const Cell& cell, const StudyDesign& design, std::size_t rep) {
    if (!cell.feasible) throw std::invalid_argument("cannot run an infeasible cell: " + cell.infeasible_reason);
    const SeededRng root = SeededRng(design.base_seed, cell.index).derive(rep);
    SeededRng gen = root.derive(kGenerateStream);
    SeededRng amp = root.derive(kAmputeStream);

    const TwoLevelDataset complete = generate_dataset(cell.population(), gen);
    const TwoLevelDataset masked =
        impose_missing(complete, MissingnessSpec::make(design.pattern(), cell.mechanism, cell.md_prop, cell.slope), amp);

    ReplicationOutcome out;
    std::size_t any = 0;
    for (std::size_t i = 0; i < masked.rows(); ++i) {
        const bool mx = !masked.observed(Variable::x, i);
        const bool my = !masked.observed(Variable::y, i);
        any += (mx || my) ? 1 : 0;
        out.rows_both_masked += (mx && my) ? 1 : 0;
    }
    out.masked_fraction = static_cast<double>(any) / static_cast<double>(masked.rows());

    out.estimates.reserve(design.methods.size());
    for (Method m : design.methods) {
        SeededRng rng = root.derive(kMethodStreamBase + static_cast<std::uint64_t>(m));
        out.estimates.push_back(run_method(m, complete, masked, design, rng));
    }
    return out;
}

CellResult run_cell(const Cell& cell, const StudyDesign& design) {
    design.validate();
    std::vector<ReplicationOutcome> outcomes;
    outcomes.reserve(design.reps);
    for (std::size_t r = 0; r < design.reps; ++r) outcomes.push_back(run_replication(cell, design, r));
    return aggregate(cell, design, outcomes);
}

StudyReport run_study(const StudyDesign& design) {
    StudyReport report;
    report.study = design.study;
    std::vector<Cell> feasible;
    for (Cell& c : enumerate_cells(design)) {
        (c.feasible ? feasible : report.infeasible).push_back(std::move(c));
    }

    const std::size_t units = feasible.size() * design.reps;
    std::vector<ReplicationOutcome> outcomes(units);
    unsigned workers = design.threads != 0 ? design.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(units, 1)));

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (;;) {
            const std::size_t u = next.fetch_add(1);
            if (u >= units) return;
            try {
                outcomes[u] = run_replication(feasible[u / design.reps], design, u % design.reps);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(units);
                return;
            }
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    for (std::size_t c = 0; c < feasible.size(); ++c) {
        const auto first = outcomes.begin() + static_cast<std::ptrdiff_t>(c * design.reps);
        const std::vector<ReplicationOutcome> cell_outcomes(first, first + static_cast<std::ptrdiff_t>(design.reps));
        report.results.push_back(aggregate(feasible[c], design, cell_outcomes));
    }
    return report;
}

void write_report(const StudyReport& report, std::ostream& out) {
    out << kReportHeader << '\n';
    for (const CellResult& cr : report.results) {
        for (const MethodResult& mr : cr.methods) {
            for (Parameter p : kParameters) {
                const ParameterMetrics& pm = mr.metrics[static_cast<std::size_t>(p)];
                write_cell_prefix(out, report.study, cr.cell);
                out << ',' << to_string(mr.method) << ',' << to_string(p) << ',' << optional_real(pm.bias) << ','
                    << optional_real(pm.rmse) << ',' << pm.n_reps << ',' << pm.n_converged << '\n';
            }
        }
    }
    if (!out) throw std::runtime_error("write_report: output stream failure");
}

void write_infeasible(const StudyReport& report, std::ostream& out) {
    out << "study,n_groups,group_size,icc,slope_var,md_prop,mechanism,reason\n";
    for (const Cell& c : report.infeasible) {
        write_cell_prefix(out, report.study, c);
        std::string reason = c.infeasible_reason;
        std::replace(reason.begin(), reason.end(), ',', ';');
        out << ',' << reason << '\n';
    }
    if (!out) throw std::runtime_error("write_infeasible: output stream failure");
}

}  // namespace mlmi
