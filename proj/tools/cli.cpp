#include "cli.hpp"

#include "mlmi/harness.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mlmi {

namespace {

using nlohmann::json;

// Flat JSON object as configuration: {"slope_var": 0.05, "icc": [0.05, 0.15]}.
// Keys use underscores where the flags use dashes and apply to the selected
// subcommand.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(const CLI::App* root) : root_(root) {}

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options()) {
            if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
            std::string key = opt->get_lnames().front();
            if (key == "help" || key == "config") continue;
            std::replace(key.begin(), key.end(), '-', '_');
            const auto results = opt->results();
            if (!results.empty()) {
                j[key] = results.size() == 1 ? json(results.front()) : json(results);
            } else if (default_also && !opt->get_default_str().empty()) {
                j[key] = opt->get_default_str();
            }
        }
        return j.dump(2) + "\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        for (const auto& [key, value] : j.items()) {
            CLI::ConfigItem item;
            for (const CLI::App* sub : root_->get_subcommands()) item.parents.push_back(sub->get_name());
            item.name = key;
            std::replace(item.name.begin(), item.name.end(), '_', '-');
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(key, v));
            } else {
                item.inputs.push_back(scalar(key, value));
            }
            items.push_back(std::move(item));
        }
        return items;
    }

private:
    const CLI::App* root_;

    static std::string scalar(const std::string& key, const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        if (v.is_number()) return v.dump();
        throw CLI::ConversionError("config key '" + key + "' must hold a scalar or an array of scalars");
    }
};

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    return f;
}

// Writes to `path`, or to `out` when path is empty or "-".
template <typename F>
void emit(const std::string& path, std::ostream& out, F&& write) {
    if (path.empty() || path == "-") {
        write(out);
    } else {
        std::ofstream f = open_out(path);
        write(f);
    }
}

struct GibbsFlags {
    std::string preset = "full";
    int burn_in = 0;
    int thin = 0;
    int m = 0;
    CLI::Option* burn_opt = nullptr;
    CLI::Option* thin_opt = nullptr;
    CLI::Option* m_opt = nullptr;

    void add(CLI::App* sub, const std::string& default_preset) {
        preset = default_preset;
        sub->add_option("--preset", preset, "Gibbs preset: full (10000/200/50) or desk (1000/50/20)")
            ->check(CLI::IsMember({"full", "desk"}))
            ->capture_default_str();
        burn_opt = sub->add_option("--burn-in", burn_in, "Burn-in cycles (overrides the preset)");
        thin_opt = sub->add_option("--thin", thin, "Cycles between saved imputations (overrides the preset)");
        m_opt = sub->add_option("--m", m, "Number of imputations (overrides the preset)");
    }

    [[nodiscard]] GibbsConfig config() const {
        GibbsConfig g = preset == "desk" ? GibbsConfig::desk() : GibbsConfig::full();
        if (burn_opt->count() > 0) g.burn_in = burn_in;
        if (thin_opt->count() > 0) g.thin = thin;
        if (m_opt->count() > 0) g.m = m;
        g.validate();
        return g;
    }
};

struct ImputeFlags {
    std::string input;
    std::string model = "rc";
    std::string prior = "least-informative";
    std::uint64_t seed = 0;
    GibbsFlags gibbs;

    void add(CLI::App* sub) {
        sub->add_option("--in", input, "Input dataset CSV (group,x,y)")->required();
        sub->add_option("--model", model, "Imputation model: rc, reversed or multivariate")
            ->check(CLI::IsMember({"rc", "reversed", "multivariate"}))
            ->capture_default_str();
        sub->add_option("--prior", prior, "Psi prior: least-informative or adjusted (LD-centered)")
            ->check(CLI::IsMember({"least-informative", "adjusted"}))
            ->capture_default_str();
        sub->add_option("--seed", seed, "Random seed")->capture_default_str();
        gibbs.add(sub, "full");
    }

    [[nodiscard]] PanSpec spec(const TwoLevelDataset& ds) const {
        PanSpec s = build_imputation_model(parse_imputation_model(model));
        if (prior == "adjusted") s.prior = adjusted_prior_from_ld(ds, s);
        return s;
    }
};

void print_pooled(const PooledEstimates& pooled, std::ostream& out) {
    out << "parameter,estimate,between,within,total,df\n";
    auto opt = [](const std::optional<double>& v) { return v ? short_real(*v) : std::string(); };
    for (Parameter p : kParameters) {
        const PooledParameter& pp = pooled[p];
        out << to_string(p) << ',' << short_real(pp.estimate) << ',' << short_real(pp.between) << ','
            << opt(pp.within) << ',' << opt(pp.total) << ',' << opt(pp.df) << '\n';
    }
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multilevel multiple imputation: simulation, imputation, fitting and simulation studies", "mlmi"};
    app.require_subcommand(1);
    // Lets `mlmi <sub> --config f.json` reach the root's config option.
    app.fallthrough(true);
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.config_formatter(std::make_shared<JsonConfig>(&app));
    app.set_config("--config", "", "JSON file with option values for the subcommand; flags take precedence");

    // simulate
    CLI::App* sim = app.add_subcommand("simulate", "Generate a complete two-level dataset");
    PopulationSpec pop;
    double icc = 0.05;
    std::optional<double> icc_x, icc_y;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    sim->add_option("--groups", pop.n_groups, "Number of groups")->capture_default_str();
    sim->add_option("--size", pop.group_size, "Rows per group")->capture_default_str();
    sim->add_option("--icc", icc, "ICC of x and y")->capture_default_str();
    sim->add_option("--icc-x", icc_x, "ICC of x (overrides --icc)");
    sim->add_option("--icc-y", icc_y, "ICC of y (overrides --icc)");
    sim->add_option("--slope", pop.beta1, "Fixed slope")->capture_default_str();
    sim->add_option("--slope-var", pop.psi22, "Slope variance")->capture_default_str();
    sim->add_option("--seed", sim_seed, "Random seed")->capture_default_str();
    sim->add_option("--out", sim_out, "Output CSV (stdout when omitted)");

    // ampute
    CLI::App* amp = app.add_subcommand("ampute", "Impose missing values on a complete dataset");
    std::string amp_in, amp_out, amp_pattern = "univariate_y", amp_mech = "MAR";
    double amp_prop = 0.25, amp_cov = 0.5;
    std::uint64_t amp_seed = 0;
    amp->add_option("--in", amp_in, "Complete dataset CSV")->required();
    amp->add_option("--pattern", amp_pattern, "univariate_y, univariate_x or multivariate")->capture_default_str();
    amp->add_option("--mechanism", amp_mech, "MCAR, MAR or MNAR")->capture_default_str();
    amp->add_option("--prop", amp_prop, "Target missing proportion")->capture_default_str();
    amp->add_option("--cov-xy", amp_cov, "Population Cov(x, y) used to scale the latent residual")
        ->capture_default_str();
    amp->add_option("--seed", amp_seed, "Random seed")->capture_default_str();
    amp->add_option("--out", amp_out, "Output CSV (stdout when omitted)");

    // impute
    CLI::App* imp = app.add_subcommand("impute", "Draw multiple imputations with the Gibbs sampler");
    ImputeFlags imp_flags;
    imp_flags.add(imp);
    std::string imp_prefix = "imputed", imp_diag;
    imp->add_option("--out-prefix", imp_prefix, "Imputations go to <prefix>_<k>.csv")->capture_default_str();
    imp->add_option("--diagnostics", imp_diag, "Diagnostics CSV (default <prefix>_diagnostics.csv)");

    // fit
    CLI::App* fit = app.add_subcommand("fit", "ML fit of the random-slope model");
    std::string fit_in;
    bool fit_ld = false, fit_no_header = false;
    fit->add_option("input", fit_in, "Dataset CSV")->required();
    fit->add_flag("--ld", fit_ld, "Listwise-delete incomplete rows first");
    fit->add_flag("--no-header", fit_no_header, "Omit the CSV header line");

    // pool
    CLI::App* pool = app.add_subcommand("pool", "Fit each completed dataset and pool with Rubin's rules");
    std::vector<std::string> pool_in;
    pool->add_option("inputs", pool_in, "Completed dataset CSVs")->required();

    // study
    CLI::App* study = app.add_subcommand("study", "Run a factorial simulation study");
    StudyDesign design;
    std::uint64_t study_seed = 0;
    std::vector<std::string> mech_names{"MCAR", "MAR", "MNAR"};
    std::vector<std::string> method_names;
    std::string study_out, study_infeasible;
    GibbsFlags study_gibbs;
    study->add_option("--seed", study_seed, "Base seed (required, command line only)")->required()->configurable(false);
    study->add_option("--study", design.study, "Study id: 1 (y missing), 2 (x missing), 3 (both)")
        ->check(CLI::Range(1, 3))
        ->capture_default_str();
    study->add_option("--n-groups", design.n_groups, "Group counts")->capture_default_str();
    study->add_option("--group-size", design.group_sizes, "Group sizes")->capture_default_str();
    study->add_option("--icc", design.iccs, "ICCs (x and y share one)")->capture_default_str();
    study->add_option("--slope", design.slopes, "Fixed slopes")->capture_default_str();
    study->add_option("--slope-var", design.slope_vars, "Slope variances")->capture_default_str();
    study->add_option("--md-prop", design.md_props, "Missing proportions")->capture_default_str();
    study->add_option("--mechanism", mech_names, "Mechanisms")->capture_default_str();
    study->add_option("--methods", method_names, "Methods among cd, ld, mv, rc, rc_adj (default per study)");
    study->add_option("--reps", design.reps, "Replications per cell")->capture_default_str();
    study->add_option("--threads", design.threads, "Worker threads (0: all cores)")->capture_default_str();
    study->add_option("--out", study_out, "Report CSV (stdout when omitted)");
    study->add_option("--infeasible", study_infeasible, "CSV listing infeasible cells");
    study_gibbs.add(study, "desk");

    // diagnose
    CLI::App* diag = app.add_subcommand("diagnose", "Run one chain and export traces and autocorrelations");
    ImputeFlags diag_flags;
    diag_flags.add(diag);
    std::string diag_out;
    diag->add_option("--out", diag_out, "Diagnostics CSV (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e, out, err);
        err << "mlmi: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*sim) {
            if (icc_x || icc_y) {
                pop.rho_x = icc_x.value_or(icc);
                pop.rho_y = icc_y.value_or(icc);
            } else {
                pop.rho_x = pop.rho_y = icc;
            }
            SeededRng rng(sim_seed);
            const TwoLevelDataset ds = generate_dataset(pop, rng);
            emit(sim_out, out, [&](std::ostream& o) { write_csv(ds, o); });
        } else if (*amp) {
            const TwoLevelDataset ds = read_csv(amp_in);
            MissingnessSpec spec;
            try {
                spec = MissingnessSpec::make(parse_pattern(amp_pattern), parse_mechanism(amp_mech), amp_prop, amp_cov);
            } catch (const std::invalid_argument& e) {
                err << "mlmi: " << e.what() << "\n";
                return 2;
            }
            SeededRng rng(amp_seed);
            const TwoLevelDataset masked = impose_missing(ds, spec, rng);
            emit(amp_out, out, [&](std::ostream& o) { write_csv(masked, o); });
        } else if (*imp) {
            const TwoLevelDataset ds = read_csv(imp_flags.input);
            GibbsConfig cfg = imp_flags.gibbs.config();
            cfg.seed = imp_flags.seed;
            SeededRng rng(imp_flags.seed);
            const ImputationResult res = run_imputation(ds, imp_flags.spec(ds), cfg, rng);
            for (std::size_t k = 0; k < res.imputations.size(); ++k) {
                write_csv(res.imputations[k], imp_prefix + "_" + std::to_string(k + 1) + ".csv");
            }
            const std::string dpath = imp_diag.empty() ? imp_prefix + "_diagnostics.csv" : imp_diag;
            std::ofstream f = open_out(dpath);
            export_diagnostics(res.trace, f);
            err << "wrote " << res.imputations.size() << " imputations and " << dpath << "\n";
        } else if (*fit) {
            const TwoLevelDataset ds = read_csv(fit_in);
            if (!fit_ld && !ds.complete()) {
                throw std::invalid_argument("dataset has missing cells; pass --ld to fit complete cases");
            }
            const RcModelFit f = fit_ld ? fit_with_ld(ds) : fit_rc_ml(ds);
            if (!fit_no_header) out << "beta0,beta1,psi11,psi22,psi12,sigma2,loglik\n";
            out << format_real(f.beta0) << ',' << format_real(f.beta1) << ',' << format_real(f.psi11) << ','
                << format_real(f.psi22) << ',' << format_real(f.psi12) << ',' << format_real(f.sigma2) << ','
                << format_real(f.loglik) << '\n';
            if (!f.converged) err << "warning: optimizer did not converge; best values shown\n";
        } else if (*pool) {
            std::vector<RcModelFit> fits;
            for (const std::string& path : pool_in) fits.push_back(fit_rc_ml(read_csv(path)));
            const PooledEstimates pooled = pool_rubin(fits);
            print_pooled(pooled, out);
            if (pooled.m_excluded > 0) err << "excluded " << pooled.m_excluded << " non-converged fits\n";
        } else if (*study) {
            try {
                design.base_seed = study_seed;
                design.mechanisms.clear();
                for (const auto& s : mech_names) design.mechanisms.push_back(parse_mechanism(s));
                if (method_names.empty()) {
                    design.methods = StudyDesign::for_study(design.study).methods;
                } else {
                    design.methods.clear();
                    for (const auto& s : method_names) design.methods.push_back(parse_method(s));
                }
                design.gibbs = study_gibbs.config();
                design.validate();
            } catch (const std::invalid_argument& e) {
                err << "mlmi: " << e.what() << "\n";
                return 2;
            }
            const StudyReport report = run_study(design);
            emit(study_out, out, [&](std::ostream& o) { write_report(report, o); });
            if (!report.infeasible.empty()) {
                if (!study_infeasible.empty()) {
                    std::ofstream f = open_out(study_infeasible);
                    write_infeasible(report, f);
                }
                err << report.infeasible.size() << " infeasible cell(s) skipped"
                    << (study_infeasible.empty() ? " (list them with --infeasible)" : "") << "\n";
            }
        } else if (*diag) {
            const TwoLevelDataset ds = read_csv(diag_flags.input);
            GibbsConfig cfg = diag_flags.gibbs.config();
            cfg.seed = diag_flags.seed;
            SeededRng rng(diag_flags.seed);
            const ImputationResult res = run_imputation(ds, diag_flags.spec(ds), cfg, rng);
            emit(diag_out, out, [&](std::ostream& o) { export_diagnostics(res.trace, o); });
        }
    } catch (const std::exception& e) {
        err << "mlmi: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mlmi
