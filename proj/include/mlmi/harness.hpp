#pragma once

// Factorial Monte Carlo driver: generate, ampute, estimate with each
// method, and summarize bias/RMSE against the generating values.

#include "mlmi/panmi.hpp"
#include "mlmi/pool_metrics.hpp"
#include "mlmi/simulate.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mlmi {

/// cd = complete data before amputation, ld = listwise deletion,
/// mv = multivariate imputation, rc = conditional imputation (reversed in
/// study 2), rc_adj = rc with the LD-centered Psi prior.
enum class Method { cd, ld, mv, rc, rc_adj };

[[nodiscard]] std::string to_string(Method m);
[[nodiscard]] Method parse_method(std::string_view s);

struct StudyDesign {
    int study = 1;
    std::vector<std::size_t> n_groups{50, 150};
    std::vector<std::size_t> group_sizes{10, 30};
    std::vector<double> iccs{0.05, 0.15, 0.25};
    std::vector<double> slopes{0.5};
    std::vector<double> slope_vars{0.01, 0.05, 0.10, 0.20};
    std::vector<double> md_props{0.25, 0.50};
    std::vector<Mechanism> mechanisms{Mechanism::mcar, Mechanism::mar, Mechanism::mnar};
    std::size_t reps = 200;
    std::uint64_t base_seed = 0;
    std::vector<Method> methods{Method::ld, Method::mv, Method::rc};
    GibbsConfig gibbs = GibbsConfig::desk();
    FitConfig fit{};
    unsigned threads = 0;  // 0: hardware concurrency

    /// Study-specific method defaults (no rc for study 3).
    [[nodiscard]] static StudyDesign for_study(int study);
    [[nodiscard]] Pattern pattern() const;
    /// Layout used by rc / rc_adj for this study.
    [[nodiscard]] PanSpec conditional_layout() const;
    void validate() const;
};

struct Cell {
    std::size_t index = 0;  // position in enumeration order, feasible or not
    int study = 1;
    std::size_t n_groups = 0;
    std::size_t group_size = 0;
    double icc = 0.0;
    double slope = 0.0;
    double slope_var = 0.0;
    double md_prop = 0.0;
    Mechanism mechanism = Mechanism::mcar;
    bool feasible = true;
    std::string infeasible_reason;

    [[nodiscard]] PopulationSpec population() const;
    /// Generating values in report order; requires a feasible cell.
    [[nodiscard]] std::array<double, 6> truth() const;
};

/// Cartesian product in the order groups, size, icc, slope, slope variance,
/// proportion, mechanism (last varies fastest). Infeasible combinations are
/// kept and marked.
[[nodiscard]] std::vector<Cell> enumerate_cells(const StudyDesign& design);

struct MethodResult {
    Method method = Method::ld;
    CellMetrics metrics{};
    std::size_t failures = 0;  // replications without an estimate
    [[nodiscard]] bool failed() const;  // more than half the replications failed
};

struct CellResult {
    Cell cell;
    std::vector<MethodResult> methods;
    double masked_fraction = 0.0;        // mean over replications, rows with a masked cell
    std::size_t rows_both_masked = 0;    // summed over replications

    [[nodiscard]] const MethodResult& operator[](Method m) const;
};

/// Estimates for one replication; nullopt entries mark failures.
struct ReplicationOutcome {
    std::vector<std::optional<std::array<double, 6>>> estimates;  // per design method
    double masked_fraction = 0.0;
    std::size_t rows_both_masked = 0;
};

/// Replication `rep` of `cell`, fully determined by (base_seed, cell.index, rep).
[[nodiscard]] ReplicationOutcome run_replication(const Cell& cell, const StudyDesign& design, std::size_t rep);

[[nodiscard]] CellResult run_cell(const Cell& cell, const StudyDesign& design);

struct StudyReport {
    int study = 1;
    std::vector<CellResult> results;      // feasible cells
    std::vector<Cell> infeasible;
};

/// All feasible cells; replications are spread over design.threads workers
/// and aggregated in replication order.
[[nodiscard]] StudyReport run_study(const StudyDesign& design);

inline constexpr std::string_view kReportHeader =
    "study,n_groups,group_size,icc,slope_var,md_prop,mechanism,method,parameter,bias,rmse,n_reps,n_converged";

void write_report(const StudyReport& report, std::ostream& out);
/// study,n_groups,group_size,icc,slope_var,md_prop,mechanism,reason
void write_infeasible(const StudyReport& report, std::ostream& out);

/// Shortest round-trip decimal form.
[[nodiscard]] std::string short_real(double v);

}  // namespace mlmi
