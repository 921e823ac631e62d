#pragma once

// Multivariate linear mixed-effects imputation model
//   Y_j = X_j beta + Z_j b_j + E_j,  vec(b_j) ~ N(0, Psi),  rows of E_j ~ N(0, Sigma),
// sampled by Gibbs with inverse-Wishart priors on Sigma and Psi and a flat
// prior on beta. Missing response cells are drawn as part of every cycle.

#include "mlmi/datamodel.hpp"
#include "mlmi/mixedfit.hpp"
#include "mlmi/statkern.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlmi {

/// Inverse-Wishart hyperparameters, see sample_invwishart() for the
/// convention (pseudo-guess scale/df).
struct PriorSpec {
    SymMatrix s_sigma;
    double nu_sigma = 0.0;
    SymMatrix s_psi;
    double nu_psi = 0.0;

    void validate(Index r, Index qr) const;
};

/// W^-1(I_r, r) for Sigma and W^-1(I_qr, qr) for Psi.
[[nodiscard]] PriorSpec least_informative_prior(Index r, Index qr);

/// Layout of the imputation model. The fixed design always starts with an
/// intercept; the random design does when random_intercept is set.
struct PanSpec {
    std::vector<Variable> responses;
    std::vector<Variable> fixed_covariates;
    bool random_intercept = true;
    std::vector<Variable> random_covariates;
    PriorSpec prior;

    [[nodiscard]] Index r() const { return static_cast<Index>(responses.size()); }
    [[nodiscard]] Index p() const { return 1 + static_cast<Index>(fixed_covariates.size()); }
    [[nodiscard]] Index q() const {
        return (random_intercept ? 1 : 0) + static_cast<Index>(random_covariates.size());
    }
    void validate() const;
};

/// y on x with random intercept and slope: (r, p, q) = (1, 2, 2).
[[nodiscard]] PanSpec build_rc_imputation();
/// x on y with random intercept and slope: (r, p, q) = (1, 2, 2).
[[nodiscard]] PanSpec build_reversed_rc();
/// (x, y) jointly with random intercepts only: (r, p, q) = (2, 1, 1).
[[nodiscard]] PanSpec build_multivariate();

enum class ImputationModel { rc, reversed_rc, multivariate };
[[nodiscard]] PanSpec build_imputation_model(ImputationModel model);
[[nodiscard]] ImputationModel parse_imputation_model(std::string_view s);
[[nodiscard]] std::string to_string(ImputationModel m);

struct GibbsConfig {
    int burn_in = 10000;
    int thin = 200;
    int m = 50;
    std::uint64_t seed = 0;
    bool record_trace = true;

    [[nodiscard]] static GibbsConfig full() { return {}; }
    [[nodiscard]] static GibbsConfig desk() { return GibbsConfig{1000, 50, 20, 0, true}; }
    [[nodiscard]] long total_cycles() const { return static_cast<long>(burn_in) + static_cast<long>(m) * thin; }
    void validate() const;
};

class DegenerateStateError : public std::runtime_error {
public:
    DegenerateStateError(long cycle, const std::string& what);
    [[nodiscard]] long cycle() const { return cycle_; }

private:
    long cycle_;
};

/// Design matrices and observed responses grouped for the sampler. The
/// random and fixed designs never contain imputed values.
class PanData {
public:
    struct Group {
        std::vector<std::size_t> rows;        // dataset rows
        Matrix x;                             // n_j x p
        Matrix z;                             // n_j x q
        Matrix y;                             // n_j x r, zero where missing
        std::vector<std::uint32_t> observed;  // per row, bit k set when response k is observed
        Matrix ztz;                           // q x q
        Matrix ztx;                           // q x p
    };

    /// Throws std::invalid_argument when a design column has masked cells
    /// or a response column has no observed cell at all.
    PanData(const TwoLevelDataset& ds, PanSpec spec);

    [[nodiscard]] const PanSpec& spec() const { return spec_; }
    [[nodiscard]] const std::vector<Group>& groups() const { return groups_; }
    [[nodiscard]] const TwoLevelDataset& dataset() const { return ds_; }
    [[nodiscard]] std::size_t rows() const { return ds_.rows(); }
    [[nodiscard]] const Matrix& xtx_total() const { return xtx_total_; }
    [[nodiscard]] std::uint32_t full_mask() const { return full_mask_; }
    /// Distinct incomplete observation patterns present in the data.
    [[nodiscard]] const std::vector<std::uint32_t>& patterns() const { return patterns_; }

private:
    TwoLevelDataset ds_;
    PanSpec spec_;
    std::vector<Group> groups_;
    Matrix xtx_total_;
    std::uint32_t full_mask_ = 0;
    std::vector<std::uint32_t> patterns_;
};

struct GibbsState {
    Matrix beta;             // p x r
    std::vector<Matrix> b;   // per group, q x r
    SymMatrix sigma;         // r x r
    SymMatrix psi;           // qr x qr
    std::vector<Matrix> y;   // per group completed responses, n_j x r
    long cycle = 0;
};

/// Masked cells at the observed column mean, beta by pooled OLS on the
/// filled data, Sigma from its residuals, Psi = 0.1 I, b_j = 0.
[[nodiscard]] GibbsState initial_state(const PanData& data);

/// Full conditional of vec(b_j) (columns stacked), in precision form:
/// precision = Psi^-1 + Sigma^-1 (x) Z_j^T Z_j,
/// mean = precision^-1 vec(Z_j^T (Y_j - X_j beta) Sigma^-1).
struct RandomEffectConditional {
    Vector mean;
    SymMatrix precision;
};
[[nodiscard]] RandomEffectConditional random_effect_conditional(const PanData::Group& g, const Matrix& y,
                                                                const Matrix& beta, const SymMatrix& sigma_inv,
                                                                const SymMatrix& psi_inv);

/// Full conditional of beta under a flat prior: matrix normal with the
/// given mean, row covariance (sum X^T X)^-1 and column covariance Sigma.
struct FixedEffectConditional {
    Matrix mean;
    SymMatrix row_cov;
};
[[nodiscard]] FixedEffectConditional fixed_effect_conditional(const PanData& data, const GibbsState& state);

/// One scan in the order: random effects, fixed effects, Sigma, Psi,
/// missing cells. Throws DegenerateStateError carrying the cycle index.
void gibbs_cycle(GibbsState& state, const PanData& data, SeededRng& rng);

/// Per-cycle values of beta, Sigma and Psi (upper triangles).
struct ChainTrace {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;  // values[cycle][parameter]

    [[nodiscard]] std::size_t cycles() const { return values.size(); }
    [[nodiscard]] std::vector<double> series(std::size_t parameter) const;
};

struct ImputationResult {
    std::vector<TwoLevelDataset> imputations;
    ChainTrace trace;
};

/// burn_in cycles, then one completed dataset every `thin` cycles until m
/// are saved. Observed cells of every output are copies of the input.
[[nodiscard]] ImputationResult run_imputation(const TwoLevelDataset& ds, const PanSpec& spec, const GibbsConfig& cfg,
                                              SeededRng& rng);

/// Psi prior centered on the listwise-deletion ML estimate:
/// S_psi = 2 * Psi_LD, nu_psi = dim(Psi); the Sigma prior stays
/// least-informative. Conditional layouts only. For the reversed layout the
/// LD fit regresses x on y. A singular Psi_LD gets the statkern jitter.
[[nodiscard]] PriorSpec adjusted_prior_from_ld(const TwoLevelDataset& ds, const PanSpec& layout,
                                               const FitConfig& cfg = {});

/// Lag-k sample autocorrelation; nullopt for constant chains or k >= n.
[[nodiscard]] std::optional<double> autocorrelation(std::span<const double> chain, std::size_t lag);

inline constexpr std::size_t kDiagnosticLags[] = {1, 10, 50, 200};

/// Long-format CSV `parameter,kind,index,value`: kind "trace" rows carry the
/// 1-based cycle, kind "acf" rows the lag. Undefined autocorrelations are
/// written as empty fields.
void export_diagnostics(const ChainTrace& trace, std::ostream& out);

}  // namespace mlmi
