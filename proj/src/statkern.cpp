#include "mlmi/statkern.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mlmi {

namespace {

constexpr double kMinPivot = 1e-12;
constexpr double kJitterScale = 1e-10;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

std::optional<Matrix> try_llt(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
        return std::nullopt;
    }
    Matrix l = llt.matrixL();
    for (Index i = 0; i < l.rows(); ++i) {
        if (!(l(i, i) * l(i, i) >= kMinPivot)) {
            return std::nullopt;
        }
    }
    return l;
}

void check_indices(std::span<const Index> idx, Index p) {
    std::vector<Index> sorted(idx.begin(), idx.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("conditional_normal: duplicate observed index");
    }
    for (Index i : sorted) {
        if (i < 0 || i >= p) {
            throw std::invalid_argument("conditional_normal: observed index out of range");
        }
    }
}

}  // namespace

SymMatrix::SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("SymMatrix: matrix is not square");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (m.size() > 0 && (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw std::invalid_argument("SymMatrix: matrix is not symmetric");
    }
    m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(Index p) {
    SymMatrix s;
    s.m_ = Matrix::Identity(p, p);
    return s;
}

SymMatrix SymMatrix::zero(Index p) {
    SymMatrix s;
    s.m_ = Matrix::Zero(p, p);
    return s;
}

SymMatrix SymMatrix::from_symmetric_part(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw std::invalid_argument("SymMatrix: matrix is not square");
    }
    SymMatrix s;
    s.m_ = 0.5 * (m + m.transpose());
    return s;
}

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

SeededRng SeededRng::derive(std::uint64_t substream) const {
    return SeededRng(seed_, splitmix64(splitmix64(stream_) ^ (substream + 0x632BE59BD9B4E019ULL)));
}

double SeededRng::chi_squared(double df) {
    return std::chi_squared_distribution<double>(df)(engine_);
}

Vector SeededRng::normal_vector(Index n) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) {
        z(i) = normal();
    }
    return z;
}

Matrix SeededRng::normal_matrix(Index rows, Index cols) {
    Matrix z(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            z(i, j) = normal();
        }
    }
    return z;
}

std::optional<Matrix> cholesky(const SymMatrix& a) {
    if (auto l = try_llt(a.matrix())) {
        return l;
    }
    const Index p = a.dim();
    if (p == 0) {
        return Matrix(0, 0);
    }
    const double jitter = kJitterScale * a.trace() / static_cast<double>(p);
    if (!(jitter > 0.0)) {
        return std::nullopt;
    }
    Matrix bumped = a.matrix();
    bumped.diagonal().array() += jitter;
    return try_llt(bumped);
}

Matrix cholesky_or_throw(const SymMatrix& a, const char* what) {
    auto l = cholesky(a);
    if (!l) {
        throw DecompositionError(std::string("Cholesky factorization failed: ") + what);
    }
    return *std::move(l);
}

SymMatrix inverse_spd(const SymMatrix& a) {
    const Matrix l = cholesky_or_throw(a, "inverse_spd");
    const Matrix linv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(a.dim(), a.dim()));
    return SymMatrix::from_symmetric_part(linv.transpose() * linv);
}

double log_det_spd(const SymMatrix& a) {
    const Matrix l = cholesky_or_throw(a, "log_det_spd");
    return 2.0 * l.diagonal().array().log().sum();
}

Vector sample_mvnormal(const Vector& mean, const SymMatrix& cov, SeededRng& rng) {
    if (mean.size() != cov.dim()) {
        throw std::invalid_argument("sample_mvnormal: mean and covariance dimensions differ");
    }
    const Index p = mean.size();
    const Vector z = rng.normal_vector(p);
    if (auto l = try_llt(cov.matrix())) {
        return mean + *l * z;
    }
    // Semidefinite fallback: cov = P^T L D L^T P.
    Eigen::LDLT<Matrix> ldlt(cov.matrix());
    const Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    const Matrix l = ldlt.matrixL();
    Vector draw = l * d.cwiseProduct(z);
    draw = ldlt.transpositionsP().transpose() * draw;
    return mean + draw;
}

SymMatrix sample_invwishart(const SymMatrix& scale, double df, SeededRng& rng) {
    const Index p = scale.dim();
    if (!(df > static_cast<double>(p) - 1.0)) {
        throw std::invalid_argument("sample_invwishart: degrees of freedom must exceed p - 1");
    }
    const Matrix c = cholesky_or_throw(scale, "inverse-Wishart scale");

    // Bartlett factor of the Wishart(I, df) draw.
    Matrix a = Matrix::Zero(p, p);
    for (Index i = 0; i < p; ++i) {
        a(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
        for (Index j = 0; j < i; ++j) {
            a(i, j) = rng.normal();
        }
    }
    // W^-1 = C^-T A A^T C^-1, hence W = (C A^-T)(C A^-T)^T.
    const Matrix ainv = a.triangularView<Eigen::Lower>().solve(Matrix::Identity(p, p));
    const Matrix k = c * ainv.transpose();
    return SymMatrix::from_symmetric_part(k * k.transpose());
}

ConditionalRegression conditional_regression(const SymMatrix& cov, std::span<const Index> observed_idx) {
    const Index p = cov.dim();
    check_indices(observed_idx, p);

    ConditionalRegression out;
    out.observed_idx.assign(observed_idx.begin(), observed_idx.end());
    std::vector<bool> is_obs(static_cast<std::size_t>(p), false);
    for (Index i : observed_idx) {
        is_obs[static_cast<std::size_t>(i)] = true;
    }
    for (Index i = 0; i < p; ++i) {
        if (!is_obs[static_cast<std::size_t>(i)]) {
            out.missing_idx.push_back(i);
        }
    }

    const auto nm = static_cast<Index>(out.missing_idx.size());
    const auto no = static_cast<Index>(out.observed_idx.size());
    const Matrix& s = cov.matrix();
    Matrix s_mm(nm, nm), s_mo(nm, no), s_oo(no, no);
    for (Index i = 0; i < nm; ++i) {
        for (Index j = 0; j < nm; ++j) s_mm(i, j) = s(out.missing_idx[i], out.missing_idx[j]);
        for (Index j = 0; j < no; ++j) s_mo(i, j) = s(out.missing_idx[i], out.observed_idx[j]);
    }
    for (Index i = 0; i < no; ++i) {
        for (Index j = 0; j < no; ++j) s_oo(i, j) = s(out.observed_idx[i], out.observed_idx[j]);
    }

    if (no == 0) {
        out.coef = Matrix::Zero(nm, 0);
        out.cov = SymMatrix::from_symmetric_part(s_mm);
        return out;
    }
    const Matrix l = cholesky_or_throw(SymMatrix::from_symmetric_part(s_oo), "observed block");
    // coef = S_MO * S_OO^-1, solved through the factor.
    const Matrix t = l.triangularView<Eigen::Lower>().solve(s_mo.transpose());  // L^-1 S_OM
    out.coef = l.transpose().triangularView<Eigen::Upper>().solve(t).transpose();
    out.cov = SymMatrix::from_symmetric_part(s_mm - t.transpose() * t);
    return out;
}

ConditionalNormal conditional_normal(const Vector& mean, const SymMatrix& cov,
                                     std::span<const Index> observed_idx, const Vector& observed_vals) {
    if (mean.size() != cov.dim()) {
        throw std::invalid_argument("conditional_normal: mean and covariance dimensions differ");
    }
    if (observed_vals.size() != static_cast<Index>(observed_idx.size())) {
        throw std::invalid_argument("conditional_normal: observed values do not match indices");
    }
    ConditionalRegression reg = conditional_regression(cov, observed_idx);
    const auto nm = static_cast<Index>(reg.missing_idx.size());
    Vector dev(observed_vals.size());
    for (Index j = 0; j < dev.size(); ++j) {
        dev(j) = observed_vals(j) - mean(reg.observed_idx[j]);
    }
    Vector m(nm);
    for (Index i = 0; i < nm; ++i) {
        m(i) = mean(reg.missing_idx[i]);
    }
    if (dev.size() > 0) {
        m += reg.coef * dev;
    }
    return ConditionalNormal{std::move(reg.missing_idx), std::move(m), std::move(reg.cov)};
}

}  // namespace mlmi
