#pragma once

// Variance partitioning of a centered Gram matrix over categorical factors,
// label-permutation tests, additive effect vectors and PCA.
//
// All routines are templated on the scalar type; double is the default.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "relcirc/errors.hpp"
#include "relcirc/rng.hpp"

namespace relcirc::varpart {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr const char* kModule = "varpart";

struct Factor {
    std::string name;
    std::vector<std::string> labels;
};

// Ordered set of categorical factors over n samples. Levels of a factor are
// its distinct labels in lexicographic order.
class FactorDesign {
public:
    FactorDesign() = default;
    explicit FactorDesign(std::vector<Factor> factors) : factors_(std::move(factors)) { validate(); }

    void add(std::string name, std::vector<std::string> labels) {
        factors_.push_back({std::move(name), std::move(labels)});
        validate();
    }

    // Fuses several factors into one whose labels are the joined labels, e.g.
    // color2 x shape2 -> "blue_square".
    void add_composite(std::string name, const std::vector<std::string>& parts, const std::string& sep = "_") {
        std::vector<std::string> labels(n());
        for (std::size_t i = 0; i < n(); ++i) {
            for (std::size_t k = 0; k < parts.size(); ++k) {
                if (k) labels[i] += sep;
                labels[i] += factor(parts[k]).labels[i];
            }
        }
        add(std::move(name), std::move(labels));
    }

    std::size_t n() const { return factors_.empty() ? 0 : factors_.front().labels.size(); }
    std::size_t size() const { return factors_.size(); }
    const std::vector<Factor>& factors() const { return factors_; }
    const Factor& operator[](std::size_t i) const { return factors_[i]; }

    const Factor& factor(const std::string& name) const { return factors_[index_of(name)]; }
    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < factors_.size(); ++i) {
            if (factors_[i].name == name) return i;
        }
        throw InputError(kModule, "unknown factor '" + name + "'");
    }

    // Drops the named factor and returns the rest in order.
    FactorDesign without(std::size_t index) const {
        FactorDesign out;
        for (std::size_t i = 0; i < factors_.size(); ++i) {
            if (i != index) out.factors_.push_back(factors_[i]);
        }
        return out;
    }

private:
    void validate() const {
        for (const auto& f : factors_) {
            if (f.labels.size() != factors_.front().labels.size()) {
                throw InputError(kModule, "factor '" + f.name + "' has " + std::to_string(f.labels.size()) +
                                              " labels, expected " + std::to_string(factors_.front().labels.size()));
            }
        }
    }

    std::vector<Factor> factors_;
};

inline std::vector<std::string> levels_of(std::span<const std::string> labels) {
    std::vector<std::string> levels(labels.begin(), labels.end());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    return levels;
}

// Level code of every label under levels_of ordering.
inline std::vector<int> level_codes(std::span<const std::string> labels, const std::vector<std::string>& levels) {
    std::vector<int> codes(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        codes[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), labels[i]) - levels.begin());
    }
    return codes;
}

template <typename Scalar = double>
struct CenteredDesign {
    Matrix<Scalar> z;  // n x L, column sums zero
    std::vector<std::string> levels;
    bool degenerate = false;  // single level: all-zero block
};

template <typename Scalar = double>
Matrix<Scalar> onehot_centered_codes(std::span<const int> codes, int level_count) {
    const auto n = static_cast<Eigen::Index>(codes.size());
    Matrix<Scalar> z = Matrix<Scalar>::Zero(n, level_count);
    for (Eigen::Index i = 0; i < n; ++i) z(i, codes[static_cast<std::size_t>(i)]) = Scalar(1);
    z.rowwise() -= z.colwise().mean();
    return z;
}

template <typename Scalar = double>
CenteredDesign<Scalar> onehot_centered(std::span<const std::string> labels) {
    if (labels.size() < 2) throw InputError(kModule, "a design needs at least 2 samples");
    CenteredDesign<Scalar> out;
    out.levels = levels_of(labels);
    const auto codes = level_codes(labels, out.levels);
    out.z = onehot_centered_codes<Scalar>(codes, static_cast<int>(out.levels.size()));
    out.degenerate = out.levels.size() < 2;
    return out;
}

// [Z_f1 | Z_f2 | ...] for every factor in the design.
template <typename Scalar = double>
Matrix<Scalar> design_matrix(const FactorDesign& design) {
    std::vector<Matrix<Scalar>> blocks;
    Eigen::Index cols = 0;
    for (const auto& f : design.factors()) {
        blocks.push_back(onehot_centered<Scalar>(f.labels).z);
        cols += blocks.back().cols();
    }
    Matrix<Scalar> z(static_cast<Eigen::Index>(design.n()), cols);
    Eigen::Index c = 0;
    for (const auto& b : blocks) {
        z.middleCols(c, b.cols()) = b;
        c += b.cols();
    }
    return z;
}

enum class GramSource { euclidean, mds };

template <typename Scalar = double>
struct GramMatrix {
    Matrix<Scalar> a;
    GramSource source = GramSource::euclidean;
    // Magnitude of the raw input; SS_total below 1e-12 of it counts as zero.
    Scalar reference_scale = 0;
};

template <typename Scalar = double>
Matrix<Scalar> centering_matrix(Eigen::Index n) {
    return Matrix<Scalar>::Identity(n, n) - Matrix<Scalar>::Constant(n, n, Scalar(1) / Scalar(n));
}

// A = (J X)(J X)^T.
template <typename Derived>
GramMatrix<typename Derived::Scalar> gram_euclidean(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    const Matrix<Scalar> centered = x.rowwise() - x.colwise().mean();
    GramMatrix<Scalar> g;
    g.a = centered * centered.transpose();
    g.source = GramSource::euclidean;
    g.reference_scale = x.squaredNorm();
    return g;
}

// A = -1/2 J D^{o2} J for a symmetric dissimilarity matrix with zero diagonal.
template <typename Derived>
GramMatrix<typename Derived::Scalar> gram_mds(const Eigen::MatrixBase<Derived>& d, double sym_tol = 1e-8) {
    using Scalar = typename Derived::Scalar;
    if (d.rows() != d.cols()) throw InputError(kModule, "distance matrix must be square");
    if ((d - d.transpose()).cwiseAbs().maxCoeff() > sym_tol) {
        throw InputError(kModule, "distance matrix is not symmetric within tolerance");
    }
    if (d.minCoeff() < Scalar(0)) throw InputError(kModule, "distances must be nonnegative");
    if (d.diagonal().cwiseAbs().maxCoeff() > sym_tol) throw InputError(kModule, "distance matrix diagonal must be zero");
    const Matrix<Scalar> sq = d.cwiseProduct(d);
    // J S J via row and column mean removal.
    Matrix<Scalar> centered = sq.rowwise() - sq.colwise().mean();
    centered = (centered.colwise() - centered.rowwise().mean()).eval();
    GramMatrix<Scalar> g;
    g.a = Scalar(-0.5) * centered;
    g.source = GramSource::mds;
    g.reference_scale = sq.sum() / Scalar(2 * d.rows());
    return g;
}

template <typename Scalar = double>
struct Projector {
    Matrix<Scalar> basis;  // n x rank orthonormal columns spanning col(Z)
    Eigen::Index rank = 0;

    Matrix<Scalar> matrix() const { return basis * basis.transpose(); }
};

// Orthogonal projector onto col(Z) via column-pivoted Householder QR.
// Directions with |R_kk| <= tol * |R_00| are discarded.
template <typename Derived>
Projector<typename Derived::Scalar> projector(const Eigen::MatrixBase<Derived>& z, double tol = 1e-10) {
    using Scalar = typename Derived::Scalar;
    Projector<Scalar> p;
    const auto n = z.rows();
    if (z.cols() == 0 || n == 0) {
        p.basis.resize(n, 0);
        return p;
    }
    Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(z);
    const auto& r = qr.matrixR();
    const Scalar r00 = std::abs(r(0, 0));
    const auto diag = std::min(n, z.cols());
    Eigen::Index rank = 0;
    if (r00 > Scalar(0)) {
        while (rank < diag && std::abs(r(rank, rank)) > Scalar(tol) * r00) ++rank;
    }
    p.rank = rank;
    const Matrix<Scalar> thin = qr.householderQ() * Matrix<Scalar>::Identity(n, rank);
    p.basis = thin;
    return p;
}

// tr(A P) for P = Q Q^T without forming P.
template <typename Scalar>
Scalar trace_projected(const Matrix<Scalar>& a, const Projector<Scalar>& p) {
    if (p.rank == 0) return Scalar(0);
    return (a * p.basis).cwiseProduct(p.basis).sum();
}

struct FactorRow {
    std::string feature;
    std::size_t levels = 0;
    std::int64_t df_eff = 0;
    std::int64_t df_res = 0;
    double ss_tot = 0;
    double ssr_marg = 0;
    double r2_marg = 0;
    double ssr_part = 0;
    double r2_part = 0;
    double eta2_p = 0;
    double p_perm = std::numeric_limits<double>::quiet_NaN();
};

struct VarPartReport {
    std::vector<FactorRow> rows;
    std::size_t n = 0;
    std::int64_t rank = 0;
    double ss_total = 0;
    double ss_resid = 0;
    double ss_model = 0;
    double r2_total = 0;
};

struct PermutationOptions {
    std::size_t n_perm = 0;  // 0 skips the test
    std::uint64_t seed = 0;
    double qr_tol = 1e-10;
};

namespace detail {

template <typename Scalar>
Projector<Scalar> design_projector(const FactorDesign& design, double tol) {
    if (design.size() == 0) return Projector<Scalar>{Matrix<Scalar>(static_cast<Eigen::Index>(design.n()), 0), 0};
    return projector(design_matrix<Scalar>(design), tol);
}

template <typename Scalar>
void check_total(const GramMatrix<Scalar>& g) {
    const Scalar ss_total = g.a.trace();
    if (!(std::abs(ss_total) > Scalar(1e-12) * std::max(g.reference_scale, std::numeric_limits<Scalar>::min()))) {
        throw DegenerateDataError(kModule, "total sum of squares is zero");
    }
}

template <typename Scalar>
Scalar permuted_partial_ss(const Matrix<Scalar>& a, const FactorDesign& design, std::size_t factor,
                           std::span<const int> codes, int level_count, const Matrix<Scalar>& others, Scalar ss_others,
                           double tol) {
    const Matrix<Scalar> zf = onehot_centered_codes<Scalar>(codes, level_count);
    Matrix<Scalar> z(zf.rows(), zf.cols() + others.cols());
    z << zf, others;
    (void)design;
    (void)factor;
    return trace_projected(a, projector(z, tol)) - ss_others;
}

}  // namespace detail

// p = (1 + #{perm : SS_part,perm >= SS_part,obs}) / (1 + n_perm), permuting
// only the labels of `factor`. Permutation k draws from its own counter
// stream so the result depends only on (seed, factor, k).
template <typename Scalar = double>
double permutation_test(const GramMatrix<Scalar>& gram, const FactorDesign& design, std::size_t factor,
                        std::size_t n_perm = 100, std::uint64_t seed = 0, double qr_tol = 1e-10) {
    if (n_perm < 1) throw InputError(kModule, "n_perm must be >= 1");
    if (factor >= design.size()) throw InputError(kModule, "factor index out of range");
    const auto& a = gram.a;
    const FactorDesign rest = design.without(factor);
    const Matrix<Scalar> others = rest.size() ? design_matrix<Scalar>(rest)
                                              : Matrix<Scalar>(static_cast<Eigen::Index>(design.n()), 0);
    const Scalar ss_others = trace_projected(a, projector(others, qr_tol));
    const auto& labels = design[factor].labels;
    const auto levels = levels_of(labels);
    const auto codes = level_codes(labels, levels);
    const int level_count = static_cast<int>(levels.size());
    const Scalar observed =
        detail::permuted_partial_ss(a, design, factor, codes, level_count, others, ss_others, qr_tol);
    // Ties within rounding of the observed statistic count as exceedances.
    const Scalar slack = Scalar(1e-12) * std::abs(a.trace());
    std::size_t exceed = 0;
    std::vector<int> shuffled(codes.size());
    for (std::size_t k = 0; k < n_perm; ++k) {
        CounterRng rng(mix_key(seed, factor), k);
        shuffled = codes;
        for (std::size_t i = shuffled.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(shuffled[i - 1], shuffled[j]);
        }
        const Scalar ss = detail::permuted_partial_ss(a, design, factor, shuffled, level_count, others, ss_others, qr_tol);
        if (ss >= observed - slack) ++exceed;
    }
    return static_cast<double>(1 + exceed) / static_cast<double>(1 + n_perm);
}

template <typename Scalar = double>
VarPartReport partition(const GramMatrix<Scalar>& gram, const FactorDesign& design,
                        const PermutationOptions& perm = {}) {
    if (design.size() == 0) throw InputError(kModule, "design has no factors");
    const auto& a = gram.a;
    if (a.rows() != a.cols() || static_cast<std::size_t>(a.rows()) != design.n()) {
        throw InputError(kModule, "Gram matrix is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                      " but the design has " + std::to_string(design.n()) + " samples");
    }
    detail::check_total(gram);

    VarPartReport report;
    report.n = design.n();
    report.ss_total = static_cast<double>(a.trace());
    const auto p_all = detail::design_projector<Scalar>(design, perm.qr_tol);
    report.rank = p_all.rank;
    const Scalar explained = trace_projected(a, p_all);
    report.ss_resid = static_cast<double>(a.trace() - explained);
    report.ss_model = report.ss_total - report.ss_resid;
    report.r2_total = report.ss_model / report.ss_total;
    const auto df_res = static_cast<std::int64_t>(report.n) - 1 - report.rank;

    for (std::size_t f = 0; f < design.size(); ++f) {
        FactorRow row;
        row.feature = design[f].name;
        const auto centered = onehot_centered<Scalar>(design[f].labels);
        row.levels = centered.levels.size();
        row.df_eff = static_cast<std::int64_t>(row.levels) - 1;
        row.df_res = df_res;
        row.ss_tot = report.ss_total;
        row.ssr_marg = static_cast<double>(trace_projected(a, projector(centered.z, perm.qr_tol)));
        const auto p_rest = detail::design_projector<Scalar>(design.without(f), perm.qr_tol);
        row.ssr_part = static_cast<double>(explained - trace_projected(a, p_rest));
        row.r2_marg = row.ssr_marg / report.ss_total;
        row.r2_part = row.ssr_part / report.ss_total;
        row.eta2_p = row.ssr_part / (row.ssr_part + report.ss_resid);
        if (perm.n_perm > 0) row.p_perm = permutation_test(gram, design, f, perm.n_perm, perm.seed, perm.qr_tol);
        report.rows.push_back(row);
    }
    return report;
}

template <typename Scalar = double>
struct FactorEffects {
    std::string name;
    std::vector<std::string> levels;
    Matrix<Scalar> vectors;  // L_f x d, rows sum to zero
};

template <typename Scalar = double>
struct EffectVectors {
    Vector<Scalar> mean;
    std::vector<FactorEffects<Scalar>> factors;

    const FactorEffects<Scalar>& factor(const std::string& name) const {
        for (const auto& f : factors) {
            if (f.name == name) return f;
        }
        throw InputError(kModule, "no effect vectors for factor '" + name + "'");
    }

    // Throws InputError when the factor or level is unknown.
    Vector<Scalar> vector(const std::string& factor_name, const std::string& level) const {
        const auto& f = factor(factor_name);
        const auto it = std::find(f.levels.begin(), f.levels.end(), level);
        if (it == f.levels.end()) throw InputError(kModule, "factor '" + factor_name + "' has no level '" + level + "'");
        return f.vectors.row(it - f.levels.begin()).transpose();
    }
};

// Minimum-norm least squares B = (Z^T Z)^+ Z^T X_c, then per-factor
// re-centering so every factor's level vectors sum to zero.
template <typename Derived>
EffectVectors<typename Derived::Scalar> effect_vectors(const Eigen::MatrixBase<Derived>& x, const FactorDesign& design) {
    using Scalar = typename Derived::Scalar;
    if (static_cast<std::size_t>(x.rows()) != design.n()) {
        throw InputError(kModule, "embedding rows do not match the design sample count");
    }
    EffectVectors<Scalar> out;
    out.mean = x.colwise().mean().transpose();
    const Matrix<Scalar> centered = x.rowwise() - out.mean.transpose();
    const Matrix<Scalar> z = design_matrix<Scalar>(design);
    const Matrix<Scalar> b = Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>>(z).solve(centered);
    Eigen::Index row = 0;
    for (const auto& f : design.factors()) {
        FactorEffects<Scalar> fx;
        fx.name = f.name;
        fx.levels = levels_of(f.labels);
        const auto count = static_cast<Eigen::Index>(fx.levels.size());
        fx.vectors = b.middleRows(row, count);
        fx.vectors.rowwise() -= fx.vectors.colwise().mean();
        row += count;
        out.factors.push_back(std::move(fx));
    }
    return out;
}

template <typename Scalar = double>
struct PcaResult {
    Matrix<Scalar> scores;      // n x k
    Matrix<Scalar> components;  // d x k, unit columns
    Vector<Scalar> explained_ratio;
    Vector<Scalar> mean;
};

// Scores are X_c V_k. Component signs are fixed so the largest-magnitude
// entry of each column is positive.
template <typename Derived>
PcaResult<typename Derived::Scalar> pca_project(const Eigen::MatrixBase<Derived>& x, Eigen::Index k) {
    using Scalar = typename Derived::Scalar;
    if (k < 1 || k > std::min(x.rows(), x.cols())) {
        throw InputError(kModule, "k = " + std::to_string(k) + " outside 1..min(n, d)");
    }
    PcaResult<Scalar> out;
    out.mean = x.colwise().mean().transpose();
    const Matrix<Scalar> centered = x.rowwise() - out.mean.transpose();
    Eigen::BDCSVD<Matrix<Scalar>> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.components = svd.matrixV().leftCols(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::Index idx;
        out.components.col(c).cwiseAbs().maxCoeff(&idx);
        if (out.components(idx, c) < Scalar(0)) out.components.col(c) *= Scalar(-1);
    }
    out.scores = centered * out.components;
    const Vector<Scalar> energy = svd.singularValues().array().square();
    const Scalar total = energy.sum();
    out.explained_ratio = total > Scalar(0) ? Vector<Scalar>(energy.head(k) / total) : Vector<Scalar>::Zero(k);
    return out;
}

}  // namespace relcirc::varpart
