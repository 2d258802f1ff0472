#pragma once

#include <lowrank/errors.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <string>

namespace lowrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline void require_finite(const Matrix &X, const char *what) {
    if (!X.allFinite())
        throw ArgumentError(std::string(what) + ": matrix has non-finite entries");
}

inline void require_finite(const Vector &v, const char *what) {
    if (!v.allFinite())
        throw ArgumentError(std::string(what) + ": vector has non-finite entries");
}

/// X = U diag(S) V^T with S nonincreasing.
struct SvdFactors {
    Matrix U;
    Vector S;
    Matrix V;
};

enum class SvdMode { Full, Thin };

namespace detail {

// Flip column j of `primary` (and of `partner`, if it has that column) so the
// largest-magnitude entry of primary.col(j) is nonnegative.
inline void fix_column_signs(Matrix &primary, Matrix &partner, Index paired) {
    for (Index j = 0; j < primary.cols(); ++j) {
        Index arg = 0;
        primary.col(j).cwiseAbs().maxCoeff(&arg);
        if (primary(arg, j) < 0) {
            primary.col(j) *= -1.0;
            if (j < paired)
                partner.col(j) *= -1.0;
        }
    }
}

} // namespace detail

/// Singular value decomposition with a deterministic sign convention: the
/// largest-magnitude entry of every left singular vector is nonnegative, and
/// the paired right singular vector is flipped along with it.
inline SvdFactors svd(const Matrix &X, SvdMode mode = SvdMode::Full) {
    require_finite(X, "svd");
    const unsigned options = mode == SvdMode::Full
                                 ? (Eigen::ComputeFullU | Eigen::ComputeFullV)
                                 : (Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::BDCSVD<Matrix> dec(X, options);
    if (dec.info() != Eigen::Success)
        throw FactorizationError("svd: factorization did not converge");

    SvdFactors f{dec.matrixU(), dec.singularValues(), dec.matrixV()};
    const Index q = f.S.size();
    detail::fix_column_signs(f.U, f.V, q);
    // Unpaired trailing columns of V (n > m, full mode) get the same rule.
    if (f.V.cols() > q) {
        Matrix tail = f.V.rightCols(f.V.cols() - q);
        Matrix none(0, 0);
        detail::fix_column_signs(tail, none, 0);
        f.V.rightCols(f.V.cols() - q) = tail;
    }
    return f;
}

inline Vector singular_values(const Matrix &X) {
    require_finite(X, "singular_values");
    Eigen::BDCSVD<Matrix> dec(X);
    if (dec.info() != Eigen::Success)
        throw FactorizationError("singular_values: factorization did not converge");
    return dec.singularValues();
}

inline double nuclear_norm(const Matrix &X) { return singular_values(X).sum(); }

/// Result of singular value shrinkage, with the nuclear norm and rank of the
/// output read off the thresholded spectrum.
struct Shrinkage {
    Matrix value;
    double nuclear_norm = 0.0;
    Index rank = 0;
};

/// D_tau(X) = U diag(max(s - tau, 0)) V^T, the proximal map of tau * ||.||_*.
/// A threshold at or above the top singular value yields the exact zero matrix.
inline Shrinkage shrink_detailed(const Matrix &X, double tau) {
    if (!(tau >= 0.0) || !std::isfinite(tau))
        throw ArgumentError("shrink: tau must be a finite nonnegative number");
    const SvdFactors f = svd(X, SvdMode::Thin);

    Index k = 0;
    while (k < f.S.size() && f.S(k) > tau)
        ++k;

    Shrinkage out;
    out.rank = k;
    if (k == 0) {
        out.value = Matrix::Zero(X.rows(), X.cols());
        return out;
    }
    const Vector kept = f.S.head(k).array() - tau;
    out.nuclear_norm = kept.sum();
    out.value.noalias() = f.U.leftCols(k) * kept.asDiagonal() * f.V.leftCols(k).transpose();
    return out;
}

inline Matrix shrink(const Matrix &X, double tau) { return shrink_detailed(X, tau).value; }

/// Sum of the min(m,n) - r smallest singular values.
inline double truncated_nuclear_norm(const Matrix &X, Index r) {
    const Index q = std::min(X.rows(), X.cols());
    detail::require(r >= 0 && r <= q, "truncated_nuclear_norm: r must lie in [0, min(m,n)]");
    const Vector s = singular_values(X);
    return s.tail(q - r).sum();
}

/// Stacked top-r singular vectors of a matrix. Rows of L (r x m) are left
/// singular vectors, rows of R (r x n) right singular vectors, so that
/// Tr(L X R^T) is the sum of the r largest singular values of the source.
struct TruncationPair {
    Matrix L;
    Matrix R;

    Index rank() const { return L.rows(); }
    bool empty() const { return L.rows() == 0; }

    /// Tr(L X R^T).
    double trace_term(const Matrix &X) const {
        if (empty())
            return 0.0;
        detail::require(X.rows() == L.cols() && X.cols() == R.cols(),
                        "trace_term: shape mismatch");
        return (L * X).cwiseProduct(R).sum();
    }

    /// L^T R, the gradient of Tr(L X R^T) with respect to X.
    Matrix correction(Index rows, Index cols) const {
        if (empty())
            return Matrix::Zero(rows, cols);
        detail::require(rows == L.cols() && cols == R.cols(), "correction: shape mismatch");
        return L.transpose() * R;
    }
};

inline TruncationPair empty_pair(Index rows, Index cols) {
    return {Matrix(0, rows), Matrix(0, cols)};
}

inline TruncationPair truncation_pair(const Matrix &X, Index r) {
    const Index q = std::min(X.rows(), X.cols());
    detail::require(r >= 0 && r <= q, "truncation_pair: r must lie in [0, min(m,n)]");
    if (r == 0)
        return empty_pair(X.rows(), X.cols());
    const SvdFactors f = svd(X, SvdMode::Thin);
    return {f.U.leftCols(r).transpose(), f.V.leftCols(r).transpose()};
}

} // namespace lowrank
