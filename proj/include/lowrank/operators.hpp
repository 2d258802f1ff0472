#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace lowrank {

/// A (row, col) position in an m x n grid.
struct Entry {
    Index row = 0;
    Index col = 0;

    friend auto operator<=>(const Entry &, const Entry &) = default;
};

enum class OperatorKind { SamplingMask, PartialDct2D };

/// Orthonormal DCT-II matrix: (D x) computes the transform of a length-n signal x.
inline Matrix dct2_matrix(Index n) {
    detail::require(n >= 1, "dct2_matrix: size must be positive");
    Matrix D(n, n);
    const double scale0 = std::sqrt(1.0 / static_cast<double>(n));
    const double scale = std::sqrt(2.0 / static_cast<double>(n));
    for (Index k = 0; k < n; ++k)
        for (Index i = 0; i < n; ++i)
            D(k, i) = (k == 0 ? scale0 : scale) *
                      std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * k) /
                               static_cast<double>(2 * n));
    return D;
}

/// Observes the entries of X at a fixed, ordered list of distinct positions.
class SamplingMask {
  public:
    SamplingMask(Index rows, Index cols, std::vector<Entry> indices)
        : rows_(rows), cols_(cols), indices_(std::move(indices)) {
        detail::require(rows >= 1 && cols >= 1, "SamplingMask: dimensions must be positive");
        detail::require(!indices_.empty(), "SamplingMask: at least one sampled entry is required");
        std::vector<char> seen(static_cast<std::size_t>(rows * cols), 0);
        for (const Entry &e : indices_) {
            detail::require(e.row >= 0 && e.row < rows && e.col >= 0 && e.col < cols,
                            "SamplingMask: index out of range");
            auto &flag = seen[static_cast<std::size_t>(e.row * cols + e.col)];
            detail::require(flag == 0, "SamplingMask: duplicate index");
            flag = 1;
        }
    }

    const std::vector<Entry> &indices() const { return indices_; }

    Vector apply(const Matrix &X) const {
        Vector y(static_cast<Index>(indices_.size()));
        for (std::size_t i = 0; i < indices_.size(); ++i)
            y(static_cast<Index>(i)) = X(indices_[i].row, indices_[i].col);
        return y;
    }

    Matrix adjoint(const Vector &y) const {
        Matrix X = Matrix::Zero(rows_, cols_);
        for (std::size_t i = 0; i < indices_.size(); ++i)
            X(indices_[i].row, indices_[i].col) = y(static_cast<Index>(i));
        return X;
    }

    Entry grid_position(std::size_t i) const { return indices_[i]; }

  private:
    Index rows_;
    Index cols_;
    std::vector<Entry> indices_;
};

/// Keeps a subset of the coefficients of the orthonormal 2-D DCT-II (rows
/// transformed, then columns). Coefficient (i, j) has flattened index i*n + j.
class PartialDct2D {
  public:
    PartialDct2D(Index rows, Index cols, std::vector<Index> kept)
        : rows_(rows), cols_(cols), kept_(std::move(kept)) {
        detail::require(rows >= 1 && cols >= 1, "PartialDct2D: dimensions must be positive");
        detail::require(!kept_.empty(), "PartialDct2D: at least one kept frequency is required");
        std::vector<char> seen(static_cast<std::size_t>(rows * cols), 0);
        for (Index k : kept_) {
            detail::require(k >= 0 && k < rows * cols, "PartialDct2D: frequency index out of range");
            auto &flag = seen[static_cast<std::size_t>(k)];
            detail::require(flag == 0, "PartialDct2D: duplicate frequency index");
            flag = 1;
        }
        row_basis_ = dct2_matrix(rows);
        col_basis_ = dct2_matrix(cols);
    }

    const std::vector<Index> &kept() const { return kept_; }

    /// Full coefficient grid D_m X D_n^T.
    Matrix forward(const Matrix &X) const { return row_basis_ * X * col_basis_.transpose(); }
    Matrix inverse(const Matrix &C) const { return row_basis_.transpose() * C * col_basis_; }

    Vector apply(const Matrix &X) const {
        const Matrix C = forward(X);
        Vector y(static_cast<Index>(kept_.size()));
        for (std::size_t i = 0; i < kept_.size(); ++i)
            y(static_cast<Index>(i)) = C(kept_[i] / cols_, kept_[i] % cols_);
        return y;
    }

    Matrix adjoint(const Vector &y) const {
        Matrix C = Matrix::Zero(rows_, cols_);
        for (std::size_t i = 0; i < kept_.size(); ++i)
            C(kept_[i] / cols_, kept_[i] % cols_) = y(static_cast<Index>(i));
        return inverse(C);
    }

    Entry grid_position(std::size_t i) const { return {kept_[i] / cols_, kept_[i] % cols_}; }

  private:
    Index rows_;
    Index cols_;
    std::vector<Index> kept_;
    Matrix row_basis_;
    Matrix col_basis_;
};

/// Linear measurement map A : R^{m x n} -> R^p satisfying A A^* = I.
///
/// Every measurement owns one cell of an m x n "measurement grid" (the sampled
/// position for a mask, the coefficient position for the DCT). `to_grid` and
/// `from_grid` move between the length-p vector form and that matrix form.
class LinearMap {
  public:
    LinearMap(SamplingMask mask, Index rows, Index cols)
        : rows_(rows), cols_(cols), impl_(std::move(mask)) {}
    LinearMap(PartialDct2D dct, Index rows, Index cols)
        : rows_(rows), cols_(cols), impl_(std::move(dct)) {}

    static LinearMap sampling(Index rows, Index cols, std::vector<Entry> indices) {
        return {SamplingMask(rows, cols, std::move(indices)), rows, cols};
    }
    static LinearMap partial_dct(Index rows, Index cols, std::vector<Index> kept) {
        return {PartialDct2D(rows, cols, std::move(kept)), rows, cols};
    }

    Index rows() const { return rows_; }
    Index cols() const { return cols_; }
    Index measurements() const {
        return std::visit([](const auto &op) { return measurement_count(op); }, impl_);
    }
    OperatorKind kind() const {
        return std::holds_alternative<SamplingMask>(impl_) ? OperatorKind::SamplingMask
                                                            : OperatorKind::PartialDct2D;
    }
    const SamplingMask *mask() const { return std::get_if<SamplingMask>(&impl_); }
    const PartialDct2D *dct() const { return std::get_if<PartialDct2D>(&impl_); }

    Vector apply(const Matrix &X) const {
        detail::require(X.rows() == rows_ && X.cols() == cols_, "apply: matrix shape does not match operator");
        return std::visit([&](const auto &op) { return op.apply(X); }, impl_);
    }

    Matrix adjoint(const Vector &y) const {
        detail::require(y.size() == measurements(), "adjoint: vector length does not match operator");
        return std::visit([&](const auto &op) { return op.adjoint(y); }, impl_);
    }

    /// Scatter a measurement vector into its grid cells (zeros elsewhere).
    Matrix to_grid(const Vector &y) const {
        detail::require(y.size() == measurements(), "to_grid: vector length does not match operator");
        Matrix G = Matrix::Zero(rows_, cols_);
        std::visit(
            [&](const auto &op) {
                for (Index i = 0; i < y.size(); ++i) {
                    const Entry e = op.grid_position(static_cast<std::size_t>(i));
                    G(e.row, e.col) = y(i);
                }
            },
            impl_);
        return G;
    }

    /// Gather the measurement cells of a grid matrix in measurement order.
    Vector from_grid(const Matrix &G) const {
        detail::require(G.rows() == rows_ && G.cols() == cols_, "from_grid: matrix shape does not match operator");
        Vector y(measurements());
        std::visit(
            [&](const auto &op) {
                for (Index i = 0; i < y.size(); ++i) {
                    const Entry e = op.grid_position(static_cast<std::size_t>(i));
                    y(i) = G(e.row, e.col);
                }
            },
            impl_);
        return y;
    }

  private:
    static Index measurement_count(const SamplingMask &m) { return static_cast<Index>(m.indices().size()); }
    static Index measurement_count(const PartialDct2D &d) { return static_cast<Index>(d.kept().size()); }

    Index rows_;
    Index cols_;
    std::variant<SamplingMask, PartialDct2D> impl_;
};

/// Euclidean projection of Y onto {U : ||A U - b|| <= delta} for a tight frame A.
inline Matrix project_ball(const LinearMap &A, const Matrix &Y, const Vector &b, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta))
        throw ArgumentError("project_ball: delta must be a finite nonnegative number");
    detail::require(b.size() == A.measurements(), "project_ball: b length does not match operator");
    const Vector r = b - A.apply(Y);
    if (delta == 0.0)
        return Y + A.adjoint(r);
    const double norm = r.norm();
    const double eta = std::max(norm / delta - 1.0, 0.0);
    if (eta == 0.0)
        return Y;
    return Y + (eta / (eta + 1.0)) * A.adjoint(r);
}

/// ||(I - a/(1+a) A^*A)((I + a A^*A) X) - X||_F: residual of the closed-form
/// inverse of I + a A^*A for a tight frame.
inline double inverse_identity_residual(const LinearMap &A, double alpha, const Matrix &X) {
    detail::require(alpha > 0.0 && std::isfinite(alpha), "inverse_identity_residual: alpha must be positive");
    const Matrix forward = X + alpha * A.adjoint(A.apply(X));
    const Matrix back = forward - (alpha / (1.0 + alpha)) * A.adjoint(A.apply(forward));
    return (back - X).norm();
}

// ---------------------------------------------------------------------------
// Random construction and text files.

/// Number of measurements for a sample ratio: round(ratio * m * n), at least 1.
inline Index sample_count(Index rows, Index cols, double ratio) {
    detail::require(ratio > 0.0 && ratio <= 1.0, "sample ratio must lie in (0, 1]");
    const auto total = static_cast<double>(rows * cols);
    return std::max<Index>(1, static_cast<Index>(std::llround(ratio * total)));
}

namespace detail {

inline std::vector<Index> random_subset(Index universe, Index count, std::mt19937_64 &rng) {
    std::vector<Index> all(static_cast<std::size_t>(universe));
    std::iota(all.begin(), all.end(), Index{0});
    // partial Fisher-Yates
    for (Index i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::uint64_t> pick(0, static_cast<std::uint64_t>(universe - 1 - i));
        const auto j = static_cast<std::size_t>(i) + static_cast<std::size_t>(pick(rng));
        std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(count));
    std::sort(all.begin(), all.end());
    return all;
}

} // namespace detail

inline LinearMap random_sampling_mask(Index rows, Index cols, double ratio, std::mt19937_64 &rng) {
    const Index p = sample_count(rows, cols, ratio);
    std::vector<Entry> indices;
    indices.reserve(static_cast<std::size_t>(p));
    for (Index flat : detail::random_subset(rows * cols, p, rng))
        indices.push_back({flat / cols, flat % cols});
    return LinearMap::sampling(rows, cols, std::move(indices));
}

/// Uniformly random kept frequencies. With `keep_dc` the DC coefficient is
/// always included and the remaining p - 1 are drawn from the rest.
inline LinearMap random_partial_dct(Index rows, Index cols, double ratio, std::mt19937_64 &rng,
                                    bool keep_dc = false) {
    const Index p = sample_count(rows, cols, ratio);
    std::vector<Index> kept;
    if (keep_dc) {
        kept = detail::random_subset(rows * cols - 1, p - 1, rng);
        for (Index &k : kept)
            k += 1;
        kept.insert(kept.begin(), 0);
    } else {
        kept = detail::random_subset(rows * cols, p, rng);
    }
    return LinearMap::partial_dct(rows, cols, std::move(kept));
}

namespace detail {

inline std::ifstream open_input(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError(path.string() + ": cannot open file");
    return in;
}

inline void read_header(std::istream &in, const std::filesystem::path &path, Index &m, Index &n, Index &p) {
    std::string line;
    if (!std::getline(in, line))
        throw FormatError(path.string() + ": missing header line \"m n p\"");
    std::istringstream header(line);
    if (!(header >> m >> n >> p) || m < 1 || n < 1 || p < 1)
        throw FormatError(path.string() + ": header must be \"m n p\" with positive counts");
}

} // namespace detail

/// Mask file: "m n p" then p lines "i j" (0-based).
inline LinearMap load_mask_file(const std::filesystem::path &path) {
    auto in = detail::open_input(path);
    Index m = 0, n = 0, p = 0;
    detail::read_header(in, path, m, n, p);
    std::vector<Entry> indices;
    indices.reserve(static_cast<std::size_t>(p));
    for (Index k = 0; k < p; ++k) {
        Entry e;
        if (!(in >> e.row >> e.col))
            throw FormatError(path.string() + ": expected " + std::to_string(p) + " index lines, got " +
                              std::to_string(k));
        indices.push_back(e);
    }
    try {
        return LinearMap::sampling(m, n, std::move(indices));
    } catch (const ArgumentError &err) {
        throw FormatError(path.string() + ": " + err.what());
    }
}

/// DCT-keep file: "m n p" then p lines with a flattened coefficient index.
inline LinearMap load_dct_file(const std::filesystem::path &path) {
    auto in = detail::open_input(path);
    Index m = 0, n = 0, p = 0;
    detail::read_header(in, path, m, n, p);
    std::vector<Index> kept;
    kept.reserve(static_cast<std::size_t>(p));
    for (Index k = 0; k < p; ++k) {
        Index flat = 0;
        if (!(in >> flat))
            throw FormatError(path.string() + ": expected " + std::to_string(p) + " index lines, got " +
                              std::to_string(k));
        kept.push_back(flat);
    }
    try {
        return LinearMap::partial_dct(m, n, std::move(kept));
    } catch (const ArgumentError &err) {
        throw FormatError(path.string() + ": " + err.what());
    }
}

/// Writes the operator in the file format matching its kind.
inline void save_operator_file(const LinearMap &A, const std::filesystem::path &path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError(path.string() + ": cannot open file for writing");
    out << A.rows() << ' ' << A.cols() << ' ' << A.measurements() << '\n';
    if (const auto *mask = A.mask()) {
        for (const Entry &e : mask->indices())
            out << e.row << ' ' << e.col << '\n';
    } else {
        for (Index k : A.dct()->kept())
            out << k << '\n';
    }
}

} // namespace lowrank
