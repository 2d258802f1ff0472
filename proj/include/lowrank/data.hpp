#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/operators.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace lowrank {

/// Independent random streams derived from one experiment seed. Each stream
/// is seeded from (seed, stream id), so e.g. changing the noise level leaves
/// the ground truth and the operator untouched.
enum class RngStream : std::uint32_t { Factors = 1, Noise = 2, Mask = 3, Frequencies = 4, Texture = 5 };

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64 &rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix G(rows, cols);
    // Column-major fill order is part of the reproducibility contract.
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            G(i, j) = normal(rng);
    return G;
}

inline Vector gaussian_vector(Index size, std::mt19937_64 &rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Vector v(size);
    for (Index i = 0; i < size; ++i)
        v(i) = normal(rng);
    return v;
}

struct SyntheticSpec {
    Index m = 100;
    Index n = 100;
    Index r = 5;
    double sr = 0.5;
    double std = 0.0;
    std::uint64_t seed = 0;
    OperatorKind kind = OperatorKind::PartialDct2D;
    bool keep_dc = false;

    void validate() const {
        detail::require(m >= 1 && n >= 1, "SyntheticSpec: dimensions must be positive");
        detail::require(r >= 1 && r <= std::min(m, n), "SyntheticSpec: rank must lie in [1, min(m,n)]");
        detail::require(sr > 0.0 && sr <= 1.0, "SyntheticSpec: sample ratio must lie in (0, 1]");
        detail::require(std >= 0.0 && std::isfinite(std), "SyntheticSpec: std must be nonnegative");
    }
};

struct SyntheticInstance {
    Matrix truth;
    LinearMap op;
    Vector b;
};

/// Builds the operator for a spec from its dedicated stream.
inline LinearMap make_operator(Index m, Index n, double sr, OperatorKind kind, std::uint64_t seed,
                               bool keep_dc = false) {
    if (kind == OperatorKind::SamplingMask) {
        auto rng = make_rng(seed, RngStream::Mask);
        return random_sampling_mask(m, n, sr, rng);
    }
    auto rng = make_rng(seed, RngStream::Frequencies);
    return random_partial_dct(m, n, sr, rng, keep_dc);
}

/// X* = G1 G2 with standard normal factors (m x r, r x n); b = A(X*) + noise.
inline SyntheticInstance synth_lowrank(const SyntheticSpec &spec) {
    spec.validate();
    auto factors = make_rng(spec.seed, RngStream::Factors);
    const Matrix left = gaussian_matrix(spec.m, spec.r, factors);
    const Matrix right = gaussian_matrix(spec.r, spec.n, factors);
    Matrix truth = left * right;

    LinearMap op = make_operator(spec.m, spec.n, spec.sr, spec.kind, spec.seed, spec.keep_dc);
    Vector b = op.apply(truth);
    if (spec.std > 0.0) {
        auto noise = make_rng(spec.seed, RngStream::Noise);
        b += gaussian_vector(b.size(), noise, spec.std);
    }
    return {std::move(truth), std::move(op), std::move(b)};
}

/// An 8-bit RGB test image: a rank-`rank` composite of smooth sinusoidal
/// factors shared by the channels (with per-channel weights) around mid-gray,
/// plus i.i.d. Gaussian texture, clamped to [0, 255].
inline std::vector<Matrix> synth_texture_image(Index height, Index width, Index rank, double texture_std,
                                               std::uint64_t seed) {
    detail::require(height >= 2 && width >= 2, "synth_texture_image: image too small");
    detail::require(rank >= 1 && rank <= std::min(height, width), "synth_texture_image: bad rank");
    detail::require(texture_std >= 0.0 && std::isfinite(texture_std), "synth_texture_image: bad texture std");

    auto rng = make_rng(seed, RngStream::Factors);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double pi = std::numbers::pi;
    Matrix left(height, rank), right(rank, width);
    for (Index k = 0; k < rank; ++k) {
        const double f1 = 1.0 + 4.0 * unit(rng), p1 = 2.0 * pi * unit(rng);
        const double f2 = 1.0 + 4.0 * unit(rng), p2 = 2.0 * pi * unit(rng);
        for (Index i = 0; i < height; ++i)
            left(i, k) = std::sin(f1 * pi * static_cast<double>(i) / static_cast<double>(height) + p1);
        for (Index j = 0; j < width; ++j)
            right(k, j) = std::cos(f2 * pi * static_cast<double>(j) / static_cast<double>(width) + p2);
    }

    auto texture = make_rng(seed, RngStream::Texture);
    std::vector<Matrix> channels(3);
    for (Matrix &c : channels) {
        Vector weight(rank);
        for (Index k = 0; k < rank; ++k)
            weight(k) = (0.5 + unit(rng)) * 40.0 / static_cast<double>(k + 1);
        c = (left * weight.asDiagonal() * right).array() + 128.0;
        if (texture_std > 0.0)
            c += gaussian_matrix(height, width, texture, texture_std);
        c = c.array().max(0.0).min(255.0).round();
    }
    return channels;
}

/// Ball radius matching a known noise level: sqrt(p) * std.
inline double noise_radius(Index measurements, double std) {
    return std::sqrt(static_cast<double>(measurements)) * std;
}

} // namespace lowrank
