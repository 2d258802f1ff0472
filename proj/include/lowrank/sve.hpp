#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>

#include <cmath>
#include <string>

namespace lowrank {

/// Spectrum diagnostics behind a rank estimate.
///
/// With 1-based indices, St_i = |S_i - S_{i+1}| and Stt_i = |St_{i+1} - St_i|.
/// The estimate is the last index whose second difference exceeds kappa, i.e.
/// the position of the last significant jump in the singular value gaps.
struct SveProfile {
    Vector S;
    Vector St;
    Vector Stt;
    double kappa = 0.0;
    Index r_hat = 0;
};

inline SveProfile estimate_rank(const Vector &S, double kappa) {
    detail::require(S.size() >= 3, "estimate_rank: need at least three singular values");
    detail::require(kappa > 0.0 && std::isfinite(kappa), "estimate_rank: kappa must be positive");
    require_finite(S, "estimate_rank");
    for (Index i = 0; i < S.size(); ++i) {
        detail::require(S(i) >= 0.0, "estimate_rank: singular values must be nonnegative");
        if (i + 1 < S.size())
            detail::require(S(i + 1) <= S(i), "estimate_rank: singular values must be nonincreasing");
    }

    SveProfile p;
    p.S = S;
    p.kappa = kappa;
    const Index q = S.size();
    p.St = (S.head(q - 1) - S.tail(q - 1)).cwiseAbs();
    p.Stt = (p.St.tail(q - 2) - p.St.head(q - 2)).cwiseAbs();
    for (Index i = p.Stt.size(); i >= 1; --i) {
        if (p.Stt(i - 1) > kappa) {
            p.r_hat = i;
            break;
        }
    }
    return p;
}

enum class KappaMode { Explicit, RealHeuristic, SyntheticHeuristic };

/// Heuristic thresholds: sqrt(mn)/(3s) for natural images, s*sqrt(mn)/30 for
/// synthetic low-rank data.
inline double default_kappa(Index m, Index n, double s, KappaMode mode) {
    detail::require(m >= 1 && n >= 1, "default_kappa: dimensions must be positive");
    detail::require(s > 0.0 && std::isfinite(s), "default_kappa: s must be positive");
    const double root = std::sqrt(static_cast<double>(m) * static_cast<double>(n));
    switch (mode) {
    case KappaMode::RealHeuristic:
        return root / (3.0 * s);
    case KappaMode::SyntheticHeuristic:
        return s * root / 30.0;
    case KappaMode::Explicit:
        break;
    }
    throw ArgumentError("default_kappa: explicit mode has no heuristic");
}

struct SveConfig {
    KappaMode mode = KappaMode::SyntheticHeuristic;
    double kappa = 0.0; // used when mode == Explicit
    double s = 1.0;
    int max_outer = 10;
    int stability = 2;
    /// When false only the plain nuclear-norm stage runs (r forced to 0).
    bool enabled = true;

    void validate() const {
        if (mode == KappaMode::Explicit)
            detail::require(kappa > 0.0 && std::isfinite(kappa), "SveConfig: explicit kappa must be positive");
        detail::require(s > 0.0 && std::isfinite(s), "SveConfig: s must be positive");
        detail::require(max_outer >= 1, "SveConfig: max_outer must be at least 1");
        detail::require(stability >= 2, "SveConfig: stability must be at least 2");
    }

    double resolve_kappa(Index m, Index n) const {
        return mode == KappaMode::Explicit ? kappa : default_kappa(m, n, s, mode);
    }
};

inline SveProfile estimate_rank(const Matrix &X, const SveConfig &cfg) {
    return estimate_rank(singular_values(X), cfg.resolve_kappa(X.rows(), X.cols()));
}

} // namespace lowrank
