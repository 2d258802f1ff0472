#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>
#include <lowrank/operators.hpp>
#include <lowrank/sve.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lowrank {

enum class InnerSolver { Admm, Apgl, Admmap };

inline const char *to_string(InnerSolver s) {
    switch (s) {
    case InnerSolver::Admm:
        return "admm";
    case InnerSolver::Apgl:
        return "apgl";
    case InnerSolver::Admmap:
        return "admmap";
    }
    return "?";
}

struct SolverConfig {
    double beta = 1e-3;     // ADMM penalty (initial penalty for ADMMAP)
    double gamma = 1.0;     // multiplier step
    double mu = 1.0;        // fidelity weight of the unconstrained model (APGL)
    double delta = 0.0;     // radius of the measurement ball; 0 = equality constraint
    double inner_tol = 1e-4; // ||X_{k+1}-X_k||_F^2 / ||Data||_F^2 inside a solver
    double outer_tol = 1e-2; // same test on the l-loop of a stage
    double feas_tol = 1e-3;  // ADMM family: ||X-Y||_F and ||AX-b|| - delta, relative to ||Data||_F
    int max_inner_iters = 2000;
    int max_ll_iters = 30;
    double beta_max = 1e6;
    double rho0 = 1.9;
    double eps_adapt = 1e-3;

    void validate() const {
        auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
        detail::require(positive(beta), "SolverConfig: beta must be positive");
        detail::require(gamma > 0.0 && gamma < (std::sqrt(5.0) + 1.0) / 2.0,
                        "SolverConfig: gamma must lie in (0, (sqrt(5)+1)/2)");
        detail::require(positive(mu), "SolverConfig: mu must be positive");
        detail::require(delta >= 0.0 && std::isfinite(delta), "SolverConfig: delta must be nonnegative");
        detail::require(positive(inner_tol) && positive(outer_tol) && positive(feas_tol),
                        "SolverConfig: tolerances must be positive");
        detail::require(max_inner_iters >= 1 && max_ll_iters >= 1, "SolverConfig: iteration caps must be positive");
        detail::require(positive(beta_max) && beta_max >= beta, "SolverConfig: beta_max must be >= beta");
        detail::require(rho0 >= 1.0 && std::isfinite(rho0), "SolverConfig: rho0 must be >= 1");
        detail::require(positive(eps_adapt), "SolverConfig: eps_adapt must be positive");
    }
};

/// One inner iteration. `objective` is ||X||_* - Tr(L X R^T) at the new iterate,
/// `residual` is ||A X - b||, `beta` the penalty used by the iteration (0 for APGL).
struct IterationRecord {
    int stage = 0;
    int l = 0;
    int k = 0;
    double objective = 0.0;
    double residual = 0.0;
    double beta = 0.0;
};

/// Diagnostics of one outer stage (or of a single stand-alone inner solve).
struct StageTrace {
    int stage = 0;
    Index rank = 0;
    std::vector<int> inner_iterations; // per l-step
    std::vector<double> objectives;    // per l-step, at the returned iterate
    std::vector<double> residuals;     // per l-step
    std::vector<double> changes;       // per l-step: ||X_{l+1}-X_l||_F^2 / ||Data||_F^2
    std::vector<IterationRecord> iterations;
    std::optional<SveProfile> sve;

    int total_inner_iterations() const {
        int total = 0;
        for (int k : inner_iterations)
            total += k;
        return total;
    }
};

/// An inner solve diverged; carries the trace up to the failure.
class SolverFailure : public std::runtime_error {
  public:
    SolverFailure(const std::string &what, StageTrace trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    const StageTrace &trace() const { return trace_; }

  private:
    StageTrace trace_;
};

struct SolveResult {
    Matrix X;
    StageTrace trace;
    bool converged = false;
};

/// ||X||_* - Tr(L X R^T).
inline double objective(const Matrix &X, const TruncationPair &pair) {
    return nuclear_norm(X) - pair.trace_term(X);
}

namespace detail {

inline void check_problem(const LinearMap &A, const Vector &b, const TruncationPair &pair) {
    require(b.size() == A.measurements(), "solver: b length does not match operator");
    require_finite(b, "solver");
    require(pair.L.cols() == A.rows() && pair.R.cols() == A.cols() && pair.L.rows() == pair.R.rows(),
            "solver: truncation pair shape mismatch");
}

/// Shared bookkeeping for the inner solvers: relative-change stopping test
/// and the divergence guard.
class InnerMonitor {
  public:
    InnerMonitor(const Matrix &data, double initial_objective, const char *name)
        : name_(name) {
        const double dn2 = data.squaredNorm();
        data_norm2_ = dn2 > 0.0 ? dn2 : 1.0;
        // The reference is floored at ||Data||_F so a zero initial objective
        // does not make the guard trip on the first step.
        limit_ = 1e6 * std::max(std::abs(initial_objective), std::sqrt(dn2));
    }

    double relative_change(const Matrix &next, const Matrix &prev) const {
        return (next - prev).squaredNorm() / data_norm2_;
    }

    /// ||X - Y||_F and the excess of ||A X - b|| over delta are both within
    /// feas_tol * ||Data||_F. Without this, an iterate parked at zero while
    /// the multiplier builds up would pass the relative-change test.
    bool feasible(const Matrix &X, const Matrix &Y, double residual, double delta, double feas_tol) const {
        const double scale = feas_tol * std::sqrt(data_norm2_);
        return (X - Y).norm() <= scale && residual <= delta + scale;
    }

    void record(int k, double obj, double residual, double beta) {
        trace.iterations.push_back({0, 0, k, obj, residual, beta});
        if (!std::isfinite(obj) || !std::isfinite(residual) || obj > limit_)
            throw SolverFailure(std::string(name_) + ": diverged at iteration " + std::to_string(k) +
                                    " (objective " + std::to_string(obj) + ")",
                                trace);
    }

    SolveResult finish(Matrix X, int iterations, bool converged, double residual, Index rank) {
        trace.rank = rank;
        trace.inner_iterations.push_back(iterations);
        trace.objectives.push_back(trace.iterations.empty() ? 0.0 : trace.iterations.back().objective);
        trace.residuals.push_back(residual);
        return {std::move(X), std::move(trace), converged};
    }

    StageTrace trace;

  private:
    const char *name_;
    double data_norm2_ = 1.0;
    double limit_ = 0.0;
};

} // namespace detail

// ---------------------------------------------------------------------------
// TNNR-ADMM: min ||X||_* - Tr(L Y R^T)  s.t.  X = Y, ||A Y - b|| <= delta.

inline SolveResult tnnr_admm(const LinearMap &A, const Vector &b, const TruncationPair &pair, double delta,
                             const SolverConfig &cfg) {
    cfg.validate();
    detail::check_problem(A, b, pair);
    detail::require(delta >= 0.0 && std::isfinite(delta), "tnnr_admm: delta must be nonnegative");

    const Matrix data = A.adjoint(b);
    const Matrix correction = pair.correction(A.rows(), A.cols());
    const double beta = cfg.beta;

    Matrix X = data;
    Matrix Y = X;
    Matrix Z = X;
    detail::InnerMonitor monitor(data, objective(X, pair), "tnnr_admm");

    bool converged = false;
    int k = 0;
    double residual = (A.apply(X) - b).norm();
    while (k < cfg.max_inner_iters) {
        ++k;
        const Shrinkage step = shrink_detailed(Y + Z / beta, 1.0 / beta);
        const Matrix &X_next = step.value;
        Y = project_ball(A, X_next + (correction - Z) / beta, b, delta);
        Z -= (cfg.gamma * beta) * (X_next - Y);

        const double change = monitor.relative_change(X_next, X);
        residual = (A.apply(X_next) - b).norm();
        monitor.record(k, step.nuclear_norm - pair.trace_term(X_next), residual, beta);
        X = X_next;
        if (change <= cfg.inner_tol && monitor.feasible(X, Y, residual, delta, cfg.feas_tol)) {
            converged = true;
            break;
        }
    }
    return monitor.finish(std::move(X), k, converged, residual, pair.rank());
}

// ---------------------------------------------------------------------------
// TNNR-APGL: min ||X||_* + F(X),  F(X) = -Tr(L X R^T) + mu/2 ||A X - b||^2.

/// F(Y) = -Tr(L Y R^T) + (mu/2) ||A Y - b||^2.
inline double apgl_smooth_part(const LinearMap &A, const Vector &b, const TruncationPair &pair, double mu,
                               const Matrix &Y) {
    return -pair.trace_term(Y) + 0.5 * mu * (A.apply(Y) - b).squaredNorm();
}

/// grad F(Y) = -L^T R + mu A^*(A Y - b).
inline Matrix apgl_gradient(const LinearMap &A, const Vector &b, const TruncationPair &pair, double mu,
                            const Matrix &Y) {
    return -pair.correction(A.rows(), A.cols()) + mu * A.adjoint(A.apply(Y) - b);
}

/// tau_{k+1} = (1 + sqrt(1 + 4 tau_k^2)) / 2.
inline double next_momentum(double tau) { return 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tau * tau)); }

/// The proximal step uses the fixed step size 1/mu (the Lipschitz constant of
/// grad F is mu because ||A^*A|| <= 1); tau_k only drives the extrapolation.
inline SolveResult tnnr_apgl(const LinearMap &A, const Vector &b, const TruncationPair &pair, double mu,
                             const SolverConfig &cfg) {
    cfg.validate();
    detail::check_problem(A, b, pair);
    detail::require(mu > 0.0 && std::isfinite(mu), "tnnr_apgl: mu must be positive");

    const Matrix data = A.adjoint(b);
    const double step_size = 1.0 / mu;

    Matrix X = data;
    Matrix Y = X;
    double tau = 1.0;
    detail::InnerMonitor monitor(data, objective(X, pair), "tnnr_apgl");

    bool converged = false;
    int k = 0;
    double residual = (A.apply(X) - b).norm();
    while (k < cfg.max_inner_iters) {
        ++k;
        const Matrix forward = Y - step_size * apgl_gradient(A, b, pair, mu, Y);
        const Shrinkage step = shrink_detailed(forward, step_size);
        const Matrix &X_next = step.value;
        const double tau_next = next_momentum(tau);
        Y = X_next + ((tau - 1.0) / tau_next) * (X_next - X);
        tau = tau_next;

        const double change = monitor.relative_change(X_next, X);
        residual = (A.apply(X_next) - b).norm();
        monitor.record(k, step.nuclear_norm - pair.trace_term(X_next), residual, 0.0);
        X = X_next;
        if (change <= cfg.inner_tol) {
            converged = true;
            break;
        }
    }
    return monitor.finish(std::move(X), k, converged, residual, pair.rank());
}

// ---------------------------------------------------------------------------
// TNNR-ADMMAP: both constraints folded into P(X) + Q(Y) = C on 2m x 2n blocks,
//   P(X) = [X 0; 0 0],  Q(Y) = [-Y 0; 0 A(Y)],  C = [0 0; 0 Data + xi],
// where the (2,2) blocks live on the operator's measurement grid.

/// Q(Y) as a 2m x 2n block matrix.
inline Matrix q_apply(const LinearMap &A, const Matrix &Y) {
    const Index m = A.rows(), n = A.cols();
    detail::require(Y.rows() == m && Y.cols() == n, "q_apply: shape mismatch");
    Matrix W = Matrix::Zero(2 * m, 2 * n);
    W.topLeftCorner(m, n) = -Y;
    W.bottomRightCorner(m, n) = A.to_grid(A.apply(Y));
    return W;
}

/// Q^*(W) = -W11 + A^*(W22), reading W22 at the measurement grid cells.
inline Matrix q_adjoint(const Matrix &W, const LinearMap &A) {
    const Index m = A.rows(), n = A.cols();
    detail::require(W.rows() == 2 * m && W.cols() == 2 * n, "q_adjoint: block matrix must be 2m x 2n");
    return -W.topLeftCorner(m, n) + A.adjoint(A.from_grid(W.bottomRightCorner(m, n)));
}

/// Closed-form Y-update: the solution of Q^*Q(Y) = (1/beta) L^T R - Q^*(P(X) - C - Z/beta),
///   Y = X - 1/(2 beta) A^*A(L^T R - Z11 + beta X) + (1/beta)(L^T R - Z11)
///         + 1/(2 beta) A^*(beta b + beta xi + Z22).
inline Matrix admmap_y_update(const LinearMap &A, const Vector &b, const Matrix &correction, const Matrix &X,
                              const Matrix &Z, const Matrix &xi, double beta) {
    const Index m = A.rows(), n = A.cols();
    const Matrix Z11 = Z.topLeftCorner(m, n);
    const Vector z22 = A.from_grid(Z.bottomRightCorner(m, n));
    const Matrix lr_minus_z = correction - Z11;
    const Matrix inner = lr_minus_z + beta * X;
    return X - (0.5 / beta) * A.adjoint(A.apply(inner)) + lr_minus_z / beta +
           (0.5 / beta) * A.adjoint(beta * b + beta * A.from_grid(xi) + z22);
}

namespace detail {

inline Vector project_radius(const Vector &v, double radius) {
    const double norm = v.norm();
    return norm <= radius ? v : Vector((radius / norm) * v);
}

} // namespace detail

inline SolveResult tnnr_admmap(const LinearMap &A, const Vector &b, const TruncationPair &pair, double delta,
                               const SolverConfig &cfg) {
    cfg.validate();
    detail::check_problem(A, b, pair);
    detail::require(delta >= 0.0 && std::isfinite(delta), "tnnr_admmap: delta must be nonnegative");

    const Index m = A.rows(), n = A.cols();
    const Matrix data = A.adjoint(b);
    const Matrix data_grid = A.to_grid(b);
    const Matrix correction = pair.correction(m, n);

    Matrix X = data;
    Matrix Y = X;
    Matrix Z = Matrix::Zero(2 * m, 2 * n);
    Matrix xi = Matrix::Zero(m, n);
    if (delta > 0.0)
        xi = A.to_grid(detail::project_radius(A.apply(X) - b, delta));
    double beta = cfg.beta;
    detail::InnerMonitor monitor(data, objective(X, pair), "tnnr_admmap");

    bool converged = false;
    int k = 0;
    double residual = (A.apply(X) - b).norm();
    while (k < cfg.max_inner_iters) {
        ++k;
        const Shrinkage step = shrink_detailed(Y + Z.topLeftCorner(m, n) / beta, 1.0 / beta);
        const Matrix &X_next = step.value;
        const Matrix Y_next = admmap_y_update(A, b, correction, X_next, Z, xi, beta);

        const Vector AY = A.apply(Y_next);
        Z.topLeftCorner(m, n) -= beta * (X_next - Y_next);
        Z.bottomRightCorner(m, n) -= beta * (A.to_grid(AY) - data_grid - xi);
        if (delta > 0.0) {
            const Vector c2 = AY - b - A.from_grid(Z.bottomRightCorner(m, n)) / beta;
            xi = A.to_grid(detail::project_radius(c2, delta));
        }

        const double change = monitor.relative_change(X_next, X);
        residual = (A.apply(X_next) - b).norm();
        monitor.record(k, step.nuclear_norm - pair.trace_term(X_next), residual, beta);

        const double c_norm = (data_grid + xi).norm();
        const double movement = std::max((X_next - X).norm(), (Y_next - Y).norm());
        const double rho = (c_norm > 0.0 && beta * movement / c_norm < cfg.eps_adapt) ? cfg.rho0 : 1.0;
        beta = std::min(cfg.beta_max, rho * beta);

        X = X_next;
        Y = Y_next;
        if (change <= cfg.inner_tol && monitor.feasible(X, Y, residual, delta, cfg.feas_tol)) {
            converged = true;
            break;
        }
    }
    return monitor.finish(std::move(X), k, converged, residual, pair.rank());
}

inline SolveResult solve_inner(InnerSolver solver, const LinearMap &A, const Vector &b,
                               const TruncationPair &pair, const SolverConfig &cfg) {
    switch (solver) {
    case InnerSolver::Admm:
        return tnnr_admm(A, b, pair, cfg.delta, cfg);
    case InnerSolver::Apgl:
        return tnnr_apgl(A, b, pair, cfg.mu, cfg);
    case InnerSolver::Admmap:
        return tnnr_admmap(A, b, pair, cfg.delta, cfg);
    }
    throw ArgumentError("solve_inner: unknown solver");
}

// ---------------------------------------------------------------------------
// Multi-stage recovery.

/// Step 2 of the outer loop for a fixed truncation rank: starting from
/// X_1 = A^*(b), alternate truncation_pair(X_l, r) and an inner solve until
/// ||X_{l+1} - X_l||_F^2 / ||Data||_F^2 <= outer_tol.
inline SolveResult solve_stage(const LinearMap &A, const Vector &b, InnerSolver solver, Index rank,
                               const SolverConfig &cfg, int stage_index = 0) {
    cfg.validate();
    const Matrix data = A.adjoint(b);
    detail::require(rank >= 0 && rank <= std::min(A.rows(), A.cols()), "solve_stage: rank out of range");
    const double dn2 = data.squaredNorm() > 0.0 ? data.squaredNorm() : 1.0;

    StageTrace trace;
    trace.stage = stage_index;
    trace.rank = rank;
    Matrix X = data;
    bool converged = false;
    for (int l = 1; l <= cfg.max_ll_iters; ++l) {
        const TruncationPair pair = truncation_pair(X, rank);
        SolveResult inner;
        try {
            inner = solve_inner(solver, A, b, pair, cfg);
        } catch (const SolverFailure &failure) {
            StageTrace partial = trace;
            for (IterationRecord rec : failure.trace().iterations) {
                rec.stage = stage_index;
                rec.l = l;
                partial.iterations.push_back(rec);
            }
            throw SolverFailure("stage " + std::to_string(stage_index) + ", l-step " + std::to_string(l) +
                                    ": " + failure.what(),
                                std::move(partial));
        }
        const double change = (inner.X - X).squaredNorm() / dn2;
        for (IterationRecord rec : inner.trace.iterations) {
            rec.stage = stage_index;
            rec.l = l;
            trace.iterations.push_back(rec);
        }
        trace.inner_iterations.push_back(inner.trace.inner_iterations.front());
        trace.objectives.push_back(inner.trace.objectives.front());
        trace.residuals.push_back(inner.trace.residuals.front());
        trace.changes.push_back(change);
        X = std::move(inner.X);
        // With r = 0 the pair does not depend on X_l, so a second pass would
        // repeat the same solve.
        if (rank == 0 || change <= cfg.outer_tol) {
            converged = true;
            break;
        }
    }
    return {std::move(X), std::move(trace), converged};
}

struct LrisdResult {
    Matrix X;
    Index rank = 0;                   // truncation rank of the returned solution
    std::vector<StageTrace> stages;   // stage 0 is the plain nuclear-norm solve
    std::vector<SveProfile> profiles; // one per rank estimate
    bool stable = false;              // estimate repeated before max_outer

    int outer_iterations() const { return static_cast<int>(profiles.size()); }
};

/// Alternates rank estimation on the current recovery with truncated-nuclear-
/// norm solves, starting from the plain nuclear-norm solution, until the
/// estimate repeats `stability` times in a row or `max_outer` estimates were made.
inline LrisdResult lrisd(const LinearMap &A, const Vector &b, InnerSolver solver, const SveConfig &sve_cfg,
                         const SolverConfig &cfg) {
    sve_cfg.validate();
    cfg.validate();
    detail::require(b.size() == A.measurements(), "lrisd: b length does not match operator");

    LrisdResult out;
    SolveResult base = solve_stage(A, b, solver, 0, cfg, 0);
    out.X = std::move(base.X);
    out.stages.push_back(std::move(base.trace));
    if (!sve_cfg.enabled)
        return out;

    const double kappa = sve_cfg.resolve_kappa(A.rows(), A.cols());
    int streak = 0;
    Index previous = -1;
    for (int outer = 1; outer <= sve_cfg.max_outer; ++outer) {
        SveProfile profile = estimate_rank(singular_values(out.X), kappa);
        const Index r = profile.r_hat;
        out.profiles.push_back(profile);
        streak = (r == previous) ? streak + 1 : 1;
        if (streak >= sve_cfg.stability) {
            out.stable = true;
            break;
        }
        if (r == previous)
            continue; // the same rank from the same start reproduces out.X
        SolveResult stage = solve_stage(A, b, solver, r, cfg, outer);
        stage.trace.sve = std::move(profile);
        out.X = std::move(stage.X);
        out.rank = r;
        out.stages.push_back(std::move(stage.trace));
        previous = r;
    }
    return out;
}

} // namespace lowrank
