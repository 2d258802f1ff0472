#pragma once

#include <lowrank/errors.hpp>
#include <lowrank/linalg.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace lowrank {

/// Pixels that enter the PSNR sum (true = evaluated).
using PixelMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct MetricsReport {
    double psnr_db = 0.0;
    double reer = 0.0;
    double se = 0.0;
    double mse = 0.0;
    Index t_count = 0; // evaluated pixels per channel
    Index rank_recovered = 0;
};

inline constexpr double kPsnrCapDb = 99.0;

/// ||X_re - X*||_F / ||X*||_F.
inline double relative_error(const Matrix &X_re, const Matrix &X_star) {
    detail::require(X_re.rows() == X_star.rows() && X_re.cols() == X_star.cols(),
                    "relative_error: shape mismatch");
    const double denom = X_star.norm();
    detail::require(denom > 0.0, "relative_error: reference matrix is zero");
    return (X_re - X_star).norm() / denom;
}

/// PSNR over 1 or 3 channels. Recovered values are clamped to [0, 255] first;
/// MSE = SE / (channels * T) where T is the number of evaluated pixels.
inline MetricsReport psnr(const std::vector<Matrix> &recovered, const std::vector<Matrix> &truth,
                          const PixelMask &evaluate) {
    detail::require(recovered.size() == truth.size(), "psnr: channel count mismatch");
    detail::require(truth.size() == 1 || truth.size() == 3, "psnr: expected 1 or 3 channels");
    const Index m = truth.front().rows(), n = truth.front().cols();
    detail::require(evaluate.rows() == m && evaluate.cols() == n, "psnr: mask shape mismatch");
    for (std::size_t c = 0; c < truth.size(); ++c)
        detail::require(recovered[c].rows() == m && recovered[c].cols() == n && truth[c].rows() == m &&
                            truth[c].cols() == n,
                        "psnr: channel shape mismatch");

    MetricsReport report;
    report.t_count = evaluate.count();
    detail::require(report.t_count > 0, "psnr: empty evaluation set");
    for (std::size_t c = 0; c < truth.size(); ++c) {
        const auto clamped = recovered[c].array().max(0.0).min(255.0);
        report.se += evaluate.select((clamped - truth[c].array()).square(), 0.0).sum();
    }
    report.mse = report.se / (static_cast<double>(truth.size()) * static_cast<double>(report.t_count));
    report.psnr_db = report.mse > 0.0 ? std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / report.mse))
                                      : kPsnrCapDb;
    return report;
}

/// Evaluates every pixel.
inline MetricsReport psnr(const std::vector<Matrix> &recovered, const std::vector<Matrix> &truth) {
    detail::require(!truth.empty(), "psnr: no channels");
    return psnr(recovered, truth, PixelMask::Constant(truth.front().rows(), truth.front().cols(), true));
}

inline MetricsReport psnr(const Matrix &recovered, const Matrix &truth, const PixelMask &evaluate) {
    return psnr(std::vector<Matrix>{recovered}, std::vector<Matrix>{truth}, evaluate);
}

/// The unobserved pixels of a sampling pattern; the whole grid when every
/// pixel was observed.
inline PixelMask evaluation_mask(const PixelMask &observed) {
    PixelMask missing = !observed;
    if (missing.count() == 0)
        missing.setConstant(true);
    return missing;
}

} // namespace lowrank
