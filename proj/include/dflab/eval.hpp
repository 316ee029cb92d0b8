#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/nelder_mead.hpp"

namespace dflab::eval {

inline double population_var(const Eigen::VectorXd& x) {
    const double m = x.mean();
    return (x.array() - m).square().sum() / static_cast<double>(x.size());
}

inline double population_sd(const Eigen::VectorXd& x) { return std::sqrt(population_var(x)); }

inline double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double ma = a.mean(), mb = b.mean();
    const double cov = ((a.array() - ma) * (b.array() - mb)).sum();
    const double va = (a.array() - ma).square().sum();
    const double vb = (b.array() - mb).square().sum();
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Optimal L1 scaling
// ---------------------------------------------------------------------------

struct ScalingParams {
    double gamma0 = 0.0;
    double gamma1 = 1.0;
    bool degenerate = false;   // constant raw series
};

inline Eigen::VectorXd apply_scaling(const ScalingParams& s, const Eigen::VectorXd& x) {
    return (s.gamma0 + s.gamma1 * x.array()).matrix();
}

inline double scaling_objective(double g0, double g1, const Eigen::VectorXd& x_raw,
                                const Eigen::VectorXd& x_true) {
    return (g0 + g1 * x_raw.array() - x_true.array()).abs().mean();
}

/// min_{g0,g1} sum |g0 + g1 x_raw - x_true|, solved by a simplex search
/// from the OLS solution. Deterministic.
inline ScalingParams fit_scaling(const Eigen::VectorXd& x_raw, const Eigen::VectorXd& x_true) {
    if (x_raw.size() != x_true.size()) throw ConfigError("fit_scaling: spans differ in length");
    if (x_raw.size() < 10) throw ConfigError("fit_scaling: span must hold at least 10 points");

    ScalingParams s;
    const double var = population_var(x_raw);
    if (var <= 0.0) {
        // Nothing to scale; the L1-optimal constant is the median.
        std::vector<double> v(x_true.data(), x_true.data() + x_true.size());
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        double med = v[v.size() / 2];
        if (v.size() % 2 == 0) {
            std::nth_element(v.begin(), v.begin() + v.size() / 2 - 1, v.end());
            med = 0.5 * (med + v[v.size() / 2 - 1]);
        }
        s.gamma0 = med;
        s.gamma1 = 0.0;
        s.degenerate = true;
        return s;
    }

    const double mr = x_raw.mean(), mt = x_true.mean();
    const double cov = ((x_raw.array() - mr) * (x_true.array() - mt)).sum() / x_raw.size();
    Eigen::VectorXd start(2);
    start(1) = cov / var;
    start(0) = mt - start(1) * mr;

    auto objective = [&](const Eigen::VectorXd& g) {
        return scaling_objective(g(0), g(1), x_raw, x_true);
    };
    NelderMeadOptions coarse{600, 1e-12, 0.25};
    auto r1 = nelder_mead(objective, start, coarse);
    NelderMeadOptions fine{600, 1e-13, 1e-3};
    auto r2 = nelder_mead(objective, r1.x, fine);
    const auto& best = r2.f <= r1.f ? r2 : r1;
    s.gamma0 = best.x(0);
    s.gamma1 = best.x(1);
    return s;
}

// ---------------------------------------------------------------------------
// Metric suite
// ---------------------------------------------------------------------------

inline constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

inline bool present(double v) { return std::isfinite(v); }

/// Scaled factor estimates on the evaluation span. Leave optional entries
/// empty to skip their metrics.
struct ScaledEstimates {
    Eigen::VectorXd transformer;
    Eigen::VectorXd transformer_fit_max;
    Eigen::VectorXd kalman;
    Eigen::VectorXd kalman_max;
    Eigen::VectorXd oracle;
    Eigen::VectorXd mean_y;
};

struct MetricsReport {
    double mse_transformer = kAbsent, mse_kalman = kAbsent, mse_kalman_max = kAbsent,
           mse_oracle = kAbsent, mse_mean_y = kAbsent;
    double r2_transformer = kAbsent, r2_kalman = kAbsent, r2_kalman_max = kAbsent,
           r2_oracle = kAbsent, r2_mean_y = kAbsent;
    double fit = kAbsent;
    double fit_max = kAbsent;   // simulation only
    double gain = kAbsent;      // absent when the Kalman-oracle gap is tiny
    double corr = kAbsent;
    double val_loss = kAbsent;
    bool discarded = false;
};

inline double mse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
    if (estimate.size() != truth.size()) throw ConfigError("mse: spans differ in length");
    return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

inline MetricsReport metrics(const ScaledEstimates& est, const Eigen::VectorXd& x_true,
                             double val_loss) {
    const double var = population_var(x_true);
    if (var <= 0.0) throw ConfigError("metrics: ground truth has zero variance");

    MetricsReport rep;
    rep.val_loss = val_loss;
    auto score = [&](const Eigen::VectorXd& series, double& mse_out, double& r2_out) {
        if (series.size() == 0) return;
        mse_out = mse(series, x_true);
        r2_out = 1.0 - mse_out / var;
    };
    score(est.transformer, rep.mse_transformer, rep.r2_transformer);
    score(est.kalman, rep.mse_kalman, rep.r2_kalman);
    score(est.kalman_max, rep.mse_kalman_max, rep.r2_kalman_max);
    score(est.oracle, rep.mse_oracle, rep.r2_oracle);
    score(est.mean_y, rep.mse_mean_y, rep.r2_mean_y);

    if (present(rep.mse_kalman) && present(rep.mse_transformer))
        rep.fit = (rep.mse_kalman - rep.mse_transformer) / rep.mse_kalman * 100.0;
    if (est.transformer_fit_max.size() > 0 && present(rep.mse_kalman))
        rep.fit_max = (rep.mse_kalman - mse(est.transformer_fit_max, x_true)) / rep.mse_kalman * 100.0;
    if (present(rep.mse_kalman) && present(rep.mse_oracle) && present(rep.mse_transformer) &&
        std::fabs(rep.mse_kalman - rep.mse_oracle) >= 1e-6 * var)
        rep.gain = (rep.mse_kalman - rep.mse_transformer) / (rep.mse_kalman - rep.mse_oracle) * 100.0;
    if (est.transformer.size() > 0) rep.corr = correlation(x_true, est.transformer);
    return rep;
}

/// Least-squares slope of accuracy against validation loss across epochs;
/// negative values mean training improves the factor estimate.
inline double loss_fit_slope(const std::vector<std::pair<double, double>>& loss_fit,
                             bool* degenerate = nullptr) {
    if (degenerate) *degenerate = false;
    if (loss_fit.size() < 3) throw ConfigError("loss_fit_slope: need at least 3 epochs");
    double ml = 0.0, mf = 0.0;
    for (auto& [l, f] : loss_fit) {
        ml += l;
        mf += f;
    }
    ml /= loss_fit.size();
    mf /= loss_fit.size();
    double num = 0.0, den = 0.0;
    for (auto& [l, f] : loss_fit) {
        num += (l - ml) * (f - mf);
        den += (l - ml) * (l - ml);
    }
    if (den <= 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    return num / den;
}

/// Seed-discard rule: a scaled estimate whose spread collapses relative to
/// the truth marks a mis-estimated baseline.
inline bool flatline_check(const Eigen::VectorXd& x_raw, const ScalingParams& scaling,
                           const Eigen::VectorXd& x_true) {
    const double sd_est = population_sd(apply_scaling(scaling, x_raw));
    const double sd_true = population_sd(x_true);
    if (sd_true <= 0.0) return true;
    return sd_est / sd_true < 0.1;
}

} // namespace dflab::eval
