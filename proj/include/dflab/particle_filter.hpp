#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/dgp.hpp"
#include "dflab/rng.hpp"

namespace dflab::pf {

/// Effective sample size 1 / sum(w^2) of normalized weights.
inline double ess(const std::vector<double>& weights) {
    double s = 0.0;
    for (double w : weights) s += w * w;
    return 1.0 / s;
}

/// Systematic resampling: a single stratified sweep with offset u/Np.
/// Copy counts deviate from Np * w_j by less than one.
inline std::vector<int> systematic_resample(const std::vector<double>& weights, double u) {
    const int np = static_cast<int>(weights.size());
    std::vector<int> idx(np);
    double cum = weights[0];
    int j = 0;
    for (int i = 0; i < np; ++i) {
        const double pos = (i + u) / np;
        while (pos >= cum && j + 1 < np) cum += weights[++j];
        idx[i] = j;
    }
    return idx;
}

struct APFOptions {
    int n_particles = 10000;
    double ess_threshold = 0.5;      // resample when ESS/Np drops below this
    double roughening_scale = 0.05;  // noise sd = scale * weighted particle sd
    int spin_up = 50;                // transitions used to seed the initial cloud
};

namespace detail {

struct Cloud {
    std::vector<dgp::ProcessState> states;
    std::vector<double> weights;
};

inline void normalize_log_weights(std::vector<double>& lw, std::vector<double>& w, long period) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : lw) mx = std::max(mx, v);
    if (!std::isfinite(mx))
        throw WeightCollapseError("all particle weights collapsed at period " + std::to_string(period));
    double sum = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
        w[i] = std::exp(lw[i] - mx);
        sum += w[i];
    }
    for (double& v : w) v /= sum;
}

inline void roughen(std::vector<dgp::ProcessState>& states, const std::vector<double>& weights,
                    double scale, Rng& rng) {
    double mean = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) mean += weights[i] * states[i].x1;
    double var = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
        const double d = states[i].x1 - mean;
        var += weights[i] * d * d;
    }
    const double sd = scale * std::sqrt(std::max(var, 0.0));
    for (auto& st : states) st.x1 += sd * rng.normal();
}

} // namespace detail

/// Auxiliary particle filter running the true process: look-ahead reweight
/// with the deterministic predictor, systematic resample, propagate,
/// likelihood-ratio correction, adaptive resampling, roughening after any
/// resample, weighted-mean output. Deterministic given the seed.
///
/// y_raw must be in the process's native coordinates.
inline Eigen::VectorXd apf_filter(const dgp::DGPSpec& spec, const Eigen::MatrixXd& y_raw,
                                  const Eigen::MatrixXd& sigma_y, const APFOptions& opts,
                                  std::uint64_t seed) {
    spec.validate();
    if (opts.n_particles < 1) throw ConfigError("apf_filter: need at least one particle");
    const long n = y_raw.rows();
    const int np = opts.n_particles;

    const dgp::MeasurementErrorModel err0 = dgp::make_error_model(spec, sigma_y, 0);
    const dgp::MeasurementErrorModel err1 = dgp::make_error_model(spec, sigma_y, 1);
    auto err = [&](int regime) -> const dgp::MeasurementErrorModel& { return regime == 0 ? err0 : err1; };

    Rng rng(seed, 0x9f7u);

    detail::Cloud cloud;
    cloud.states.resize(np);
    cloud.weights.assign(np, 1.0 / np);
    for (auto& st : cloud.states) {
        for (int t = 0; t < opts.spin_up; ++t) {
            const int r = dgp::draw_regime(spec, st.regime, rng);
            const double eps =
                dgp::sample_shock(dgp::state_shock_dist(spec, r), spec.sigma_x * spec.sigma_x, rng);
            dgp::push_state(st, dgp::state_mean(spec, st, r) + eps, eps, r);
        }
    }

    const int m_lags = spec.measurement_lags();
    Eigen::MatrixXd y_lags = Eigen::MatrixXd::Zero(std::max(1, m_lags), spec.vars);

    Eigen::VectorXd estimate(n);
    std::vector<double> look_ahead_logdens(np), log_w(np);
    std::vector<dgp::ProcessState> parents(np);

    for (long t = 0; t < n; ++t) {
        const Eigen::VectorXd y_t = y_raw.row(t).transpose();
        for (int l = 0; l < m_lags; ++l) {
            if (t - 1 - l >= 0)
                y_lags.row(l) = y_raw.row(t - 1 - l);
            else
                y_lags.row(l).setZero();
        }

        // 1. Look-ahead weights from the no-noise predictor.
        for (int i = 0; i < np; ++i) {
            const auto& st = cloud.states[i];
            const double x_pred = dgp::state_mean(spec, st, st.regime);
            const Eigen::VectorXd u = y_t - dgp::measurement_mean(spec, x_pred, st.regime, y_lags);
            look_ahead_logdens[i] = err(st.regime).log_density(u);
            log_w[i] = std::log(cloud.weights[i]) + look_ahead_logdens[i];
        }
        detail::normalize_log_weights(log_w, cloud.weights, t);

        // 2. Systematic resample on the look-ahead weights.
        const auto idx = systematic_resample(cloud.weights, rng.uniform());
        std::vector<double> parent_logdens(np);
        for (int i = 0; i < np; ++i) {
            parents[i] = cloud.states[idx[i]];
            parent_logdens[i] = look_ahead_logdens[idx[i]];
        }
        cloud.weights.assign(np, 1.0 / np);
        detail::roughen(parents, cloud.weights, opts.roughening_scale, rng);

        // 3-4. Propagate with the true transition, correct by the ratio.
        for (int i = 0; i < np; ++i) {
            auto& st = parents[i];
            const int r = dgp::draw_regime(spec, st.regime, rng);
            const double eps =
                dgp::sample_shock(dgp::state_shock_dist(spec, r), spec.sigma_x * spec.sigma_x, rng);
            const double x_t = dgp::state_mean(spec, st, r) + eps;
            dgp::push_state(st, x_t, eps, r);
            const Eigen::VectorXd u = y_t - dgp::measurement_mean(spec, x_t, r, y_lags);
            log_w[i] = err(r).log_density(u) - parent_logdens[i];
        }
        cloud.states.swap(parents);
        detail::normalize_log_weights(log_w, cloud.weights, t);

        // 5-6. Adaptive resample and roughen when the cloud degenerates.
        if (ess(cloud.weights) / np < opts.ess_threshold) {
            const auto idx2 = systematic_resample(cloud.weights, rng.uniform());
            for (int i = 0; i < np; ++i) parents[i] = cloud.states[idx2[i]];
            cloud.states.swap(parents);
            cloud.weights.assign(np, 1.0 / np);
            detail::roughen(cloud.states, cloud.weights, opts.roughening_scale, rng);
        }

        // 7. Pointwise weighted mean of particles.
        double mean = 0.0;
        for (int i = 0; i < np; ++i) mean += cloud.weights[i] * cloud.states[i].x1;
        estimate(t) = mean;
    }
    return estimate;
}

/// Convenience overload: undoes the dataset's standardization and runs the
/// oracle in raw coordinates.
inline Eigen::VectorXd apf_filter(const dgp::SimulatedDataset& ds, const APFOptions& opts,
                                  std::uint64_t seed) {
    Eigen::MatrixXd y_raw(ds.n(), ds.k());
    for (long t = 0; t < ds.n(); ++t) y_raw.row(t) = ds.raw_row(t).transpose();
    return apf_filter(ds.spec, y_raw, ds.sigma_y, opts, seed);
}

} // namespace dflab::pf
