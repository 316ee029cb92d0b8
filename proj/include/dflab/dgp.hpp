#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/csv.hpp"
#include "dflab/rng.hpp"

namespace dflab::dgp {

// ---------------------------------------------------------------------------
// Sign-preserving power function
// ---------------------------------------------------------------------------

struct SpowParams {
    double gamma = 1.0;      // exponent
    double c = 1.0;          // scale
    double epsilon = 1e-4;   // smoothing, removes the derivative kink at 0

    void validate() const {
        if (c <= 0.0) throw ConfigError("spow: scale c must be positive");
        if (epsilon < 0.0) throw ConfigError("spow: epsilon must be >= 0");
        if (gamma <= 0.0) throw ConfigError("spow: exponent must be positive");
    }
};

/// c * sign(z) * ((|z/c| + eps)^gamma - eps^gamma); odd and strictly
/// increasing in z for gamma > 0.
inline double spow(double z, const SpowParams& p) {
    const double s = (z > 0.0) - (z < 0.0);
    const double a = std::fabs(z / p.c);
    return p.c * s * (std::pow(a + p.epsilon, p.gamma) - std::pow(p.epsilon, p.gamma));
}

inline double spow(double z, double gamma, double c, double epsilon = 1e-4) {
    return spow(z, SpowParams{gamma, c, epsilon});
}

// ---------------------------------------------------------------------------
// Shock distributions
// ---------------------------------------------------------------------------

enum class ShockFamily { Gaussian, StudentT, SkewT };

struct ShockSpec {
    ShockFamily family = ShockFamily::Gaussian;
    double df = 10.0;
    double skew = 0.0;   // two-piece asymmetry; -2 stretches the left tail 2x

    void validate() const {
        if (family != ShockFamily::Gaussian && df <= 2.0)
            throw ConfigError("shock distribution needs df > 2 for a finite variance");
        if (family == ShockFamily::SkewT && skew == 0.0)
            throw ConfigError("skew_t requires a nonzero skew parameter");
    }

    /// Maps the signed skew parameter onto the two-piece scale ratio xi.
    double xi() const { return skew < 0.0 ? 1.0 / std::fabs(skew) : skew; }
};

inline ShockSpec gaussian_shock() { return {ShockFamily::Gaussian, 0.0, 0.0}; }
inline ShockSpec t_shock(double df) { return {ShockFamily::StudentT, df, 0.0}; }
inline ShockSpec skew_t_shock(double df, double skew) { return {ShockFamily::SkewT, df, skew}; }

/// One draw with population mean 0 and population variance target_var.
inline double sample_shock(const ShockSpec& dist, double target_var, Rng& rng) {
    if (target_var < 0.0) throw ConfigError("sample_shock: target variance must be nonnegative");
    dist.validate();
    switch (dist.family) {
        case ShockFamily::Gaussian:
            return std::sqrt(target_var) * rng.normal();
        case ShockFamily::StudentT:
            // t has variance df/(df-2); rescale to the target.
            return rng.student_t(dist.df) * std::sqrt(target_var * (dist.df - 2.0) / dist.df);
        case ShockFamily::SkewT: {
            TwoPieceT tp(dist.df, dist.xi());
            return tp.draw_standardized(rng, target_var);
        }
    }
    throw ConfigError("sample_shock: unsupported distribution descriptor");
}

// ---------------------------------------------------------------------------
// Measurement error covariance
// ---------------------------------------------------------------------------

struct CovarianceSpec {
    std::vector<double> sds;
    double mean_corr = 0.3;
    double jitter = 0.15;
};

/// Sigma_y = D R D with a random correlation matrix R: unit diagonal,
/// off-diagonal uniform in mean_corr +- jitter, clipped to the nearest PSD
/// matrix if a draw comes out indefinite.
inline Eigen::MatrixXd build_covariance(const CovarianceSpec& spec, Rng& rng) {
    const int k = static_cast<int>(spec.sds.size());
    if (k < 1) throw ConfigError("build_covariance: needs at least one sd");
    for (double s : spec.sds)
        if (s < 0.0) throw ConfigError("build_covariance: sds must be nonnegative");

    Eigen::MatrixXd corr = Eigen::MatrixXd::Identity(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            const double r = spec.mean_corr + spec.jitter * (2.0 * rng.uniform() - 1.0);
            corr(i, j) = corr(j, i) = r;
        }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
    if (es.eigenvalues().minCoeff() < 0.0) {
        // Eigenvalue clipping at zero, then renormalize the diagonal to 1.
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
        corr = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        Eigen::VectorXd d = corr.diagonal().cwiseSqrt();
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) corr(i, j) /= d(i) * d(j);
    }
    for (int i = 0; i < k; ++i) corr(i, i) = 1.0;

    Eigen::MatrixXd sigma(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) sigma(i, j) = corr(i, j) * spec.sds[i] * spec.sds[j];
    for (int i = 0; i < k; ++i) sigma(i, i) = spec.sds[i] * spec.sds[i];
    return sigma;
}

// ---------------------------------------------------------------------------
// Correlated measurement errors: sampler and log density share one model so
// the oracle filter evaluates exactly the distribution the data came from.
// ---------------------------------------------------------------------------

class MeasurementErrorModel {
public:
    MeasurementErrorModel() = default;

    MeasurementErrorModel(Eigen::MatrixXd sigma, ShockSpec dist) : sigma_(std::move(sigma)), dist_(dist) {
        const int k = static_cast<int>(sigma_.rows());
        if (sigma_.isZero(0.0)) {
            zero_ = true;
            chol_ = Eigen::MatrixXd::Zero(k, k);
            return;
        }
        Eigen::MatrixXd scale = sigma_;
        if (dist_.family == ShockFamily::StudentT)
            scale *= (dist_.df - 2.0) / dist_.df;   // mv-t scale matrix for the target variance
        Eigen::LLT<Eigen::MatrixXd> llt(scale);
        if (llt.info() != Eigen::Success) {
            scale += 1e-12 * scale.trace() / k * Eigen::MatrixXd::Identity(k, k);
            llt.compute(scale);
            if (llt.info() != Eigen::Success) throw ConfigError("measurement covariance is not PSD");
        }
        chol_ = llt.matrixL();
        log_det_scale_ = 2.0 * chol_.diagonal().array().log().sum();
        if (dist_.family == ShockFamily::Gaussian) {
            const_term_ = -0.5 * (k * std::log(2.0 * M_PI) + log_det_scale_);
        } else {
            const double v = dist_.df;
            const_term_ = std::lgamma(0.5 * (v + k)) - std::lgamma(0.5 * v) -
                          0.5 * k * std::log(v * M_PI) - 0.5 * log_det_scale_;
        }
    }

    int dim() const { return static_cast<int>(chol_.rows()); }
    const Eigen::MatrixXd& sigma() const { return sigma_; }

    Eigen::VectorXd sample(Rng& rng) const {
        const int k = dim();
        if (zero_) return Eigen::VectorXd::Zero(k);
        Eigen::VectorXd z(k);
        for (int i = 0; i < k; ++i) z(i) = rng.normal();
        Eigen::VectorXd u = chol_ * z;
        if (dist_.family == ShockFamily::StudentT) {
            const double w = rng.chi_squared(dist_.df);
            u *= std::sqrt(dist_.df / w);
        }
        return u;
    }

    double log_density(const Eigen::VectorXd& u) const {
        const int k = dim();
        if (zero_) throw FilterDegenerateError("zero measurement covariance has no density");
        const Eigen::VectorXd z = chol_.triangularView<Eigen::Lower>().solve(u);
        const double quad = z.squaredNorm();
        if (dist_.family == ShockFamily::Gaussian) return const_term_ - 0.5 * quad;
        const double v = dist_.df;
        return const_term_ - 0.5 * (v + k) * std::log1p(quad / v);
    }

private:
    Eigen::MatrixXd sigma_;
    ShockSpec dist_;
    Eigen::MatrixXd chol_;
    double log_det_scale_ = 0.0;
    double const_term_ = 0.0;
    bool zero_ = false;
};

// ---------------------------------------------------------------------------
// Process specifications
// ---------------------------------------------------------------------------

struct DGPSpec {
    int process_id = 1;
    int vars = 5;                         // k
    int n_obs = 1800;
    int burn_in = 1000;

    double mu_x = 0.0;
    std::vector<double> alpha = {0.96};   // state AR coefficients
    double phi = 0.8;                     // state spow exponent
    double sigma_x = 0.28;
    double c_x = 1.0;
    double c_y = 1.0;
    double ma_coeff = 0.0;                // state MA(1) weight on eps_{t-1}
    std::vector<double> y_lag_coeffs;     // own-lag coefficients in measurements

    std::vector<double> mu_y, beta, gamma_exp;

    // Regime switching (process 6). Regime 0 scales (alpha_1, phi, beta,
    // gamma) by regime_scalar0, regime 1 by regime_scalar1.
    double regime_scalar0 = 1.01;
    double regime_scalar1 = 0.98;
    double p_switch_01 = 0.03;            // P(s=1 | s=0)
    double p_switch_10 = 0.01;            // P(s=0 | s=1)

    ShockSpec shock_dist = gaussian_shock();
    ShockSpec error_dist = gaussian_shock();       // regime 1 family for process 6
    ShockSpec error_dist_regime0 = gaussian_shock();

    std::vector<double> sds;              // measurement error sds; empty = calibrate
    double mean_corr = 0.3;
    double corr_jitter = 0.15;
    double spow_epsilon = 1e-4;

    bool nonlinear_state() const { return process_id == 3 || process_id == 4 || process_id == 6; }
    bool nonlinear_measurement() const {
        return process_id == 2 || process_id == 4 || process_id == 5 || process_id == 6;
    }
    bool has_regimes() const { return process_id == 6; }
    int state_lags() const { return process_id >= 5 ? 3 : 1; }
    int measurement_lags() const { return process_id >= 5 ? static_cast<int>(y_lag_coeffs.size()) : 0; }

    void validate() const {
        if (process_id < 1 || process_id > 6) throw ConfigError("process_id must be 1..6");
        if (vars < 1) throw ConfigError("need at least one observable variable");
        const auto len = static_cast<std::size_t>(vars);
        if (mu_y.size() != len || beta.size() != len)
            throw ConfigError("mu_y and beta must have length k");
        if (nonlinear_measurement() && gamma_exp.size() != len)
            throw ConfigError("gamma_exp must have length k");
        if (sigma_x < 0.0) throw ConfigError("sigma_x must be nonnegative");
        if (p_switch_01 < 0 || p_switch_01 > 1 || p_switch_10 < 0 || p_switch_10 > 1)
            throw ConfigError("switch probabilities must lie in [0,1]");
        for (double s : sds)
            if (s < 0.0) throw ConfigError("measurement sds must be nonnegative");
        shock_dist.validate();
        error_dist.validate();
    }
};

/// Footnote parameterizations of the six simulated processes.
inline DGPSpec make_process_spec(int id) {
    DGPSpec s;
    s.process_id = id;
    switch (id) {
        case 1:
            s.mu_y = {0.11, 0.61, 0.70, -0.74, 0.65};
            s.beta = {1.01, 1.25, 0.60, 0.98, 0.91};
            s.sigma_x = 0.28;   // unit unconditional state variance at alpha 0.96
            break;
        case 2:
            s.mu_y = {0.79, -0.47, -0.256, 0.146, 0.82};
            s.beta = {0.58, 1.56, 1.62, 1.23, 1.18};
            s.gamma_exp = {0.55, 1.37, 0.57, 1.48, 0.61};
            s.c_y = 0.77;
            s.sigma_x = 0.28;
            s.error_dist = t_shock(10);
            break;
        case 3:
            s.mu_y = {0.79, -0.47, -0.26, 0.15, 0.82};
            s.beta = {0.58, 1.56, 1.62, 1.23, 1.18};
            s.gamma_exp = {0.61, 1.24, 0.63, 1.34, 0.68};
            s.phi = 0.36;
            s.sigma_x = 1.2;
            s.c_x = 0.13;
            s.shock_dist = t_shock(10);
            break;
        case 4:
            s.mu_y = {-0.46, -0.43, 0.24, 0.85, 0.10};
            s.beta = {1.41, 1.50, 1.60, 0.94, 0.51};
            s.gamma_exp = {1.08, 0.67, 1.03, 1.02, 1.06};
            s.phi = 0.8;
            s.sigma_x = 0.65;
            s.c_x = 1.0;
            s.c_y = 15.0;
            s.shock_dist = t_shock(10);
            s.error_dist = t_shock(10);
            break;
        case 5:
            s.alpha = {0.74, 0.15, 0.074};
            s.ma_coeff = 0.15;
            s.y_lag_coeffs = {0.2, 0.05, 0.02};
            s.mu_y = {0.79, -0.47, -0.26, 0.15, 0.82};
            s.beta = {0.58, 1.56, 1.62, 1.23, 1.18};
            s.gamma_exp = {0.68, 1.12, 0.70, 1.21, 0.75};
            s.sigma_x = 0.387;
            s.c_y = 1.28;
            s.shock_dist = skew_t_shock(10, -2);
            s.error_dist = t_shock(10);
            break;
        case 6:
            s.alpha = {0.74, 0.15, 0.074};
            s.y_lag_coeffs = {0.2, 0.05, 0.02};
            s.mu_y = {0.79, -0.47, -0.26, 0.15, 0.82};
            s.beta = {0.58, 1.56, 1.62, 1.23, 1.18};
            s.gamma_exp = {0.57, 1.34, 0.59, 1.45, 0.62};
            s.phi = 0.8;
            s.sigma_x = 0.51;
            s.c_x = 2.24;
            s.c_y = 1.83;
            s.shock_dist = skew_t_shock(10, -2);        // regime 1
            s.error_dist = t_shock(10);                 // regime 1
            s.error_dist_regime0 = gaussian_shock();
            break;
        default:
            throw ConfigError("process_id must be 1..6");
    }
    return s;
}

// ---------------------------------------------------------------------------
// Process mechanics shared by the simulator and the oracle particle filter
// ---------------------------------------------------------------------------

/// State history one period back: x lags, previous shock, current regime.
struct ProcessState {
    double x1 = 0.0, x2 = 0.0, x3 = 0.0;
    double eps1 = 0.0;
    int regime = 0;
};

inline double regime_scalar(const DGPSpec& spec, int regime) {
    if (!spec.has_regimes()) return 1.0;
    return regime == 0 ? spec.regime_scalar0 : spec.regime_scalar1;
}

/// Deterministic part of the state transition, E[x_t | state, regime_t].
inline double state_mean(const DGPSpec& spec, const ProcessState& st, int regime_t) {
    switch (spec.process_id) {
        case 1:
        case 2:
            return spec.mu_x + spec.alpha[0] * st.x1;
        case 3:
        case 4:
            return spec.mu_x + spec.alpha[0] * spow(st.x1, spec.phi, spec.c_x, spec.spow_epsilon);
        case 5:
            return spec.mu_x + spec.alpha[0] * st.x1 + spec.alpha[1] * st.x2 + spec.alpha[2] * st.x3 +
                   spec.ma_coeff * st.eps1;
        case 6: {
            const double r = regime_scalar(spec, regime_t);
            return spec.mu_x + r * spec.alpha[0] * spow(st.x1, r * spec.phi, spec.c_x, spec.spow_epsilon) +
                   spec.alpha[1] * st.x2 + spec.alpha[2] * st.x3;
        }
        default:
            throw ConfigError("process_id must be 1..6");
    }
}

inline ShockSpec state_shock_dist(const DGPSpec& spec, int regime_t) {
    if (spec.has_regimes() && regime_t == 0) return gaussian_shock();
    return spec.shock_dist;
}

inline int draw_regime(const DGPSpec& spec, int prev, Rng& rng) {
    if (!spec.has_regimes()) return 0;
    const double u = rng.uniform();
    if (prev == 0) return u < spec.p_switch_01 ? 1 : 0;
    return u < spec.p_switch_10 ? 0 : 1;
}

/// Noise-free measurement means given the current state; y_lags holds the
/// previous raw observations, row l = y_{t-1-l}.
inline Eigen::VectorXd measurement_mean(const DGPSpec& spec, double x_t, int regime_t,
                                        const Eigen::MatrixXd& y_lags) {
    const int k = spec.vars;
    const double r = regime_scalar(spec, regime_t);
    Eigen::VectorXd mean(k);
    for (int i = 0; i < k; ++i) {
        double m = spec.mu_y[i];
        if (spec.nonlinear_measurement())
            m += r * spec.beta[i] * spow(x_t, r * spec.gamma_exp[i], spec.c_y, spec.spow_epsilon);
        else
            m += spec.beta[i] * x_t;
        for (int l = 0; l < spec.measurement_lags(); ++l) m += spec.y_lag_coeffs[l] * y_lags(l, i);
        mean(i) = m;
    }
    return mean;
}

/// Error model for the regime (process 6 is Gaussian in regime 0).
inline MeasurementErrorModel make_error_model(const DGPSpec& spec, const Eigen::MatrixXd& sigma_y,
                                              int regime) {
    if (spec.has_regimes() && regime == 0) return {sigma_y, spec.error_dist_regime0};
    return {sigma_y, spec.error_dist};
}

inline void push_state(ProcessState& st, double x_t, double eps_t, int regime_t) {
    st.x3 = st.x2;
    st.x2 = st.x1;
    st.x1 = x_t;
    st.eps1 = eps_t;
    st.regime = regime_t;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct Splits {
    long train_end = 0;    // train = [0, train_end)
    long val_end = 0;      // validation = [train_end, val_end)
    long test_begin = 0;   // test = [test_begin, test_end)
    long test_end = 0;
};

inline Splits split(long n, long train_total = 800, long test = 1000, double val_frac = 0.2) {
    if (n < train_total + test)
        throw ConfigError("series too short: need " + std::to_string(train_total + test) +
                          " observations, got " + std::to_string(n));
    Splits s;
    s.train_end = train_total - static_cast<long>(std::lround(val_frac * static_cast<double>(train_total)));
    s.val_end = train_total;
    s.test_begin = n - test;
    s.test_end = n;
    return s;
}

struct SimulatedDataset {
    Eigen::MatrixXd y;             // N x k, standardized column-wise
    Eigen::VectorXd x_true;        // latent factor, original scale
    std::vector<int> regime;       // process 6 only
    std::uint64_t seed = 0;
    Splits split;
    Eigen::VectorXd col_mean, col_sd;   // standardization applied to y
    Eigen::MatrixXd sigma_y;            // realized measurement error covariance
    DGPSpec spec;

    long n() const { return y.rows(); }
    int k() const { return static_cast<int>(y.cols()); }

    /// Raw-scale observation row (undoes the standardization).
    Eigen::VectorXd raw_row(long t) const {
        return (y.row(t).transpose().array() * col_sd.array() + col_mean.array()).matrix();
    }
};

namespace detail {

// The error covariance and the noise calibration are tied to the process,
// not to the dataset seed: across seeds only shocks and errors change.
inline constexpr std::uint64_t kProcessStream = 0x5eedc0deULL;

inline std::vector<double> calibrate_sds(const DGPSpec& spec) {
    const int pilot_n = 10000;
    Rng rng(kProcessStream, static_cast<std::uint64_t>(spec.process_id) * 2 + 1);
    ProcessState st;
    Eigen::MatrixXd y_lags = Eigen::MatrixXd::Zero(std::max(1, spec.measurement_lags()), spec.vars);
    Eigen::MatrixXd clean(pilot_n, spec.vars);
    int t_out = 0;
    for (int t = 0; t < spec.burn_in + pilot_n; ++t) {
        const int regime_t = draw_regime(spec, st.regime, rng);
        const double eps = sample_shock(state_shock_dist(spec, regime_t), spec.sigma_x * spec.sigma_x, rng);
        const double x_t = state_mean(spec, st, regime_t) + eps;
        const Eigen::VectorXd mean = measurement_mean(spec, x_t, regime_t, y_lags);
        if (t >= spec.burn_in) clean.row(t_out++) = mean.transpose();
        if (spec.measurement_lags() > 0) {
            for (int l = spec.measurement_lags() - 1; l > 0; --l) y_lags.row(l) = y_lags.row(l - 1);
            y_lags.row(0) = mean.transpose();
        }
        push_state(st, x_t, eps, regime_t);
    }
    // Uniform signal-to-noise: noise sd is half of each clean series' sd.
    std::vector<double> sds(spec.vars);
    for (int i = 0; i < spec.vars; ++i) {
        const double m = clean.col(i).mean();
        const double var = (clean.col(i).array() - m).square().sum() / pilot_n;
        sds[i] = 0.5 * std::sqrt(var);
    }
    return sds;
}

} // namespace detail

/// Resolved noise sds for a process (pilot calibration if not pinned).
inline std::vector<double> process_sds(const DGPSpec& spec) {
    return spec.sds.empty() ? detail::calibrate_sds(spec) : spec.sds;
}

/// Error covariance shared by all seeds of one process.
inline Eigen::MatrixXd process_sigma_y(const DGPSpec& spec) {
    Rng rng(detail::kProcessStream, static_cast<std::uint64_t>(spec.process_id) * 2);
    return build_covariance({process_sds(spec), spec.mean_corr, spec.corr_jitter}, rng);
}

inline SimulatedDataset simulate(const DGPSpec& spec, std::uint64_t seed) {
    spec.validate();
    const int k = spec.vars;
    const long n = spec.n_obs;

    SimulatedDataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.sigma_y = process_sigma_y(spec);

    MeasurementErrorModel err0 = make_error_model(spec, ds.sigma_y, 0);
    MeasurementErrorModel err1 = make_error_model(spec, ds.sigma_y, 1);

    Rng rng(seed, 0);
    ProcessState st;
    Eigen::MatrixXd y_lags = Eigen::MatrixXd::Zero(std::max(1, spec.measurement_lags()), k);
    Eigen::MatrixXd y_raw(n, k);
    ds.x_true.resize(n);
    if (spec.has_regimes()) ds.regime.reserve(n);

    long t_out = 0;
    for (long t = 0; t < spec.burn_in + n; ++t) {
        const int regime_t = draw_regime(spec, st.regime, rng);
        const double eps = sample_shock(state_shock_dist(spec, regime_t), spec.sigma_x * spec.sigma_x, rng);
        const double x_t = state_mean(spec, st, regime_t) + eps;
        const Eigen::VectorXd u = (regime_t == 0 ? err0 : err1).sample(rng);
        const Eigen::VectorXd y_t = measurement_mean(spec, x_t, regime_t, y_lags) + u;

        if (!std::isfinite(x_t) || !y_t.allFinite())
            throw SimulationDivergedError("non-finite value at step " + std::to_string(t) +
                                          " of process " + std::to_string(spec.process_id));

        if (t >= spec.burn_in) {
            y_raw.row(t_out) = y_t.transpose();
            ds.x_true(t_out) = x_t;
            if (spec.has_regimes()) ds.regime.push_back(regime_t);
            ++t_out;
        }
        if (spec.measurement_lags() > 0) {
            for (int l = spec.measurement_lags() - 1; l > 0; --l) y_lags.row(l) = y_lags.row(l - 1);
            y_lags.row(0) = y_t.transpose();
        }
        push_state(st, x_t, eps, regime_t);
    }

    // Standardize each column over the retained span (population sd).
    ds.col_mean.resize(k);
    ds.col_sd.resize(k);
    ds.y.resize(n, k);
    for (int i = 0; i < k; ++i) {
        const double m = y_raw.col(i).mean();
        const double sd = std::sqrt((y_raw.col(i).array() - m).square().sum() / static_cast<double>(n));
        ds.col_mean(i) = m;
        ds.col_sd(i) = sd > 0.0 ? sd : 1.0;   // constant column: center only
        ds.y.col(i) = (y_raw.col(i).array() - m) / ds.col_sd(i);
    }
    ds.split = split(n);
    return ds;
}

inline void write_dataset_csv(const SimulatedDataset& ds, const std::filesystem::path& path) {
    csv::Writer w(path);
    std::vector<std::string> header = {"t"};
    for (int i = 1; i <= ds.k(); ++i) header.push_back("y" + std::to_string(i));
    header.push_back("x_true");
    if (!ds.regime.empty()) header.push_back("regime");
    w.row(header);
    for (long t = 0; t < ds.n(); ++t) {
        std::vector<std::string> row = {std::to_string(t)};
        for (int i = 0; i < ds.k(); ++i) row.push_back(csv::format_double(ds.y(t, i)));
        row.push_back(csv::format_double(ds.x_true(t)));
        if (!ds.regime.empty()) row.push_back(std::to_string(ds.regime[t]));
        w.row(row);
    }
}

} // namespace dflab::dgp
