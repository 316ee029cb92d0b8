#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dflab/common.hpp"
#include "dflab/dgp.hpp"
#include "dflab/nelder_mead.hpp"

namespace dflab::ssm {

// ---------------------------------------------------------------------------
// One-factor linear-Gaussian state space model
//   x_t = mu_x + alpha x_{t-1} + e_t,   e ~ N(0, sigma_x^2)
//   y_t = mu_y + beta x_t + u_t,        u ~ N(0, R)
// ---------------------------------------------------------------------------

struct LinearSSMParams {
    double mu_x = 0.0;
    double alpha = 0.9;     // in [0, 1]
    double sigma_x = 1.0;
    Eigen::VectorXd mu_y;
    Eigen::VectorXd beta;
    Eigen::MatrixXd R;

    int k() const { return static_cast<int>(beta.size()); }

    void validate() const {
        if (sigma_x <= 0.0) throw ConfigError("sigma_x must be positive");
        if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must lie in [0,1]");
        if (mu_y.size() != beta.size() || R.rows() != beta.size() || R.cols() != beta.size())
            throw ConfigError("inconsistent measurement dimensions");
    }
};

struct FilterOutput {
    Eigen::VectorXd filtered_mean;
    Eigen::VectorXd filtered_var;
    double loglik = 0.0;
};

inline constexpr double kDiffuseVariance = 1e7;   // alpha = 1 has no stationary variance

/// Standard predict/update recursion. The first observation updates the
/// unconditional (stationary) state distribution directly.
inline FilterOutput kalman_filter(const LinearSSMParams& p, const Eigen::MatrixXd& y) {
    p.validate();
    const long n = y.rows();
    const int k = static_cast<int>(y.cols());
    if (k != p.k()) throw ConfigError("data has " + std::to_string(k) + " columns, params expect " +
                                      std::to_string(p.k()));

    FilterOutput out;
    out.filtered_mean.resize(n);
    out.filtered_var.resize(n);

    const bool unit_root = p.alpha >= 1.0;
    double m = unit_root ? 0.0 : p.mu_x / (1.0 - p.alpha);
    double v = unit_root ? kDiffuseVariance : p.sigma_x * p.sigma_x / (1.0 - p.alpha * p.alpha);
    const double q = p.sigma_x * p.sigma_x;

    for (long t = 0; t < n; ++t) {
        double m_pred = m, v_pred = v;
        if (t > 0) {
            m_pred = p.mu_x + p.alpha * m;
            v_pred = p.alpha * p.alpha * v + q;
        }

        const Eigen::VectorXd innov = y.row(t).transpose() - p.mu_y - p.beta * m_pred;
        Eigen::MatrixXd S = v_pred * (p.beta * p.beta.transpose()) + p.R;
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw FilterDegenerateError("singular innovation covariance at t=" + std::to_string(t));

        const Eigen::VectorXd s_inv_innov = llt.solve(innov);
        const Eigen::VectorXd s_inv_beta = llt.solve(p.beta);
        const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

        out.loglik += -0.5 * (k * std::log(2.0 * M_PI) + log_det + innov.dot(s_inv_innov));

        m = m_pred + v_pred * p.beta.dot(s_inv_innov);
        v = std::max(0.0, v_pred - v_pred * v_pred * p.beta.dot(s_inv_beta));
        out.filtered_mean(t) = m;
        out.filtered_var(t) = v;
    }
    if (!std::isfinite(out.loglik)) throw FilterDegenerateError("non-finite log-likelihood");
    return out;
}

inline double loglik(const LinearSSMParams& p, const Eigen::MatrixXd& y) {
    return kalman_filter(p, y).loglik;
}

// ---------------------------------------------------------------------------
// Maximum likelihood estimation
// ---------------------------------------------------------------------------

struct EstimateOptions {
    int max_evals = 2000;
    double f_tol = 1e-8;
    bool restart = true;         // one restart from a perturbed optimum
    bool shared_sigma = false;   // R = sigma_y^2 I (empirical spec)
    bool fix_R = false;
    bool fix_loadings = false;   // keep mu_y and beta at their init values
};

struct EstimateResult {
    LinearSSMParams params;
    double loglik = 0.0;
    bool converged = true;
    int evals = 0;
};

namespace detail {

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double logit(double p) {
    const double q = std::min(std::max(p, 1e-8), 1.0 - 1e-8);
    return std::log(q / (1.0 - q));
}

struct Packing {
    int k = 0;
    bool shared_sigma = false, fix_R = false, fix_loadings = false;
    LinearSSMParams base;

    int size() const {
        int n = 3;   // mu_x, alpha, sigma_x
        if (!fix_loadings) n += 2 * k;
        if (!fix_R) n += shared_sigma ? 1 : k * (k + 1) / 2;
        return n;
    }

    Eigen::VectorXd pack(const LinearSSMParams& p) const {
        Eigen::VectorXd th(size());
        int j = 0;
        th(j++) = p.mu_x;
        th(j++) = logit(p.alpha);
        th(j++) = std::log(p.sigma_x);
        if (!fix_loadings) {
            for (int i = 0; i < k; ++i) th(j++) = p.mu_y(i);
            for (int i = 0; i < k; ++i) th(j++) = p.beta(i);
        }
        if (!fix_R) {
            if (shared_sigma) {
                th(j++) = 0.5 * std::log(std::max(p.R(0, 0), 1e-12));
            } else {
                Eigen::LLT<Eigen::MatrixXd> llt(p.R + 1e-10 * Eigen::MatrixXd::Identity(k, k));
                Eigen::MatrixXd L = llt.matrixL();
                for (int c = 0; c < k; ++c)
                    for (int r = c; r < k; ++r) th(j++) = (r == c) ? std::log(L(r, c)) : L(r, c);
            }
        }
        return th;
    }

    LinearSSMParams unpack(const Eigen::VectorXd& th) const {
        LinearSSMParams p = base;
        int j = 0;
        p.mu_x = th(j++);
        p.alpha = logistic(th(j++));
        p.sigma_x = std::exp(th(j++));
        if (!fix_loadings) {
            p.mu_y.resize(k);
            p.beta.resize(k);
            for (int i = 0; i < k; ++i) p.mu_y(i) = th(j++);
            for (int i = 0; i < k; ++i) p.beta(i) = th(j++);
        }
        if (!fix_R) {
            if (shared_sigma) {
                const double s = std::exp(th(j++));
                p.R = s * s * Eigen::MatrixXd::Identity(k, k);
            } else {
                Eigen::MatrixXd L = Eigen::MatrixXd::Zero(k, k);
                for (int c = 0; c < k; ++c)
                    for (int r = c; r < k; ++r) L(r, c) = (r == c) ? std::exp(th(j)) : th(j), ++j;
                p.R = L * L.transpose();
            }
        }
        return p;
    }
};

} // namespace detail

/// Moment-based starting point: rowwise mean of the data as a crude factor,
/// loadings and residual variances by regression on it.
inline LinearSSMParams heuristic_init(const Eigen::MatrixXd& y) {
    const long n = y.rows();
    const int k = static_cast<int>(y.cols());
    Eigen::VectorXd f = y.rowwise().mean();
    const double fm = f.mean();
    const double fvar = (f.array() - fm).square().sum() / n;

    LinearSSMParams p;
    p.mu_y = y.colwise().mean();
    p.beta.resize(k);
    Eigen::MatrixXd resid(n, k);
    for (int i = 0; i < k; ++i) {
        const double c = ((y.col(i).array() - p.mu_y(i)) * (f.array() - fm)).sum() / n;
        p.beta(i) = fvar > 0 ? c / fvar : 1.0;
        resid.col(i) = y.col(i).array() - p.mu_y(i) - p.beta(i) * (f.array() - fm);
    }
    double num = 0.0, den = 0.0;
    for (long t = 1; t < n; ++t) {
        num += (f(t) - fm) * (f(t - 1) - fm);
        den += (f(t - 1) - fm) * (f(t - 1) - fm);
    }
    p.alpha = std::min(std::max(den > 0 ? num / den : 0.9, 0.05), 0.995);
    p.mu_x = fm * (1.0 - p.alpha);
    p.sigma_x = std::max(std::sqrt(std::max(fvar * (1.0 - p.alpha * p.alpha), 1e-6)), 1e-3);
    p.R = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < k; ++i) {
        const double rv = resid.col(i).squaredNorm() / n;
        p.R(i, i) = std::max(rv, 1e-4);
    }
    return p;
}

/// Nelder-Mead ascent on transformed parameters; deterministic given
/// (data, init, opts). Returns the best point found with a convergence flag.
inline EstimateResult estimate_mle(const Eigen::MatrixXd& y, const LinearSSMParams& init,
                                   const EstimateOptions& opts = {}) {
    if (y.rows() < 50) throw ConfigError("estimate_mle: need at least 50 observations");
    detail::Packing pk;
    pk.k = static_cast<int>(y.cols());
    pk.shared_sigma = opts.shared_sigma;
    pk.fix_R = opts.fix_R;
    pk.fix_loadings = opts.fix_loadings;
    pk.base = init;

    auto objective = [&](const Eigen::VectorXd& th) {
        try {
            return -loglik(pk.unpack(th), y);
        } catch (const Error&) {
            return 1e12;
        }
    };

    NelderMeadOptions nm;
    nm.max_evals = opts.max_evals;
    nm.f_tol = opts.f_tol;

    auto first = nelder_mead(objective, pk.pack(init), nm);
    auto best = first;
    if (opts.restart) {
        // Deterministic perturbation of the optimum, alternating sign.
        Eigen::VectorXd th = first.x;
        for (int i = 0; i < th.size(); ++i)
            th(i) += (i % 2 == 0 ? 0.05 : -0.05) * (1.0 + std::abs(th(i)));
        auto second = nelder_mead(objective, th, nm);
        if (second.f < best.f) best = second;
        best.evals = first.evals + second.evals;
        best.converged = first.converged || second.converged;
    }

    EstimateResult res;
    res.params = pk.unpack(best.x);
    res.loglik = -best.f;
    res.converged = best.converged;
    res.evals = best.evals;
    return res;
}

/// "Kalman max" benchmark: the DGP's linear part with true parameters,
/// ignoring nonlinearities. Raw (unstandardized) coordinates.
inline LinearSSMParams kalman_max(const dgp::DGPSpec& spec) {
    if (spec.process_id < 1 || spec.process_id > 4)
        throw ConfigError("kalman_max is defined for processes 1-4");
    LinearSSMParams p;
    p.mu_x = spec.mu_x;
    p.alpha = spec.alpha[0];
    p.sigma_x = spec.sigma_x;
    const int k = spec.vars;
    p.mu_y = Eigen::Map<const Eigen::VectorXd>(spec.mu_y.data(), k);
    p.beta = Eigen::Map<const Eigen::VectorXd>(spec.beta.data(), k);
    p.R = dgp::process_sigma_y(spec);
    return p;
}

/// Re-express raw-coordinate parameters for column-standardized data
/// y' = (y - mean) / sd.
inline LinearSSMParams standardize_params(const LinearSSMParams& p, const Eigen::VectorXd& col_mean,
                                          const Eigen::VectorXd& col_sd) {
    LinearSSMParams q = p;
    const int k = p.k();
    for (int i = 0; i < k; ++i) {
        q.mu_y(i) = (p.mu_y(i) - col_mean(i)) / col_sd(i);
        q.beta(i) = p.beta(i) / col_sd(i);
    }
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) q.R(i, j) = p.R(i, j) / (col_sd(i) * col_sd(j));
    return q;
}

// ---------------------------------------------------------------------------
// Flat key-value parameter files
// ---------------------------------------------------------------------------

inline void write_params(const LinearSSMParams& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "k = " << p.k() << '\n';
    out << "mu_x = " << csv::format_double(p.mu_x) << '\n';
    out << "alpha = " << csv::format_double(p.alpha) << '\n';
    out << "sigma_x = " << csv::format_double(p.sigma_x) << '\n';
    auto list = [&](const char* name, auto&& values) {
        out << name << " =";
        for (double v : values) out << ' ' << csv::format_double(v);
        out << '\n';
    };
    list("mu_y", p.mu_y);
    list("beta", p.beta);
    out << "R =";
    for (int i = 0; i < p.k(); ++i)
        for (int j = 0; j < p.k(); ++j) out << ' ' << csv::format_double(p.R(i, j));
    out << '\n';
}

inline LinearSSMParams read_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    LinearSSMParams p;
    int k = 0;
    std::string line;
    auto values = [](const std::string& rhs) {
        std::istringstream iss(rhs);
        std::vector<double> v;
        double x;
        while (iss >> x) v.push_back(x);
        return v;
    };
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        key.erase(key.find_last_not_of(" \t") + 1);
        const std::string rhs = line.substr(eq + 1);
        auto v = values(rhs);
        if (key == "k") k = v.empty() ? 0 : static_cast<int>(std::lround(v[0]));
        else if (key == "mu_x") p.mu_x = values(rhs).at(0);
        else if (key == "alpha") p.alpha = values(rhs).at(0);
        else if (key == "sigma_x") p.sigma_x = values(rhs).at(0);
        else if (key == "mu_y") p.mu_y = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
        else if (key == "beta") p.beta = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
        else if (key == "R") {
            const int kk = static_cast<int>(std::lround(std::sqrt(static_cast<double>(v.size()))));
            if (kk * kk != static_cast<int>(v.size())) throw DataError("R is not square in " + path.string());
            p.R.resize(kk, kk);
            for (int i = 0; i < kk; ++i)
                for (int j = 0; j < kk; ++j) p.R(i, j) = v[static_cast<std::size_t>(i) * kk + j];
        }
    }
    (void)k;
    if (p.beta.size() == 0 || p.R.rows() != p.beta.size())
        throw DataError("incomplete parameter file " + path.string());
    return p;
}

} // namespace dflab::ssm
