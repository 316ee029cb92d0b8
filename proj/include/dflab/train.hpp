#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/net.hpp"
#include "dflab/rng.hpp"

namespace dflab::train {

using net::Hyperparams;
using net::TransformerParams;
using net::WindowExample;
using net::loss;

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// All N-P examples of a series: window t-P+1..t, target y_{t+1}, prior
/// factor at the window lags.
inline std::vector<WindowExample> make_windows(const Eigen::MatrixXd& series, int lags,
                                               const Eigen::VectorXd& prior) {
    const long n = series.rows();
    if (n < lags + 1) throw ConfigError("series shorter than one context window plus target");
    if (prior.size() != n) throw ConfigError("prior series misaligned with the data");
    std::vector<WindowExample> out;
    out.reserve(n - lags);
    for (long t_end = lags - 1; t_end + 1 < n; ++t_end) {
        WindowExample ex;
        ex.window = series.middleRows(t_end - lags + 1, lags);
        ex.target = series.row(t_end + 1).transpose();
        ex.prior_window = prior.segment(t_end - lags + 1, lags);
        ex.t_end = t_end;
        out.push_back(std::move(ex));
    }
    return out;
}

/// Examples fully inside [begin, end): window and target never cross the
/// segment boundary.
inline std::vector<WindowExample> make_windows_in_range(const Eigen::MatrixXd& series, int lags,
                                                        const Eigen::VectorXd& prior, long begin,
                                                        long end) {
    if (prior.size() != series.rows()) throw ConfigError("prior series misaligned with the data");
    std::vector<WindowExample> out;
    for (long t_end = begin + lags - 1; t_end + 1 < end; ++t_end) {
        WindowExample ex;
        ex.window = series.middleRows(t_end - lags + 1, lags);
        ex.target = series.row(t_end + 1).transpose();
        ex.prior_window = prior.segment(t_end - lags + 1, lags);
        ex.t_end = t_end;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Learning rate schedule: linear warmup, cosine decay, identical cycles
// ---------------------------------------------------------------------------

struct TrainConfig {
    int batch = 32;
    double lr = 1e-4;
    int t0 = 100;               // scheduler cycle length in epochs
    int warmup = 10;            // ramp span at each cycle start
    int max_epochs = 1000;
    double weight_decay = 0.015;
    double lambda = 0.6;
    int runs = 10;
    int patience = 100;         // epochs without validation improvement
    std::uint64_t seed = 0;
    bool record_test_fit = false;

    void validate() const {
        if (batch < 1 || t0 < 1 || max_epochs < 1 || runs < 1) throw ConfigError("train config: counts must be positive");
        if (warmup < 0 || warmup >= t0) throw ConfigError("warmup must lie in [0, t0)");
        if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0,1]");
        if (lr <= 0.0 || weight_decay < 0.0 || patience < 0) throw ConfigError("invalid train config");
    }
};

inline double lr_at(double epoch, const TrainConfig& cfg) {
    const double e = std::fmod(epoch, static_cast<double>(cfg.t0));
    if (e < cfg.warmup) return cfg.lr * e / cfg.warmup;
    const double phase = (e - cfg.warmup) / (cfg.t0 - cfg.warmup);
    return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * phase));
}

// ---------------------------------------------------------------------------
// Adaptive moments with decoupled weight decay
// ---------------------------------------------------------------------------

class AdamW {
public:
    AdamW(const TransformerParams& shape, double weight_decay, bool freeze_pos_enc = false)
        : m_(net::zeros_like(shape)), v_(net::zeros_like(shape)), weight_decay_(weight_decay),
          freeze_pos_enc_(freeze_pos_enc) {}

    /// One update. Decay applies to weight matrices only (norms, biases and
    /// encodings are exempt) and is scaled by the scheduled learning rate.
    void step(TransformerParams& p, const TransformerParams& g, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);

        auto tensors_p = collect(p);
        auto tensors_g = collect(const_cast<TransformerParams&>(g));
        auto tensors_m = collect(m_);
        auto tensors_v = collect(v_);
        for (std::size_t i = 0; i < tensors_p.size(); ++i) {
            auto& [name, kind, mat] = tensors_p[i];
            if (freeze_pos_enc_ && name == "pos_enc") continue;
            Eigen::MatrixXd& grad = *std::get<2>(tensors_g[i]);
            Eigen::MatrixXd& m = *std::get<2>(tensors_m[i]);
            Eigen::MatrixXd& v = *std::get<2>(tensors_v[i]);
            m = beta1 * m + (1.0 - beta1) * grad;
            v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
            const Eigen::MatrixXd m_hat = m / bc1;
            const Eigen::MatrixXd v_hat = v / bc2;
            *mat -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
            if (kind == net::ParamKind::Weight) *mat -= lr * weight_decay_ * *mat;
        }
    }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

private:
    using Entry = std::tuple<std::string, net::ParamKind, Eigen::MatrixXd*>;
    static std::vector<Entry> collect(TransformerParams& p) {
        std::vector<Entry> out;
        net::for_each_param(
            p, [&](const std::string& name, Eigen::MatrixXd& m, net::ParamKind k) { out.emplace_back(name, k, &m); });
        return out;
    }

    TransformerParams m_, v_;
    double weight_decay_;
    bool freeze_pos_enc_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// One training run
// ---------------------------------------------------------------------------

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double test_fit = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;            // 1-based epoch with the lowest validation loss
    int best_fit_epoch = 0;        // populated when test fit is recorded
    std::string stop_reason;
};

struct TrainRunResult {
    TransformerParams params;          // snapshot at the lowest validation loss
    TransformerParams params_fit_max;  // snapshot at the highest test fit (optional)
    TrainHistory history;
    double best_val_loss = 0.0;
};

/// Validation loss includes only prediction errors, evaluated with dropout
/// disabled.
inline double validation_loss(const std::vector<WindowExample>& examples, const TransformerParams& p,
                              const Hyperparams& h) {
    Rng idle(0);
    double total = 0.0;
    for (const auto& ex : examples) {
        const auto tr = net::forward(ex.window, p, h, net::Mode::Infer, idle);
        total += (tr.y_hat_next - ex.target).cwiseAbs().mean();
    }
    return total / static_cast<double>(examples.size());
}

struct TrainData {
    std::vector<WindowExample> train;
    std::vector<WindowExample> val;
    // Simulation only: maps current parameters to a test-span Fit value.
    std::function<double(const TransformerParams&)> test_fit;
};

inline TrainRunResult train_run(const TrainData& data, const Hyperparams& hyper, const TrainConfig& cfg,
                                std::uint64_t run_seed) {
    cfg.validate();
    hyper.validate();
    if (data.train.empty() || data.val.empty())
        throw ConfigError("train_run: training and validation sets must be non-empty");

    TransformerParams params = net::init_params(hyper, run_seed);
    AdamW adam(params, cfg.weight_decay, hyper.sinusoidal_pos);
    Rng rng(run_seed, 0x7261u);

    TrainRunResult res;
    res.params = params;
    res.best_val_loss = std::numeric_limits<double>::infinity();
    double best_fit = -std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<WindowExample> batch;

    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = lr_at(epoch - 1, cfg);

        // Fisher-Yates shuffle from the run stream.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.integer(i)]);

        double epoch_loss = 0.0;
        long n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(data.train[order[i]]);
            auto bg = net::grad(batch, params, hyper, cfg.lambda, net::Mode::Train, rng);
            if (!std::isfinite(bg.loss))
                throw NumericOverflowError("training diverged at epoch " + std::to_string(epoch));
            adam.step(params, bg.grads, lr);
            epoch_loss += bg.loss;
            ++n_batches;
        }

        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(n_batches);
        stats.val_loss = validation_loss(data.val, params, hyper);
        if (cfg.record_test_fit && data.test_fit) {
            stats.test_fit = data.test_fit(params);
            if (stats.test_fit > best_fit) {
                best_fit = stats.test_fit;
                res.params_fit_max = params;
                res.history.best_fit_epoch = epoch;
            }
        }
        res.history.epochs.push_back(stats);

        if (stats.val_loss < res.best_val_loss) {
            res.best_val_loss = stats.val_loss;
            res.params = params;
            res.history.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= cfg.patience) {
            res.history.stop_reason = "patience";
            return res;
        }
    }
    res.history.stop_reason = "max_epochs";
    return res;
}

// ---------------------------------------------------------------------------
// Local filtering and ensembling
// ---------------------------------------------------------------------------

/// Factor estimates over [t_begin, t_end): each period's value is the last
/// element of x_hat from the window ending there.
inline Eigen::VectorXd factor_series(const TransformerParams& p, const Hyperparams& h,
                                     const Eigen::MatrixXd& series, long t_begin, long t_end) {
    if (t_begin < h.lags - 1) throw ConfigError("factor_series: not enough history before t_begin");
    Rng idle(0);
    Eigen::VectorXd out(t_end - t_begin);
    for (long t = t_begin; t < t_end; ++t) {
        const auto tr = net::forward(series.middleRows(t - h.lags + 1, h.lags), p, h, net::Mode::Infer, idle);
        out(t - t_begin) = tr.x_hat(h.lags - 1);
    }
    return out;
}

struct Ensemble {
    std::vector<TrainRunResult> runs;
    std::vector<std::uint64_t> run_seeds;
    Eigen::MatrixXd run_factors;   // span length x runs
    Eigen::VectorXd mean_factor;   // pointwise average over runs
};

/// r independent runs differing only in their seed; executes up to `jobs`
/// runs concurrently. Results are identical for any jobs value.
inline Ensemble train_ensemble(const TrainData& data, const Hyperparams& hyper, const TrainConfig& cfg,
                               const Eigen::MatrixXd& series, long span_begin, long span_end,
                               int jobs = 1) {
    Ensemble ens;
    ens.runs.resize(cfg.runs);
    ens.run_seeds.resize(cfg.runs);
    for (int r = 0; r < cfg.runs; ++r) ens.run_seeds[r] = splitmix64(cfg.seed ^ (0x5eedULL + r));

    std::vector<std::exception_ptr> errors(cfg.runs);
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= cfg.runs) return;
            try {
                ens.runs[r] = train_run(data, hyper, cfg, ens.run_seeds[r]);
            } catch (...) {
                errors[r] = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min(jobs, cfg.runs));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& err : errors)
        if (err) std::rethrow_exception(err);

    ens.run_factors.resize(span_end - span_begin, cfg.runs);
    for (int r = 0; r < cfg.runs; ++r)
        ens.run_factors.col(r) = factor_series(ens.runs[r].params, hyper, series, span_begin, span_end);
    ens.mean_factor = ens.run_factors.rowwise().mean();
    return ens;
}

} // namespace dflab::train
