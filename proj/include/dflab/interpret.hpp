#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/csv.hpp"
#include "dflab/net.hpp"

namespace dflab::interpret {

namespace detail {

inline Eigen::MatrixXd head_average(const std::vector<Eigen::MatrixXd>& scores) {
    Eigen::MatrixXd avg = scores.front();
    for (std::size_t i = 1; i < scores.size(); ++i) avg += scores[i];
    return avg / static_cast<double>(scores.size());
}

} // namespace detail

/// Last-row State Attention scores of the final State Encoder, head-averaged
/// and reshaped to P x k (row = lag position, column = variable). The whole
/// matrix describes the construction of the period-t factor estimate and
/// sums to one.
inline Eigen::MatrixXd state_attention_matrix(const net::ForwardTrace& tr) {
    const auto avg = detail::head_average(tr.state.back().attn.scores);
    const Eigen::RowVectorXd last = avg.row(avg.rows() - 1);
    const int pk = static_cast<int>(last.size());
    const int p = static_cast<int>(avg.rows());
    const int k = pk / p;
    Eigen::MatrixXd m(p, k);
    for (int t = 0; t < p; ++t)
        for (int i = 0; i < k; ++i) m(t, i) = last(t * k + i);
    return m;
}

/// Last k rows of the Measurement Attention scores, transposed to P x k.
/// Column i describes what the prediction for variable i was based on;
/// each column sums to one.
inline Eigen::MatrixXd measurement_attention_matrix(const net::ForwardTrace& tr) {
    const auto avg = detail::head_average(tr.measurement.back().attn.scores);
    const int p = static_cast<int>(avg.cols());
    const int k = static_cast<int>(avg.rows()) / p;
    return avg.bottomRows(k).transpose();
}

struct AttentionRecord {
    long t = 0;
    Eigen::MatrixXd state_matrix;        // P x k
    Eigen::MatrixXd measurement_matrix;  // P x k
    Eigen::VectorXd variable_contrib;    // column sums of the state matrix
    Eigen::VectorXd lag_contrib_state;   // row sums
    Eigen::VectorXd lag_contrib_measure; // row means over target variables
};

inline AttentionRecord attention_record(const net::ForwardTrace& tr, long t) {
    AttentionRecord rec;
    rec.t = t;
    rec.state_matrix = state_attention_matrix(tr);
    rec.measurement_matrix = measurement_attention_matrix(tr);
    rec.variable_contrib = rec.state_matrix.colwise().sum();
    rec.lag_contrib_state = rec.state_matrix.rowwise().sum();
    rec.lag_contrib_measure = rec.measurement_matrix.rowwise().mean();
    return rec;
}

struct ContributionSeries {
    std::vector<long> t;
    Eigen::MatrixXd variables;      // T x k
    Eigen::MatrixXd lags_state;     // T x P
    Eigen::MatrixXd lags_measure;   // T x P
};

inline ContributionSeries contribution_series(const std::vector<AttentionRecord>& records) {
    if (records.empty()) throw ConfigError("contribution_series: no records");
    const long n = static_cast<long>(records.size());
    const long k = records.front().variable_contrib.size();
    const long p = records.front().lag_contrib_state.size();
    ContributionSeries out;
    out.variables.resize(n, k);
    out.lags_state.resize(n, p);
    out.lags_measure.resize(n, p);
    out.t.reserve(records.size());
    for (long i = 0; i < n; ++i) {
        out.t.push_back(records[i].t);
        out.variables.row(i) = records[i].variable_contrib.transpose();
        out.lags_state.row(i) = records[i].lag_contrib_state.transpose();
        out.lags_measure.row(i) = records[i].lag_contrib_measure.transpose();
    }
    return out;
}

/// Exponential smoother a~_t = alpha a_t + (1-alpha) a~_{t-1}, seeded at the
/// first value. two_way averages a forward and a backward pass to remove
/// the starting-point bias.
inline Eigen::VectorXd smooth(const Eigen::VectorXd& series, double alpha = 0.1, bool two_way = false) {
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("smooth: alpha must lie in (0,1]");
    const long n = series.size();
    Eigen::VectorXd fwd(n);
    if (n == 0) return fwd;
    fwd(0) = series(0);
    for (long t = 1; t < n; ++t) fwd(t) = alpha * series(t) + (1.0 - alpha) * fwd(t - 1);
    if (!two_way) return fwd;
    Eigen::VectorXd bwd(n);
    bwd(n - 1) = series(n - 1);
    for (long t = n - 2; t >= 0; --t) bwd(t) = alpha * series(t) + (1.0 - alpha) * bwd(t + 1);
    return 0.5 * (fwd + bwd);
}

// ---------------------------------------------------------------------------
// Residual stream
// ---------------------------------------------------------------------------

struct ResidualProbe {
    Eigen::VectorXd embed, norm1, attn, norm2, ffn;   // each length P

    static constexpr const char* labels[5] = {"Embed", "Norm1", "Attn", "Norm2", "FFN"};
    const Eigen::VectorXd& stage(int i) const {
        switch (i) {
            case 0: return embed;
            case 1: return norm1;
            case 2: return attn;
            case 3: return norm2;
            default: return ffn;
        }
    }
};

/// Projects each residual-stream stage of the last State Encoder through the
/// factor head. The FFN stage reproduces x_hat exactly.
inline ResidualProbe residual_probe(const net::ForwardTrace& tr, const Eigen::MatrixXd& w_factor) {
    ResidualProbe pr;
    pr.embed = tr.x_init_emb * w_factor;
    pr.norm1 = tr.stage_norm1() * w_factor;
    pr.attn = tr.stage_attn() * w_factor;
    pr.norm2 = tr.stage_norm2() * w_factor;
    pr.ffn = tr.stage_ffn() * w_factor;
    return pr;
}

// ---------------------------------------------------------------------------
// Real-time projections ("tentacles")
// ---------------------------------------------------------------------------

struct Projection {
    Eigen::VectorXd factor;        // x projected over t+1 .. t+n
    Eigen::MatrixXd observables;   // n x k predicted observations
};

/// Recursively appends the model's own predictions to the window and
/// re-runs the forward pass, collecting each round's newest factor estimate.
/// Inference mode throughout.
inline Projection project(const net::TransformerParams& p, const net::Hyperparams& h,
                          const Eigen::MatrixXd& series, long t, int n) {
    if (t < h.lags - 1) throw ConfigError("project: not enough history before t");
    if (n < 0) throw ConfigError("project: n must be nonnegative");
    Projection out;
    out.factor.resize(n);
    out.observables.resize(n, h.vars);
    Rng idle(0);
    Eigen::MatrixXd window = series.middleRows(t - h.lags + 1, h.lags);
    auto tr = net::forward(window, p, h, net::Mode::Infer, idle);
    for (int j = 0; j < n; ++j) {
        // Slide the window forward onto the prediction.
        for (int r = 0; r + 1 < h.lags; ++r) window.row(r) = window.row(r + 1);
        window.row(h.lags - 1) = tr.y_hat_next.transpose();
        out.observables.row(j) = tr.y_hat_next.transpose();
        tr = net::forward(window, p, h, net::Mode::Infer, idle);
        out.factor(j) = tr.x_hat(h.lags - 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV artifacts
// ---------------------------------------------------------------------------
// Lag labels count back from the newest period: lag_1 is time t, lag_P is
// t-P+1. Chronological row p therefore carries label P-p.

inline void write_attention_snapshot(const Eigen::MatrixXd& matrix, const std::filesystem::path& path) {
    csv::Writer w(path);
    const int p = static_cast<int>(matrix.rows());
    const int k = static_cast<int>(matrix.cols());
    std::vector<std::string> header = {"lag"};
    for (int i = 1; i <= k; ++i) header.push_back("var_" + std::to_string(i));
    w.row(header);
    for (int lag = 1; lag <= p; ++lag) {
        std::vector<std::string> row = {std::to_string(lag)};
        for (int i = 0; i < k; ++i) row.push_back(csv::format_double(matrix(p - lag, i)));
        w.row(row);
    }
}

inline void write_contribution_csv(const std::vector<long>& t, const Eigen::MatrixXd& values,
                                   const std::string& col_prefix, const std::filesystem::path& path,
                                   bool reverse_cols) {
    csv::Writer w(path);
    const int m = static_cast<int>(values.cols());
    std::vector<std::string> header = {"t"};
    for (int i = 1; i <= m; ++i) header.push_back(col_prefix + std::to_string(i));
    w.row(header);
    for (long r = 0; r < values.rows(); ++r) {
        std::vector<std::string> row = {std::to_string(t[r])};
        for (int i = 0; i < m; ++i)
            row.push_back(csv::format_double(values(r, reverse_cols ? m - 1 - i : i)));
        w.row(row);
    }
}

inline void write_contributions(const ContributionSeries& series, const std::filesystem::path& dir) {
    write_contribution_csv(series.t, series.variables, "var_", dir / "attn_vars.csv", false);
    write_contribution_csv(series.t, series.lags_state, "lag_", dir / "attn_lags_state.csv", true);
    write_contribution_csv(series.t, series.lags_measure, "lag_", dir / "attn_lags_measure.csv", true);
}

inline void write_residual_stream(const ResidualProbe& probe, const std::filesystem::path& path) {
    csv::Writer w(path);
    w.row({"lag", "Embed", "Norm1", "Attn", "Norm2", "FFN"});
    const int p = static_cast<int>(probe.embed.size());
    for (int lag = 1; lag <= p; ++lag)
        w.row({std::to_string(lag), csv::format_double(probe.embed(p - lag)),
               csv::format_double(probe.norm1(p - lag)), csv::format_double(probe.attn(p - lag)),
               csv::format_double(probe.norm2(p - lag)), csv::format_double(probe.ffn(p - lag))});
}

inline void write_tentacles(const std::vector<std::pair<long, Projection>>& tentacles,
                            const std::filesystem::path& path, bool with_observables) {
    csv::Writer w(path);
    std::vector<std::string> header = {"t0", "step", "x_proj"};
    const int k = tentacles.empty() ? 0 : static_cast<int>(tentacles.front().second.observables.cols());
    if (with_observables)
        for (int i = 1; i <= k; ++i) header.push_back("y" + std::to_string(i));
    w.row(header);
    for (const auto& [t0, proj] : tentacles)
        for (int j = 0; j < proj.factor.size(); ++j) {
            std::vector<std::string> row = {std::to_string(t0), std::to_string(j + 1),
                                            csv::format_double(proj.factor(j))};
            if (with_observables)
                for (int i = 0; i < k; ++i) row.push_back(csv::format_double(proj.observables(j, i)));
            w.row(row);
        }
}

} // namespace dflab::interpret
