#pragma once

#include <Eigen/Core>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dflab/common.hpp"
#include "dflab/csv.hpp"
#include "dflab/rng.hpp"

namespace dflab::net {

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

enum class FactorInit { Mean, Variable, External };

struct Hyperparams {
    int lags = 9;          // context window P
    int vars = 5;          // observable variables k
    int d_model = 32;
    int n_heads = 4;
    int d_head = 8;        // width of Q, K, V per head
    int d_ff = 64;
    int depth = 1;         // encoders per stack
    double dropout = 0.15;
    double enc_scale = 0.5;          // down-weight on positional/variable encodings
    bool sinusoidal_pos = false;     // fixed sinusoidal positional encodings
    FactorInit factor_init = FactorInit::Mean;
    int init_variable = 0;           // used when factor_init == Variable

    int tokens() const { return lags * vars; }

    void validate() const {
        if (lags < 1 || vars < 1 || d_model < 1 || n_heads < 1 || d_head < 1 || depth < 1)
            throw ConfigError("hyperparameters must be positive");
        if (d_ff < d_model) throw ConfigError("d_ff must be at least d_model");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
        if (enc_scale < 0.0 || enc_scale >= 1.0) throw ConfigError("enc_scale must lie in [0,1)");
        if (factor_init == FactorInit::Variable && (init_variable < 0 || init_variable >= vars))
            throw ConfigError("init_variable out of range");
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class ParamKind { Weight, Bias, Norm, Encoding };

struct LayerNormParams {
    Eigen::MatrixXd scale;   // 1 x d_m
    Eigen::MatrixXd shift;   // 1 x d_m
};

struct EncoderParams {
    LayerNormParams norm_q;    // primary (query-side) input
    LayerNormParams norm_kv;   // cross-attention only; empty for self-attention
    Eigen::MatrixXd wq, wk, wv;   // d_m x (h*d_k), heads as column blocks
    Eigen::MatrixXd wo;           // (h*d_k) x d_m
    LayerNormParams norm2;
    Eigen::MatrixXd w1;           // d_m x d_ff
    Eigen::MatrixXd b1;           // 1 x d_ff
    Eigen::MatrixXd w2;           // d_ff x d_m
    Eigen::MatrixXd b2;           // 1 x d_m
};

struct TransformerParams {
    Eigen::MatrixXd embed;        // 1 x d_m, shared by data, factor init and re-embedding
    Eigen::MatrixXd pos_enc;      // P x d_m
    Eigen::MatrixXd var_enc;      // (k+1) x d_m; row k encodes the factor
    EncoderParams initial;
    std::vector<EncoderParams> state;
    std::vector<EncoderParams> measurement;
    Eigen::MatrixXd w_factor;     // d_m x 1
    Eigen::MatrixXd w_predict;    // d_m x 1
};

/// Visits every parameter tensor in a fixed order (initialization, Adam
/// state, serialization and the gradient check all rely on this order).
template <class Params, class F>
void for_each_param(Params&& p, F&& f) {
    f("embed", p.embed, ParamKind::Weight);
    f("pos_enc", p.pos_enc, ParamKind::Encoding);
    f("var_enc", p.var_enc, ParamKind::Encoding);
    auto visit_encoder = [&](auto& e, const std::string& prefix) {
        f(prefix + ".norm_q.scale", e.norm_q.scale, ParamKind::Norm);
        f(prefix + ".norm_q.shift", e.norm_q.shift, ParamKind::Norm);
        if (e.norm_kv.scale.size() > 0) {
            f(prefix + ".norm_kv.scale", e.norm_kv.scale, ParamKind::Norm);
            f(prefix + ".norm_kv.shift", e.norm_kv.shift, ParamKind::Norm);
        }
        f(prefix + ".wq", e.wq, ParamKind::Weight);
        f(prefix + ".wk", e.wk, ParamKind::Weight);
        f(prefix + ".wv", e.wv, ParamKind::Weight);
        f(prefix + ".wo", e.wo, ParamKind::Weight);
        f(prefix + ".norm2.scale", e.norm2.scale, ParamKind::Norm);
        f(prefix + ".norm2.shift", e.norm2.shift, ParamKind::Norm);
        f(prefix + ".w1", e.w1, ParamKind::Weight);
        f(prefix + ".b1", e.b1, ParamKind::Bias);
        f(prefix + ".w2", e.w2, ParamKind::Weight);
        f(prefix + ".b2", e.b2, ParamKind::Bias);
    };
    visit_encoder(p.initial, "initial");
    for (std::size_t j = 0; j < p.state.size(); ++j) visit_encoder(p.state[j], "state" + std::to_string(j));
    for (std::size_t j = 0; j < p.measurement.size(); ++j)
        visit_encoder(p.measurement[j], "measurement" + std::to_string(j));
    f("w_factor", p.w_factor, ParamKind::Weight);
    f("w_predict", p.w_predict, ParamKind::Weight);
}

inline long count_params(const TransformerParams& p) {
    long n = 0;
    for_each_param(const_cast<TransformerParams&>(p),
                   [&](const std::string&, Eigen::MatrixXd& m, ParamKind) { n += m.size(); });
    return n;
}

inline TransformerParams zeros_like(const TransformerParams& p) {
    TransformerParams z = p;
    for_each_param(z, [](const std::string&, Eigen::MatrixXd& m, ParamKind) { m.setZero(); });
    return z;
}

namespace detail {

inline EncoderParams make_encoder(const Hyperparams& h, bool cross) {
    EncoderParams e;
    const int dm = h.d_model, hdk = h.n_heads * h.d_head;
    e.norm_q.scale.resize(1, dm);
    e.norm_q.shift.resize(1, dm);
    if (cross) {
        e.norm_kv.scale.resize(1, dm);
        e.norm_kv.shift.resize(1, dm);
    }
    e.wq.resize(dm, hdk);
    e.wk.resize(dm, hdk);
    e.wv.resize(dm, hdk);
    e.wo.resize(hdk, dm);
    e.norm2.scale.resize(1, dm);
    e.norm2.shift.resize(1, dm);
    e.w1.resize(dm, h.d_ff);
    e.b1.resize(1, h.d_ff);
    e.w2.resize(h.d_ff, dm);
    e.b2.resize(1, dm);
    return e;
}

} // namespace detail

/// Glorot-uniform weights, unit norm scales, zero biases and shifts.
/// Deterministic given the seed. Encoding rows use fan (1, d_m) like the
/// value embedding; attention blocks use the per-head fan (d_m, d_k).
inline TransformerParams init_params(const Hyperparams& h, std::uint64_t seed) {
    h.validate();
    TransformerParams p;
    p.embed.resize(1, h.d_model);
    p.pos_enc.resize(h.lags, h.d_model);
    p.var_enc.resize(h.vars + 1, h.d_model);
    p.initial = detail::make_encoder(h, false);
    p.state.assign(h.depth, detail::make_encoder(h, true));
    p.measurement.assign(h.depth, detail::make_encoder(h, true));
    p.w_factor.resize(h.d_model, 1);
    p.w_predict.resize(h.d_model, 1);

    Rng rng(seed, 0x1417u);
    for_each_param(p, [&](const std::string& name, Eigen::MatrixXd& m, ParamKind kind) {
        switch (kind) {
            case ParamKind::Bias:
                m.setZero();
                return;
            case ParamKind::Norm:
                m.setConstant(name.ends_with("scale") ? 1.0 : 0.0);
                return;
            case ParamKind::Encoding:
            case ParamKind::Weight: {
                double limit;
                if (kind == ParamKind::Encoding || name == "embed")
                    limit = std::sqrt(6.0 / (1.0 + h.d_model));
                else if (name.ends_with(".wq") || name.ends_with(".wk") || name.ends_with(".wv"))
                    limit = std::sqrt(6.0 / (h.d_model + h.d_head));
                else
                    limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
                for (long r = 0; r < m.rows(); ++r)
                    for (long c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-limit, limit);
                return;
            }
        }
    });

    if (h.sinusoidal_pos) {
        for (int t = 0; t < h.lags; ++t)
            for (int i = 0; i < h.d_model / 2; ++i) {
                const double angle = t / std::pow(10000.0, 2.0 * i / h.d_model);
                p.pos_enc(t, 2 * i) = std::sin(angle);
                if (2 * i + 1 < h.d_model) p.pos_enc(t, 2 * i + 1) = std::cos(angle);
            }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass with a full trace of intermediates
// ---------------------------------------------------------------------------

enum class Mode { Train, Infer };

struct NormCache {
    Eigen::MatrixXd standardized;   // (x - mean) / sd, before scale and shift
    Eigen::MatrixXd out;
    Eigen::VectorXd inv_std;
};

struct AttentionCache {
    Eigen::MatrixXd q, k, v;               // inputs after projection
    std::vector<Eigen::MatrixXd> scores;   // per head, rows are softmax distributions
    Eigen::MatrixXd concat;
    Eigen::MatrixXd out;                   // after the wo projection
};

struct FFNCache {
    Eigen::MatrixXd z;   // pre-activation
    Eigen::MatrixXd g;   // GELU(z)
    Eigen::MatrixXd out;
};

struct EncoderTrace {
    NormCache norm_q, norm_kv;
    AttentionCache attn;
    Eigen::MatrixXd drop1;   // scaled keep mask; empty in inference mode
    Eigen::MatrixXd x2;      // residual stream after attention (Y2 for measurement)
    NormCache norm2;
    FFNCache ffn;
    Eigen::MatrixXd drop2;
    Eigen::MatrixXd out;     // X5 / Y5
};

struct ForwardTrace {
    Eigen::MatrixXd window;       // P x k
    Eigen::VectorXd tokens;       // row-major flatten, time then variable
    Eigen::VectorXd x_init;       // P
    Eigen::MatrixXd y_emb;        // Pk x d_m
    Eigen::MatrixXd x_init_emb;   // P x d_m  (X_init)
    EncoderTrace initial;
    std::vector<EncoderTrace> state;
    std::vector<EncoderTrace> measurement;
    Eigen::VectorXd x_hat;        // P
    Eigen::MatrixXd x_reemb;      // P x d_m
    Eigen::VectorXd y_hat_all;    // Pk
    Eigen::VectorXd y_hat_next;   // k, last-period predictions

    // Residual-stream stages of the last State Encoder (x_init_emb is the
    // Embed stage).
    const Eigen::MatrixXd& stage_norm1() const { return state.back().norm_q.out; }
    const Eigen::MatrixXd& stage_attn() const { return state.back().x2; }
    const Eigen::MatrixXd& stage_norm2() const { return state.back().norm2.out; }
    const Eigen::MatrixXd& stage_ffn() const { return state.back().out; }
};

namespace detail {

inline constexpr double kNormEps = 1e-5;

inline void layer_norm(const Eigen::MatrixXd& x, const LayerNormParams& p, NormCache& c) {
    const long n = x.rows(), d = x.cols();
    c.standardized.resize(n, d);
    c.out.resize(n, d);
    c.inv_std.resize(n);
    for (long r = 0; r < n; ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / d;
        const double inv = 1.0 / std::sqrt(var + kNormEps);
        c.inv_std(r) = inv;
        c.standardized.row(r) = (x.row(r).array() - mean) * inv;
        c.out.row(r) = c.standardized.row(r).cwiseProduct(p.scale.row(0)) + p.shift.row(0);
    }
}

inline Eigen::MatrixXd layer_norm_backward(const NormCache& c, const LayerNormParams& p,
                                           const Eigen::MatrixXd& dout, Eigen::MatrixXd& dscale,
                                           Eigen::MatrixXd& dshift) {
    const long n = dout.rows(), d = dout.cols();
    dshift.row(0) += dout.colwise().sum();
    dscale.row(0) += dout.cwiseProduct(c.standardized).colwise().sum();
    Eigen::MatrixXd dx(n, d);
    for (long r = 0; r < n; ++r) {
        const Eigen::RowVectorXd dxhat = dout.row(r).cwiseProduct(p.scale.row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(c.standardized.row(r)).mean();
        dx.row(r) = c.inv_std(r) * (dxhat.array() - m1 - c.standardized.row(r).array() * m2);
    }
    return dx;
}

inline double gelu(double z) { return 0.5 * z * std::erfc(-z * M_SQRT1_2); }

inline double gelu_grad(double z) {
    const double phi = 0.5 * std::erfc(-z * M_SQRT1_2);
    const double dens = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    return phi + z * dens;
}

inline void softmax_rows(Eigen::MatrixXd& m) {
    for (long r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

inline Eigen::MatrixXd dropout_mask(long rows, long cols, double p, Rng& rng) {
    Eigen::MatrixXd mask(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) mask(r, c) = rng.uniform() < p ? 0.0 : keep;
    return mask;
}

} // namespace detail

/// Scaled dot-product attention for one head: scores = softmax(Q K'/sqrt(d)),
/// output = scores * V. Rows of the score matrix are probability vectors.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> attention_head(const Eigen::MatrixXd& q,
                                                                  const Eigen::MatrixXd& k,
                                                                  const Eigen::MatrixXd& v) {
    Eigen::MatrixXd scores = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
    detail::softmax_rows(scores);
    return {scores, scores * v};
}

namespace detail {

enum class EncoderKind { SelfResidual, CrossResidual, CrossNoResidual };

inline void multi_head_attention(const Eigen::MatrixXd& q_in, const Eigen::MatrixXd& kv_in,
                                 const EncoderParams& e, int n_heads, AttentionCache& c) {
    const int dk = static_cast<int>(e.wq.cols()) / n_heads;
    c.q.noalias() = q_in * e.wq;
    c.k.noalias() = kv_in * e.wk;
    c.v.noalias() = kv_in * e.wv;
    c.scores.resize(n_heads);
    c.concat.resize(q_in.rows(), e.wq.cols());
    for (int hh = 0; hh < n_heads; ++hh) {
        auto [scores, out] = attention_head(c.q.middleCols(hh * dk, dk), c.k.middleCols(hh * dk, dk),
                                            c.v.middleCols(hh * dk, dk));
        c.scores[hh] = std::move(scores);
        c.concat.middleCols(hh * dk, dk) = out;
    }
    c.out.noalias() = c.concat * e.wo;
}

/// dq_in and dkv_in receive gradients from the attention projections.
inline void multi_head_attention_backward(const Eigen::MatrixXd& q_in, const Eigen::MatrixXd& kv_in,
                                          const EncoderParams& e, int n_heads, const AttentionCache& c,
                                          const Eigen::MatrixXd& dout, EncoderParams& g,
                                          Eigen::MatrixXd& dq_in, Eigen::MatrixXd& dkv_in) {
    const int dk = static_cast<int>(e.wq.cols()) / n_heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));

    g.wo.noalias() += c.concat.transpose() * dout;
    const Eigen::MatrixXd dconcat = dout * e.wo.transpose();

    Eigen::MatrixXd dq(c.q.rows(), c.q.cols()), dkm(c.k.rows(), c.k.cols()), dvm(c.v.rows(), c.v.cols());
    for (int hh = 0; hh < n_heads; ++hh) {
        const auto qh = c.q.middleCols(hh * dk, dk);
        const auto kh = c.k.middleCols(hh * dk, dk);
        const auto vh = c.v.middleCols(hh * dk, dk);
        const auto dch = dconcat.middleCols(hh * dk, dk);
        const Eigen::MatrixXd& a = c.scores[hh];

        dvm.middleCols(hh * dk, dk).noalias() = a.transpose() * dch;
        Eigen::MatrixXd da = dch * vh.transpose();
        // softmax backward, row-wise: ds = a .* (da - rowsum(da .* a))
        Eigen::MatrixXd ds(a.rows(), a.cols());
        for (long r = 0; r < a.rows(); ++r) {
            const double dot = da.row(r).dot(a.row(r));
            ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
        }
        ds *= inv_scale;
        dq.middleCols(hh * dk, dk).noalias() = ds * kh;
        dkm.middleCols(hh * dk, dk).noalias() = ds.transpose() * qh;
    }
    g.wq.noalias() += q_in.transpose() * dq;
    g.wk.noalias() += kv_in.transpose() * dkm;
    g.wv.noalias() += kv_in.transpose() * dvm;
    dq_in.noalias() += dq * e.wq.transpose();
    dkv_in.noalias() += dkm * e.wk.transpose() + dvm * e.wv.transpose();
}

inline void encoder_forward(EncoderKind kind, const Eigen::MatrixXd& q_input,
                            const Eigen::MatrixXd& kv_input, const EncoderParams& e,
                            const Hyperparams& h, Mode mode, Rng& rng, EncoderTrace& tr) {
    layer_norm(q_input, e.norm_q, tr.norm_q);
    const bool cross = kind != EncoderKind::SelfResidual;
    if (cross) layer_norm(kv_input, e.norm_kv, tr.norm_kv);
    const Eigen::MatrixXd& kv_norm = cross ? tr.norm_kv.out : tr.norm_q.out;

    multi_head_attention(tr.norm_q.out, kv_norm, e, h.n_heads, tr.attn);

    const bool drop = mode == Mode::Train && h.dropout > 0.0;
    if (drop) {
        tr.drop1 = dropout_mask(tr.attn.out.rows(), tr.attn.out.cols(), h.dropout, rng);
        tr.x2 = tr.attn.out.cwiseProduct(tr.drop1);
    } else {
        tr.drop1.resize(0, 0);
        tr.x2 = tr.attn.out;
    }
    if (kind != EncoderKind::CrossNoResidual) tr.x2 += q_input;

    layer_norm(tr.x2, e.norm2, tr.norm2);
    tr.ffn.z.noalias() = tr.norm2.out * e.w1;
    tr.ffn.z.rowwise() += e.b1.row(0);
    tr.ffn.g = tr.ffn.z.unaryExpr([](double z) { return gelu(z); });
    tr.ffn.out.noalias() = tr.ffn.g * e.w2;
    tr.ffn.out.rowwise() += e.b2.row(0);

    if (drop) {
        tr.drop2 = dropout_mask(tr.ffn.out.rows(), tr.ffn.out.cols(), h.dropout, rng);
        tr.out = tr.x2 + tr.ffn.out.cwiseProduct(tr.drop2);
    } else {
        tr.drop2.resize(0, 0);
        tr.out = tr.x2 + tr.ffn.out;
    }
}

/// Propagates dout through one encoder; adds parameter gradients into g and
/// input gradients into dq_input / dkv_input.
inline void encoder_backward(EncoderKind kind, const Eigen::MatrixXd& q_input,
                             const Eigen::MatrixXd& kv_input, const EncoderParams& e,
                             const Hyperparams& h, const EncoderTrace& tr, const Eigen::MatrixXd& dout,
                             EncoderParams& g, Eigen::MatrixXd& dq_input, Eigen::MatrixXd& dkv_input) {
    // out = x2 + drop2 .* ffn_out
    Eigen::MatrixXd dx2 = dout;
    Eigen::MatrixXd dffn = tr.drop2.size() ? dout.cwiseProduct(tr.drop2) : dout;

    g.w2.noalias() += tr.ffn.g.transpose() * dffn;
    g.b2.row(0) += dffn.colwise().sum();
    Eigen::MatrixXd dg = dffn * e.w2.transpose();
    Eigen::MatrixXd dz = dg.cwiseProduct(tr.ffn.z.unaryExpr([](double z) { return gelu_grad(z); }));
    g.w1.noalias() += tr.norm2.out.transpose() * dz;
    g.b1.row(0) += dz.colwise().sum();
    const Eigen::MatrixXd dnorm2_out = dz * e.w1.transpose();

    dx2 += layer_norm_backward(tr.norm2, e.norm2, dnorm2_out, g.norm2.scale, g.norm2.shift);

    // x2 = [q_input +] drop1 .* attn_out
    if (kind != EncoderKind::CrossNoResidual) dq_input += dx2;
    const Eigen::MatrixXd dattn = tr.drop1.size() ? dx2.cwiseProduct(tr.drop1) : dx2;

    const bool cross = kind != EncoderKind::SelfResidual;
    Eigen::MatrixXd dq_norm = Eigen::MatrixXd::Zero(tr.norm_q.out.rows(), tr.norm_q.out.cols());
    if (cross) {
        Eigen::MatrixXd dkv_norm = Eigen::MatrixXd::Zero(tr.norm_kv.out.rows(), tr.norm_kv.out.cols());
        multi_head_attention_backward(tr.norm_q.out, tr.norm_kv.out, e, h.n_heads, tr.attn, dattn, g,
                                      dq_norm, dkv_norm);
        dkv_input += layer_norm_backward(tr.norm_kv, e.norm_kv, dkv_norm, g.norm_kv.scale,
                                         g.norm_kv.shift);
    } else {
        multi_head_attention_backward(tr.norm_q.out, tr.norm_q.out, e, h.n_heads, tr.attn, dattn, g,
                                      dq_norm, dq_norm);
    }
    dq_input += layer_norm_backward(tr.norm_q, e.norm_q, dq_norm, g.norm_q.scale, g.norm_q.shift);
}

inline void check_finite(const Eigen::MatrixXd& m, const char* layer) {
    if (!m.allFinite()) throw NumericOverflowError(std::string("non-finite activation in ") + layer);
}

} // namespace detail

/// Token embedding of a P x k window: flatten by time then variable, project
/// each value through the shared one-row embedding, add down-weighted
/// positional and variable encodings.
inline Eigen::MatrixXd embed_window(const Eigen::MatrixXd& window, const TransformerParams& p,
                                    const Hyperparams& h) {
    Eigen::MatrixXd out(h.tokens(), h.d_model);
    for (int t = 0; t < h.lags; ++t)
        for (int i = 0; i < h.vars; ++i)
            out.row(t * h.vars + i) = window(t, i) * p.embed.row(0) +
                                      h.enc_scale * (p.pos_enc.row(t) + p.var_enc.row(i));
    return out;
}

/// Crude initial factor: pointwise mean of the window (or one observable /
/// an externally supplied series), embedded like any token but with the
/// factor's variable encoding.
inline Eigen::VectorXd initial_factor_series(const Eigen::MatrixXd& window, const Hyperparams& h,
                                             const Eigen::VectorXd* external) {
    switch (h.factor_init) {
        case FactorInit::Mean:
            return window.rowwise().mean();
        case FactorInit::Variable:
            return window.col(h.init_variable);
        case FactorInit::External:
            if (external == nullptr || external->size() != h.lags)
                throw ConfigError("external factor initialization series missing or mis-sized");
            return *external;
    }
    throw ConfigError("unknown factor initialization");
}

inline Eigen::MatrixXd embed_factor(const Eigen::VectorXd& series, const TransformerParams& p,
                                    const Hyperparams& h) {
    Eigen::MatrixXd out(h.lags, h.d_model);
    for (int t = 0; t < h.lags; ++t)
        out.row(t) = series(t) * p.embed.row(0) +
                     h.enc_scale * (p.pos_enc.row(t) + p.var_enc.row(h.vars));
    return out;
}

inline Eigen::MatrixXd init_factor(const Eigen::MatrixXd& window, const TransformerParams& p,
                                   const Hyperparams& h, const Eigen::VectorXd* external = nullptr) {
    return embed_factor(initial_factor_series(window, h, external), p, h);
}

/// Full forward pass. Inference mode disables dropout and is a pure
/// function of (window, params).
inline ForwardTrace forward(const Eigen::MatrixXd& window, const TransformerParams& p,
                            const Hyperparams& h, Mode mode, Rng& rng,
                            const Eigen::VectorXd* external_init = nullptr) {
    using namespace detail;
    if (window.rows() != h.lags || window.cols() != h.vars)
        throw ConfigError("window must be P x k");

    ForwardTrace tr;
    tr.window = window;
    tr.tokens.resize(h.tokens());
    for (int t = 0; t < h.lags; ++t)
        for (int i = 0; i < h.vars; ++i) tr.tokens(t * h.vars + i) = window(t, i);

    tr.y_emb = embed_window(window, p, h);
    tr.x_init = initial_factor_series(window, h, external_init);
    tr.x_init_emb = embed_factor(tr.x_init, p, h);

    encoder_forward(EncoderKind::SelfResidual, tr.y_emb, tr.y_emb, p.initial, h, mode, rng, tr.initial);
    check_finite(tr.initial.out, "initial encoder");

    tr.state.resize(h.depth);
    const Eigen::MatrixXd* x_in = &tr.x_init_emb;
    for (int j = 0; j < h.depth; ++j) {
        encoder_forward(EncoderKind::CrossResidual, *x_in, tr.initial.out, p.state[j], h, mode, rng,
                        tr.state[j]);
        check_finite(tr.state[j].out, "state encoder");
        x_in = &tr.state[j].out;
    }

    tr.x_hat = tr.state.back().out * p.w_factor;
    check_finite(tr.x_hat, "factor head");
    tr.x_reemb = embed_factor(tr.x_hat, p, h);

    tr.measurement.resize(h.depth);
    const Eigen::MatrixXd* y_in = &tr.initial.out;
    for (int j = 0; j < h.depth; ++j) {
        encoder_forward(EncoderKind::CrossNoResidual, *y_in, tr.x_reemb, p.measurement[j], h, mode, rng,
                        tr.measurement[j]);
        check_finite(tr.measurement[j].out, "measurement encoder");
        y_in = &tr.measurement[j].out;
    }

    tr.y_hat_all = tr.measurement.back().out * p.w_predict;
    check_finite(tr.y_hat_all, "prediction head");
    tr.y_hat_next = tr.y_hat_all.tail(h.vars);
    return tr;
}

// ---------------------------------------------------------------------------
// Loss and exact gradients
// ---------------------------------------------------------------------------

/// lambda * mean|x_hat - prior| + (1 - lambda) * mean|y_hat_next - target|.
inline double loss(const ForwardTrace& tr, const Eigen::VectorXd& target,
                   const Eigen::VectorXd& prior_window, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0,1]");
    const double pi = (tr.x_hat - prior_window).cwiseAbs().mean();
    const double pe = (tr.y_hat_next - target).cwiseAbs().mean();
    return lambda * pi + (1.0 - lambda) * pe;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Reverse pass for one traced window; adds into `g`, scaled by `weight`.
inline void backward(const ForwardTrace& tr, const TransformerParams& p, const Hyperparams& h,
                     const Eigen::VectorXd& target, const Eigen::VectorXd& prior_window, double lambda,
                     double weight, TransformerParams& g) {
    const int P = h.lags, k = h.vars, dm = h.d_model;

    // Loss heads.
    Eigen::VectorXd d_y_all = Eigen::VectorXd::Zero(h.tokens());
    for (int i = 0; i < k; ++i)
        d_y_all(h.tokens() - k + i) =
            weight * (1.0 - lambda) / k * sign(tr.y_hat_next(i) - target(i));
    Eigen::VectorXd d_x_hat(P);
    for (int t = 0; t < P; ++t)
        d_x_hat(t) = weight * lambda / P * sign(tr.x_hat(t) - prior_window(t));

    // Prediction head.
    g.w_predict.col(0) += tr.measurement.back().out.transpose() * d_y_all;
    Eigen::MatrixXd d_meas_out = d_y_all * p.w_predict.col(0).transpose();

    // Measurement stack (reverse). Queries chain through the stack, K/V all
    // read the re-embedded factor.
    Eigen::MatrixXd d_x_reemb = Eigen::MatrixXd::Zero(P, dm);
    Eigen::MatrixXd d_y_init = Eigen::MatrixXd::Zero(h.tokens(), dm);
    for (int j = h.depth - 1; j >= 0; --j) {
        const Eigen::MatrixXd& q_in = (j == 0) ? tr.initial.out : tr.measurement[j - 1].out;
        Eigen::MatrixXd d_q = Eigen::MatrixXd::Zero(q_in.rows(), dm);
        encoder_backward(EncoderKind::CrossNoResidual, q_in, tr.x_reemb, p.measurement[j], h,
                         tr.measurement[j], d_meas_out, g.measurement[j], d_q, d_x_reemb);
        if (j == 0)
            d_y_init += d_q;
        else
            d_meas_out = std::move(d_q);
    }

    // Re-embedding shares the embedding row and the factor encodings.
    for (int t = 0; t < P; ++t) {
        g.embed.row(0) += tr.x_hat(t) * d_x_reemb.row(t);
        d_x_hat(t) += d_x_reemb.row(t).dot(p.embed.row(0));
        g.pos_enc.row(t) += h.enc_scale * d_x_reemb.row(t);
        g.var_enc.row(k) += h.enc_scale * d_x_reemb.row(t);
    }

    // Factor head.
    g.w_factor.col(0) += tr.state.back().out.transpose() * d_x_hat;
    Eigen::MatrixXd d_state_out = d_x_hat * p.w_factor.col(0).transpose();

    // State stack (reverse).
    Eigen::MatrixXd d_x_init_emb = Eigen::MatrixXd::Zero(P, dm);
    for (int j = h.depth - 1; j >= 0; --j) {
        const Eigen::MatrixXd& q_in = (j == 0) ? tr.x_init_emb : tr.state[j - 1].out;
        Eigen::MatrixXd d_q = Eigen::MatrixXd::Zero(P, dm);
        encoder_backward(EncoderKind::CrossResidual, q_in, tr.initial.out, p.state[j], h, tr.state[j],
                         d_state_out, g.state[j], d_q, d_y_init);
        if (j == 0)
            d_x_init_emb += d_q;
        else
            d_state_out = std::move(d_q);
    }

    // Factor initialization (x_init comes from data; no gradient past it).
    for (int t = 0; t < P; ++t) {
        g.embed.row(0) += tr.x_init(t) * d_x_init_emb.row(t);
        g.pos_enc.row(t) += h.enc_scale * d_x_init_emb.row(t);
        g.var_enc.row(k) += h.enc_scale * d_x_init_emb.row(t);
    }

    // Initial encoder back to the raw token embeddings.
    Eigen::MatrixXd d_y_emb = Eigen::MatrixXd::Zero(h.tokens(), dm);
    encoder_backward(EncoderKind::SelfResidual, tr.y_emb, tr.y_emb, p.initial, h, tr.initial, d_y_init,
                     g.initial, d_y_emb, d_y_emb);

    for (int t = 0; t < P; ++t)
        for (int i = 0; i < k; ++i) {
            const long row = static_cast<long>(t) * k + i;
            g.embed.row(0) += tr.tokens(row) * d_y_emb.row(row);
            g.pos_enc.row(t) += h.enc_scale * d_y_emb.row(row);
            g.var_enc.row(i) += h.enc_scale * d_y_emb.row(row);
        }
}

} // namespace detail

struct WindowExample {
    Eigen::MatrixXd window;        // P x k
    Eigen::VectorXd target;        // k, next-period observations
    Eigen::VectorXd prior_window;  // P, prior model factor at the window lags
    long t_end = 0;                // absolute index of the window's last period
};

struct BatchGrad {
    TransformerParams grads;
    double loss = 0.0;
    double pi = 0.0;
    double pe = 0.0;
};

/// Exact gradient of the batch-mean loss, evaluated at the same dropout
/// realization as the forward pass.
inline BatchGrad grad(const std::vector<WindowExample>& batch, const TransformerParams& p,
                      const Hyperparams& h, double lambda, Mode mode, Rng& rng) {
    if (batch.empty()) throw ConfigError("grad: empty batch");
    BatchGrad out;
    out.grads = zeros_like(p);
    const double w = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        ForwardTrace tr = forward(ex.window, p, h, mode, rng);
        out.pi += w * (tr.x_hat - ex.prior_window).cwiseAbs().mean();
        out.pe += w * (tr.y_hat_next - ex.target).cwiseAbs().mean();
        out.loss += w * loss(tr, ex.target, ex.prior_window, lambda);
        detail::backward(tr, p, h, ex.target, ex.prior_window, lambda, w, out.grads);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: text file with a shape manifest and row-major payloads
// ---------------------------------------------------------------------------

inline void save_checkpoint(const TransformerParams& p, const Hyperparams& h,
                            const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "dflab-checkpoint 1\n";
    out << "hyper " << h.lags << ' ' << h.vars << ' ' << h.d_model << ' ' << h.n_heads << ' '
        << h.d_head << ' ' << h.d_ff << ' ' << h.depth << ' ' << csv::format_double(h.dropout) << ' '
        << csv::format_double(h.enc_scale) << ' ' << (h.sinusoidal_pos ? 1 : 0) << ' '
        << static_cast<int>(h.factor_init) << ' ' << h.init_variable << '\n';
    for_each_param(const_cast<TransformerParams&>(p),
                   [&](const std::string& name, Eigen::MatrixXd& m, ParamKind) {
                       out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
                       for (long r = 0; r < m.rows(); ++r) {
                           for (long c = 0; c < m.cols(); ++c) {
                               if (c) out << ' ';
                               out << csv::format_double(m(r, c));
                           }
                           out << '\n';
                       }
                   });
}

inline std::pair<TransformerParams, Hyperparams> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "dflab-checkpoint" || version != 1)
        throw DataError("unrecognized checkpoint format in " + path.string());

    Hyperparams h;
    int sin = 0, fi = 0;
    in >> tag;   // "hyper"
    in >> h.lags >> h.vars >> h.d_model >> h.n_heads >> h.d_head >> h.d_ff >> h.depth >> h.dropout >>
        h.enc_scale >> sin >> fi >> h.init_variable;
    h.sinusoidal_pos = sin != 0;
    h.factor_init = static_cast<FactorInit>(fi);

    TransformerParams p = init_params(h, 0);
    for_each_param(p, [&](const std::string& name, Eigen::MatrixXd& m, ParamKind) {
        std::string kw, got;
        long rows = 0, cols = 0;
        in >> kw >> got >> rows >> cols;
        if (kw != "tensor" || got != name || rows != m.rows() || cols != m.cols())
            throw DataError("checkpoint shape mismatch at tensor '" + name + "' in " + path.string());
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < cols; ++c) in >> m(r, c);
    });
    if (!in) throw DataError("truncated checkpoint " + path.string());
    return {std::move(p), h};
}

} // namespace dflab::net
