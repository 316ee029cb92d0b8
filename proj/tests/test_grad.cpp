#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dflab/net.hpp"

using namespace dflab;
using namespace dflab::net;

namespace {

Hyperparams tiny_config(double dropout) {
    Hyperparams h;
    h.lags = 3;
    h.vars = 2;
    h.d_model = 8;
    h.n_heads = 2;
    h.d_head = 4;
    h.d_ff = 16;
    h.dropout = dropout;
    return h;
}

std::vector<WindowExample> random_batch(const Hyperparams& h, int n, Rng& rng) {
    std::vector<WindowExample> batch(n);
    for (auto& ex : batch) {
        ex.window.resize(h.lags, h.vars);
        for (long r = 0; r < h.lags; ++r)
            for (long c = 0; c < h.vars; ++c) ex.window(r, c) = rng.normal();
        ex.target.resize(h.vars);
        for (long i = 0; i < h.vars; ++i) ex.target(i) = rng.normal();
        ex.prior_window.resize(h.lags);
        for (long i = 0; i < h.lags; ++i) ex.prior_window(i) = rng.normal();
    }
    return batch;
}

double batch_loss(const std::vector<WindowExample>& batch, const TransformerParams& p,
                  const Hyperparams& h, double lambda, std::uint64_t dropout_seed) {
    Rng rng(dropout_seed);
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto tr = forward(ex.window, p, h, Mode::Train, rng);
        total += loss(tr, ex.target, ex.prior_window, lambda);
    }
    return total / static_cast<double>(batch.size());
}

/// Max relative error between the analytic gradient and central finite
/// differences over every coordinate of every tensor.
double gradient_check(const Hyperparams& h, double lambda, std::uint64_t seed) {
    Rng rng(seed);
    auto batch = random_batch(h, 3, rng);
    TransformerParams p = init_params(h, seed ^ 0xabcdULL);
    const std::uint64_t dropout_seed = seed ^ 0x5151ULL;

    Rng grad_rng(dropout_seed);
    const auto analytic = grad(batch, p, h, lambda, Mode::Train, grad_rng);

    std::vector<Eigen::MatrixXd*> tensors, grads;
    for_each_param(p, [&](const std::string&, Eigen::MatrixXd& m, ParamKind) { tensors.push_back(&m); });
    for_each_param(const_cast<TransformerParams&>(analytic.grads),
                   [&](const std::string&, Eigen::MatrixXd& m, ParamKind) { grads.push_back(&m); });

    const double step = 1e-5;
    double worst = 0.0;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
        Eigen::MatrixXd& m = *tensors[ti];
        for (long r = 0; r < m.rows(); ++r)
            for (long c = 0; c < m.cols(); ++c) {
                const double orig = m(r, c);
                m(r, c) = orig + step;
                const double up = batch_loss(batch, p, h, lambda, dropout_seed);
                m(r, c) = orig - step;
                const double dn = batch_loss(batch, p, h, lambda, dropout_seed);
                m(r, c) = orig;
                const double fd = (up - dn) / (2.0 * step);
                const double ga = (*grads[ti])(r, c);
                const double denom = std::max(std::fabs(fd) + std::fabs(ga), 1e-8);
                worst = std::max(worst, std::fabs(fd - ga) / denom);
            }
    }
    return worst;
}

} // namespace

TEST_CASE("analytic gradients match central finite differences") {
    CHECK(gradient_check(tiny_config(0.0), 0.6, 101) < 1e-4);
    CHECK(gradient_check(tiny_config(0.15), 0.6, 202) < 1e-4);   // through dropout masks
}

TEST_CASE("gradient boundary structure in lambda") {
    const auto h = tiny_config(0.0);
    Rng rng(7);
    auto batch = random_batch(h, 2, rng);
    const auto p = init_params(h, 9);

    SECTION("lambda 0 ignores the prior series") {
        Rng r1(1), r2(1);
        auto g1 = grad(batch, p, h, 0.0, Mode::Train, r1);
        auto perturbed = batch;
        for (auto& ex : perturbed) ex.prior_window.array() += 5.0;
        auto g2 = grad(perturbed, p, h, 0.0, Mode::Train, r2);
        std::vector<const Eigen::MatrixXd*> a, b;
        for_each_param(g1.grads, [&](const std::string&, Eigen::MatrixXd& m, ParamKind) { a.push_back(&m); });
        for_each_param(g2.grads, [&](const std::string&, Eigen::MatrixXd& m, ParamKind) { b.push_back(&m); });
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
    }
    SECTION("exactly satisfied targets give a zero gradient") {
        // Set prior = x_hat and target = y_hat for each example.
        auto exact = batch;
        Rng idle(0);
        for (auto& ex : exact) {
            const auto tr = forward(ex.window, p, h, Mode::Infer, idle);
            ex.prior_window = tr.x_hat;
            ex.target = tr.y_hat_next;
        }
        Rng r(2);
        Hyperparams h_nodrop = h;
        h_nodrop.dropout = 0.0;
        auto g = grad(exact, p, h_nodrop, 0.6, Mode::Train, r);
        CHECK(g.loss == 0.0);
        double max_abs = 0.0;
        for_each_param(g.grads, [&](const std::string&, Eigen::MatrixXd& m, ParamKind) {
            max_abs = std::max(max_abs, m.size() ? m.cwiseAbs().maxCoeff() : 0.0);
        });
        CHECK(max_abs == 0.0);
    }
}
