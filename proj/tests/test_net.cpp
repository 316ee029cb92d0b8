#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "dflab/net.hpp"

using namespace dflab;
using namespace dflab::net;

namespace {

Hyperparams paper_config() { return Hyperparams{}; }

Hyperparams tiny_config() {
    Hyperparams h;
    h.lags = 3;
    h.vars = 2;
    h.d_model = 8;
    h.n_heads = 2;
    h.d_head = 4;
    h.d_ff = 16;
    h.dropout = 0.0;
    return h;
}

Eigen::MatrixXd random_window(const Hyperparams& h, Rng& rng) {
    Eigen::MatrixXd w(h.lags, h.vars);
    for (long r = 0; r < w.rows(); ++r)
        for (long c = 0; c < w.cols(); ++c) w(r, c) = rng.normal();
    return w;
}

void zero_output_projections(TransformerParams& p) {
    auto zero_enc = [](EncoderParams& e) {
        e.wo.setZero();
        e.w2.setZero();
        e.b2.setZero();
    };
    zero_enc(p.initial);
    for (auto& e : p.state) zero_enc(e);
    for (auto& e : p.measurement) zero_enc(e);
}

} // namespace

TEST_CASE("init_params is deterministic and Glorot-bounded") {
    const auto h = paper_config();
    const auto a = init_params(h, 42);
    const auto b = init_params(h, 42);
    CHECK(a.embed == b.embed);
    CHECK(a.state[0].wq == b.state[0].wq);
    CHECK(a.measurement[0].w1 == b.measurement[0].w1);

    const double limit = std::sqrt(6.0 / (h.d_model + h.d_head));
    CHECK(a.state[0].wq.cwiseAbs().maxCoeff() <= limit);
    CHECK(a.initial.wk.cwiseAbs().maxCoeff() <= limit);
    CHECK(a.initial.b1.isZero());
    CHECK(a.state[0].norm_q.scale.isOnes());
    CHECK(a.state[0].norm_q.shift.isZero());
}

TEST_CASE("parameter count matches the architecture") {
    const auto p = init_params(paper_config(), 1);
    CHECK(count_params(p) == 25952);           // about 26k
    CHECK(std::llabs(count_params(p) - 26000) < 100);
}

TEST_CASE("embed_window layout and encodings") {
    Hyperparams h = paper_config();
    auto p = init_params(h, 3);

    SECTION("unit embedding with encodings off copies the value") {
        h.enc_scale = 0.0;
        p.embed.setOnes();
        Eigen::MatrixXd w = Eigen::MatrixXd::Constant(h.lags, h.vars, 2.0);
        const auto emb = embed_window(w, p, h);
        REQUIRE(emb.rows() == 45);
        REQUIRE(emb.cols() == 32);
        CHECK(emb.row(0).isApprox(Eigen::RowVectorXd::Constant(32, 2.0)));
    }
    SECTION("equal values embed identically when encodings are off") {
        h.enc_scale = 0.0;
        Rng rng(4);
        Eigen::MatrixXd w = random_window(h, rng);
        w(0, 0) = w(5, 3) = 0.77;
        const auto emb = embed_window(w, p, h);
        CHECK(emb.row(0 * h.vars + 0) == emb.row(5 * h.vars + 3));
    }
    SECTION("token order is time-major") {
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(h.lags, h.vars);
        w(2, 1) = 5.0;
        h.enc_scale = 0.0;
        const auto emb = embed_window(w, p, h);
        CHECK(emb.row(2 * h.vars + 1) == 5.0 * p.embed.row(0));
        CHECK(emb.row(0).isZero());
    }
}

TEST_CASE("factor initialization") {
    Hyperparams h = paper_config();
    auto p = init_params(h, 5);
    SECTION("constant window embeds its value") {
        h.enc_scale = 0.0;
        Eigen::MatrixXd w = Eigen::MatrixXd::Constant(h.lags, h.vars, 1.5);
        const auto x = init_factor(w, p, h);
        for (int t = 0; t < h.lags; ++t) CHECK(x.row(t).isApprox(1.5 * p.embed.row(0)));
    }
    SECTION("pointwise mean cancels opposite values") {
        Hyperparams h2 = tiny_config();
        Eigen::MatrixXd w(3, 2);
        w << 1.0, -1.0, 2.0, 0.0, 0.5, 0.5;
        const auto series = initial_factor_series(w, h2, nullptr);
        CHECK(series(0) == 0.0);
        CHECK(series(1) == 1.0);
        CHECK(series(2) == 0.5);
    }
    SECTION("a supplied series replaces the mean") {
        Hyperparams h2 = tiny_config();
        h2.factor_init = FactorInit::External;
        Eigen::VectorXd ext(3);
        ext << 0.3, -0.1, 0.9;
        Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 2);
        CHECK(initial_factor_series(w, h2, &ext) == ext);
        h2.factor_init = FactorInit::Variable;
        h2.init_variable = 1;
        CHECK(initial_factor_series(w, h2, nullptr) == w.col(1));
    }
}

TEST_CASE("attention head softmax arithmetic") {
    SECTION("hand case with logits ((0, ln3), (0, 0))") {
        Eigen::MatrixXd q(2, 1), k(2, 1), v(2, 1);
        q << 1.0, 0.0;
        k << 0.0, std::log(3.0);
        v << 10.0, 20.0;
        const auto [scores, out] = attention_head(q, k, v);
        CHECK(scores(0, 0) == Catch::Approx(0.25));
        CHECK(scores(0, 1) == Catch::Approx(0.75));
        CHECK(scores(1, 0) == Catch::Approx(0.5));
        CHECK(scores(1, 1) == Catch::Approx(0.5));
        CHECK(out(0, 0) == Catch::Approx(17.5));
    }
    SECTION("identical keys give uniform rows") {
        Rng rng(9);
        Eigen::MatrixXd q(3, 4), k(5, 4), v(5, 4);
        for (long r = 0; r < q.rows(); ++r)
            for (long c = 0; c < 4; ++c) q(r, c) = rng.normal();
        k = Eigen::MatrixXd::Ones(5, 4);
        v.setRandom();
        const auto [scores, out] = attention_head(q, k, v);
        for (long r = 0; r < 3; ++r)
            for (long c = 0; c < 5; ++c) CHECK(scores(r, c) == Catch::Approx(0.2));
    }
    SECTION("rows sum to one for random inputs") {
        Rng rng(10);
        Eigen::MatrixXd q(6, 4), k(9, 4), v(9, 4);
        for (auto* m : {&q, &k, &v})
            for (long r = 0; r < m->rows(); ++r)
                for (long c = 0; c < m->cols(); ++c) (*m)(r, c) = 2.0 * rng.normal();
        const auto [scores, out] = attention_head(q, k, v);
        for (long r = 0; r < scores.rows(); ++r)
            CHECK(scores.row(r).sum() == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("forward pass shapes and determinism") {
    const auto h = paper_config();
    const auto p = init_params(h, 7);
    Rng data_rng(2);
    const auto w = random_window(h, data_rng);

    Rng r1(0), r2(0);
    const auto a = forward(w, p, h, Mode::Infer, r1);
    const auto b = forward(w, p, h, Mode::Infer, r2);

    CHECK(a.x_hat.size() == 9);
    CHECK(a.y_hat_next.size() == 5);
    REQUIRE(a.state[0].attn.scores.size() == 4);
    CHECK(a.state[0].attn.scores[0].rows() == 9);
    CHECK(a.state[0].attn.scores[0].cols() == 45);
    CHECK(a.measurement[0].attn.scores[0].rows() == 45);
    CHECK(a.measurement[0].attn.scores[0].cols() == 9);
    CHECK(a.x_hat == b.x_hat);
    CHECK(a.y_hat_next == b.y_hat_next);

    // Every attention row is a probability vector.
    for (const auto& enc : {a.initial, a.state[0], a.measurement[0]})
        for (const auto& s : enc.attn.scores)
            for (long r = 0; r < s.rows(); ++r) {
                CHECK(s.row(r).minCoeff() >= 0.0);
                CHECK(s.row(r).sum() == Catch::Approx(1.0).margin(1e-6));
            }
}

TEST_CASE("zeroed output projections leave only the residual path") {
    const auto h = paper_config();
    auto p = init_params(h, 11);
    zero_output_projections(p);
    Rng rng(3);
    const auto w = random_window(h, rng);
    Rng idle(0);
    const auto tr = forward(w, p, h, Mode::Infer, idle);
    const Eigen::VectorXd expected = tr.x_init_emb * p.w_factor;
    CHECK((tr.x_hat - expected).cwiseAbs().maxCoeff() < 1e-14);
    // The Attn residual stage collapses onto the embedding stage.
    CHECK(tr.stage_attn() == tr.x_init_emb);
}

TEST_CASE("measurement attention is the only route from factor to predictions") {
    const auto h = paper_config();
    auto p = init_params(h, 13);
    for (auto& e : p.measurement) e.wo.setZero();
    Rng rng(4);
    const auto w = random_window(h, rng);

    Rng idle(0);
    const auto base = forward(w, p, h, Mode::Infer, idle);
    auto p2 = p;
    p2.w_factor = 3.7 * p.w_factor;   // changes x_hat, so K/V change too
    const auto moved = forward(w, p2, h, Mode::Infer, idle);
    CHECK((base.x_hat - moved.x_hat / 3.7).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(base.y_hat_next == moved.y_hat_next);
}

TEST_CASE("dropout masks zero a fraction and rescale survivors") {
    Rng rng(21);
    const auto mask = net::detail::dropout_mask(300, 200, 0.15, rng);
    long zeros = 0;
    for (long r = 0; r < mask.rows(); ++r)
        for (long c = 0; c < mask.cols(); ++c) {
            if (mask(r, c) == 0.0) ++zeros;
            else CHECK(mask(r, c) == Catch::Approx(1.0 / 0.85));
        }
    const double frac = static_cast<double>(zeros) / mask.size();
    CHECK(frac == Catch::Approx(0.15).margin(0.01));
    CHECK(mask.mean() == Catch::Approx(1.0).margin(0.01));   // inference expectation
}

TEST_CASE("train mode with dropout changes outputs, inference does not") {
    const auto h = paper_config();   // dropout 0.15
    const auto p = init_params(h, 17);
    Rng rng(5);
    const auto w = random_window(h, rng);
    Rng ra(1), rb(2);
    const auto a = forward(w, p, h, Mode::Train, ra);
    const auto b = forward(w, p, h, Mode::Train, rb);
    CHECK(a.x_hat != b.x_hat);
    Rng rc(3), rd(4);
    const auto c = forward(w, p, h, Mode::Infer, rc);
    const auto d = forward(w, p, h, Mode::Infer, rd);
    CHECK(c.x_hat == d.x_hat);
}

TEST_CASE("non-finite parameters are reported with the failing layer") {
    const auto h = tiny_config();
    auto p = init_params(h, 1);
    p.state[0].w1(0, 0) = std::numeric_limits<double>::infinity();
    Rng rng(6);
    Eigen::MatrixXd w = random_window(h, rng);
    Rng idle(0);
    try {
        forward(w, p, h, Mode::Infer, idle);
        FAIL("expected NumericOverflowError");
    } catch (const NumericOverflowError& e) {
        CHECK(std::string(e.what()).find("state encoder") != std::string::npos);
    }
}

TEST_CASE("checkpoints round-trip bitwise") {
    const auto h = tiny_config();
    const auto p = init_params(h, 23);
    const auto path = std::filesystem::temp_directory_path() / "dflab_test_ckpt.txt";
    save_checkpoint(p, h, path);
    const auto [q, h2] = load_checkpoint(path);
    CHECK(h2.lags == h.lags);
    CHECK(h2.d_model == h.d_model);
    bool equal = true;
    for_each_param(const_cast<TransformerParams&>(p), [&](const std::string& name, Eigen::MatrixXd& m, ParamKind) {
        for_each_param(const_cast<TransformerParams&>(q), [&](const std::string& name2, Eigen::MatrixXd& m2, ParamKind) {
            if (name == name2 && m != m2) equal = false;
        });
    });
    CHECK(equal);
    std::filesystem::remove(path);
}

TEST_CASE("loss mixes prior and prediction errors") {
    const auto h = tiny_config();
    const auto p = init_params(h, 2);
    Rng rng(3);
    const auto w = random_window(h, rng);
    Rng idle(0);
    const auto tr = forward(w, p, h, Mode::Infer, idle);

    SECTION("hand arithmetic: PI 0.2, PE 0.4, lambda 0.6 gives 0.28") {
        // Construct targets at exact distances from the outputs.
        Eigen::VectorXd prior = tr.x_hat.array() + 0.2;
        Eigen::VectorXd target = tr.y_hat_next.array() - 0.4;
        CHECK(loss(tr, target, prior, 0.6) == Catch::Approx(0.28).margin(1e-12));
    }
    SECTION("boundaries") {
        Eigen::VectorXd prior = tr.x_hat.array() + 1.0;
        Eigen::VectorXd target = tr.y_hat_next;
        CHECK(loss(tr, target, prior, 1.0) == Catch::Approx(1.0));
        CHECK(loss(tr, target, prior, 0.0) == Catch::Approx(0.0));
        CHECK(loss(tr, tr.y_hat_next, tr.x_hat, 0.37) == 0.0);
    }
}
