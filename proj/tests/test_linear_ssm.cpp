#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Cholesky>
#include <cmath>
#include <filesystem>

#include "dflab/dgp.hpp"
#include "dflab/linear_ssm.hpp"

using namespace dflab;
using namespace dflab::ssm;

namespace {

LinearSSMParams scalar_params(double alpha, double sigma_x, double beta, double r, double mu_x = 0.0,
                              double mu_y = 0.0) {
    LinearSSMParams p;
    p.mu_x = mu_x;
    p.alpha = alpha;
    p.sigma_x = sigma_x;
    p.mu_y = Eigen::VectorXd::Constant(1, mu_y);
    p.beta = Eigen::VectorXd::Constant(1, beta);
    p.R = Eigen::MatrixXd::Constant(1, 1, r);
    return p;
}

/// Joint density of the stacked observations under the stationary state law;
/// independent of the filtering recursion.
double brute_force_loglik(const LinearSSMParams& p, const Eigen::MatrixXd& y) {
    const long n = y.rows();
    const int k = static_cast<int>(y.cols());
    const double mean_x = p.mu_x / (1.0 - p.alpha);
    const double var_x = p.sigma_x * p.sigma_x / (1.0 - p.alpha * p.alpha);

    Eigen::VectorXd mean(n * k);
    Eigen::MatrixXd cov(n * k, n * k);
    for (long t = 0; t < n; ++t)
        for (int i = 0; i < k; ++i) {
            mean(t * k + i) = p.mu_y(i) + p.beta(i) * mean_x;
            for (long s = 0; s < n; ++s)
                for (int j = 0; j < k; ++j) {
                    double c = p.beta(i) * p.beta(j) * var_x * std::pow(p.alpha, std::abs(t - s));
                    if (t == s) c += p.R(i, j);
                    cov(t * k + i, s * k + j) = c;
                }
        }

    Eigen::VectorXd stacked(n * k);
    for (long t = 0; t < n; ++t)
        for (int i = 0; i < k; ++i) stacked(t * k + i) = y(t, i);

    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    REQUIRE(llt.info() == Eigen::Success);
    const Eigen::VectorXd z = llt.matrixL().solve(stacked - mean);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (n * k * std::log(2.0 * M_PI) + log_det + z.squaredNorm());
}

} // namespace

TEST_CASE("kalman filter tracks exactly observed states") {
    const auto p = scalar_params(0.5, 1.0, 1.0, 1e-14);
    Eigen::MatrixXd y(5, 1);
    y << 0.3, -0.2, 0.9, 0.1, -0.5;
    const auto out = kalman_filter(p, y);
    for (int t = 0; t < 5; ++t) CHECK(out.filtered_mean(t) == Catch::Approx(y(t, 0)).margin(1e-6));
}

TEST_CASE("kalman filter pins a deterministic state at zero") {
    const auto p = scalar_params(0.5, 1e-9, 1.0, 1.0);
    Eigen::MatrixXd y(6, 1);
    y << 1.0, -1.0, 2.0, 0.5, -0.7, 0.3;
    const auto out = kalman_filter(p, y);
    CHECK(out.filtered_mean.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("three-period hand recursion matches to 1e-12") {
    const auto p = scalar_params(0.5, 1.0, 1.0, 1.0);
    Eigen::MatrixXd y(3, 1);
    y << 1.0, 0.0, -1.0;
    const auto out = kalman_filter(p, y);

    // Stationary prior m=0, v=4/3; worked recursion in exact fractions.
    CHECK(out.filtered_mean(0) == Catch::Approx(4.0 / 7.0).margin(1e-12));
    CHECK(out.filtered_mean(1) == Catch::Approx(2.0 / 15.0).margin(1e-12));
    CHECK(out.filtered_mean(2) == Catch::Approx(-0.5).margin(1e-12));
    CHECK(out.filtered_var(0) == Catch::Approx(4.0 / 7.0).margin(1e-12));
    CHECK(out.filtered_var(1) == Catch::Approx(8.0 / 15.0).margin(1e-12));
    CHECK(out.filtered_var(2) == Catch::Approx(17.0 / 32.0).margin(1e-12));
    const double expected_ll = -0.5 * (3.0 * std::log(2.0 * M_PI) + std::log(32.0 / 3.0) + 1.0);
    CHECK(out.loglik == Catch::Approx(expected_ll).margin(1e-12));
}

TEST_CASE("loglik equals the brute-force joint Gaussian density") {
    Rng rng(31);
    for (int rep = 0; rep < 5; ++rep) {
        LinearSSMParams p;
        p.mu_x = rng.uniform(-0.5, 0.5);
        p.alpha = rng.uniform(0.3, 0.95);
        p.sigma_x = rng.uniform(0.5, 1.5);
        p.mu_y.resize(2);
        p.beta.resize(2);
        for (int i = 0; i < 2; ++i) {
            p.mu_y(i) = rng.uniform(-1, 1);
            p.beta(i) = rng.uniform(0.3, 1.7);
        }
        Eigen::MatrixXd l(2, 2);
        l << rng.uniform(0.5, 1.0), 0.0, rng.uniform(-0.3, 0.3), rng.uniform(0.5, 1.0);
        p.R = l * l.transpose();

        const long n = 4 + rep % 3;
        Eigen::MatrixXd y(n, 2);
        for (long t = 0; t < n; ++t)
            for (int i = 0; i < 2; ++i) y(t, i) = rng.normal();

        CHECK(loglik(p, y) == Catch::Approx(brute_force_loglik(p, y)).margin(1e-8));
    }
}

TEST_CASE("consistent rescaling changes loglik by the Jacobian term") {
    Rng rng(8);
    LinearSSMParams p;
    p.mu_x = 0.1;
    p.alpha = 0.8;
    p.sigma_x = 1.0;
    p.mu_y.resize(3);
    p.beta.resize(3);
    for (int i = 0; i < 3; ++i) {
        p.mu_y(i) = rng.uniform(-1, 1);
        p.beta(i) = rng.uniform(0.3, 1.7);
    }
    p.R = Eigen::MatrixXd::Identity(3, 3) * 0.5;

    Eigen::MatrixXd y(40, 3);
    for (long t = 0; t < 40; ++t)
        for (int i = 0; i < 3; ++i) y(t, i) = rng.normal();

    const double c = 2.5;
    LinearSSMParams q = p;
    q.mu_y *= c;
    q.beta *= c;
    q.R *= c * c;
    const double ll = loglik(p, y);
    const double ll_scaled = loglik(q, c * y);
    CHECK(ll_scaled == Catch::Approx(ll - 40.0 * 3.0 * std::log(c)).margin(1e-8));

    // The state estimate itself is unchanged by the consistent rescaling.
    const auto f1 = kalman_filter(p, y);
    const auto f2 = kalman_filter(q, c * y);
    CHECK((f1.filtered_mean - f2.filtered_mean).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("loglik peaks near the true alpha on a long sample") {
    auto spec = dgp::make_process_spec(1);
    spec.n_obs = 5000;
    const auto ds = dgp::simulate(spec, 3);
    const auto truth = standardize_params(kalman_max(spec), ds.col_mean, ds.col_sd);
    const double at_truth = loglik(truth, ds.y);
    for (double d : {-0.2, 0.2}) {
        LinearSSMParams q = truth;
        q.alpha = std::min(0.999, std::max(0.0, truth.alpha + d));
        CHECK(at_truth >= loglik(q, ds.y));
    }
}

TEST_CASE("filtered variance is positive and reaches a steady state") {
    const auto p = scalar_params(0.9, 0.7, 1.2, 0.8);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(200, 1);
    const auto out = kalman_filter(p, y);
    CHECK(out.filtered_var.minCoeff() > 0.0);
    CHECK(std::fabs(out.filtered_var(199) - out.filtered_var(198)) < 1e-12);
}

TEST_CASE("MLE with fixed measurement reduces to AR(1) least squares") {
    // y_t = x_t with R = 0, beta = 1: the likelihood is the AR(1) likelihood.
    Rng rng(17);
    const long n = 2000;
    Eigen::MatrixXd y(n, 1);
    double x = 0.0;
    for (long t = 0; t < n; ++t) {
        x = 0.7 * x + rng.normal();
        y(t, 0) = x;
    }
    double num = 0.0, den = 0.0;
    const double m = y.col(0).mean();
    for (long t = 1; t < n; ++t) {
        num += (y(t, 0) - m) * (y(t - 1, 0) - m);
        den += (y(t - 1, 0) - m) * (y(t - 1, 0) - m);
    }
    const double ols_slope = num / den;

    LinearSSMParams init = scalar_params(0.5, 1.0, 1.0, 0.0);
    EstimateOptions opts;
    opts.fix_R = true;
    opts.fix_loadings = true;
    const auto res = estimate_mle(y, init, opts);
    CHECK(res.params.alpha == Catch::Approx(ols_slope).margin(1e-3));
}

TEST_CASE("MLE recovers the persistence of process 1") {
    auto spec = dgp::make_process_spec(1);
    spec.n_obs = 1800;
    double total_err = 0.0;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const auto ds = dgp::simulate(spec, seed);
        const Eigen::MatrixXd y = ds.y.topRows(800);
        const auto res = estimate_mle(y, heuristic_init(y));
        total_err += res.params.alpha - 0.96;
    }
    CHECK(std::fabs(total_err / 5.0) < 0.05);
}

TEST_CASE("MLE is deterministic and never worsens its start point") {
    auto spec = dgp::make_process_spec(1);
    spec.n_obs = 1800;
    const auto ds = dgp::simulate(spec, 6);
    const Eigen::MatrixXd y = ds.y.topRows(200);
    const auto init = heuristic_init(y);
    const auto a = estimate_mle(y, init);
    const auto b = estimate_mle(y, init);
    CHECK(a.loglik == b.loglik);
    CHECK(a.params.alpha == b.params.alpha);
    CHECK(a.loglik >= loglik(init, y));
}

TEST_CASE("kalman_max maps the linear part of the DGP") {
    SECTION("process 1 is the identity mapping") {
        const auto spec = dgp::make_process_spec(1);
        const auto p = kalman_max(spec);
        CHECK(p.alpha == 0.96);
        CHECK(p.sigma_x == spec.sigma_x);
        for (int i = 0; i < 5; ++i) {
            CHECK(p.beta(i) == spec.beta[static_cast<std::size_t>(i)]);
            CHECK(p.mu_y(i) == spec.mu_y[static_cast<std::size_t>(i)]);
        }
        CHECK(p.R == dgp::process_sigma_y(spec));
    }
    SECTION("process 2 keeps the state block and loadings") {
        const auto spec = dgp::make_process_spec(2);
        const auto p = kalman_max(spec);
        CHECK(p.alpha == 0.96);
        CHECK(p.sigma_x == spec.sigma_x);
        CHECK(p.beta(1) == 1.56);
    }
    SECTION("process 4 uses the same mapping") {
        const auto spec = dgp::make_process_spec(4);
        const auto p = kalman_max(spec);
        CHECK(p.alpha == 0.96);
        CHECK(p.sigma_x == 0.65);
    }
    SECTION("undefined beyond process 4") {
        CHECK_THROWS_AS(kalman_max(dgp::make_process_spec(5)), ConfigError);
    }
}

TEST_CASE("parameter files round-trip") {
    LinearSSMParams p;
    p.mu_x = 0.05;
    p.alpha = 0.83;
    p.sigma_x = 0.4;
    p.mu_y.resize(2);
    p.beta.resize(2);
    p.mu_y << 0.1, -0.4;
    p.beta << 1.2, 0.7;
    p.R.resize(2, 2);
    p.R << 1.0, 0.2, 0.2, 0.8;
    const auto path = std::filesystem::temp_directory_path() / "dflab_test_params.txt";
    write_params(p, path);
    const auto q = read_params(path);
    CHECK(q.alpha == p.alpha);
    CHECK(q.sigma_x == p.sigma_x);
    CHECK(q.mu_y == p.mu_y);
    CHECK(q.beta == p.beta);
    CHECK(q.R == p.R);
    std::filesystem::remove(path);
}

TEST_CASE("degenerate innovation covariance raises") {
    auto p = scalar_params(0.5, 1.0, 0.0, 0.0);   // S = 0 exactly
    Eigen::MatrixXd y(3, 1);
    y << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(kalman_filter(p, y), FilterDegenerateError);
}
