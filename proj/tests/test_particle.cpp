#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dflab/dgp.hpp"
#include "dflab/linear_ssm.hpp"
#include "dflab/particle_filter.hpp"

using namespace dflab;
using namespace dflab::pf;

TEST_CASE("effective sample size") {
    CHECK(ess(std::vector<double>(100, 0.01)) == Catch::Approx(100.0));
    std::vector<double> point{1.0, 0.0, 0.0};
    CHECK(ess(point) == Catch::Approx(1.0));
    std::vector<double> mixed{0.5, 0.25, 0.25};
    CHECK(ess(mixed) == Catch::Approx(1.0 / 0.375));
}

TEST_CASE("systematic resampling sweeps the cumulative weights") {
    SECTION("even weights keep one copy of each") {
        // Sweep positions 0.05 and 0.55 against cdf (0.5, 1.0).
        const auto idx = systematic_resample({0.5, 0.5}, 0.1);
        REQUIRE(idx == std::vector<int>{0, 1});
    }
    SECTION("a unit weight absorbs all indices") {
        const auto idx = systematic_resample({1.0, 0.0, 0.0, 0.0}, 0.7);
        for (int i : idx) CHECK(i == 0);
    }
    SECTION("copy counts stay within one of Np * w") {
        Rng rng(5);
        for (int rep = 0; rep < 20; ++rep) {
            const int np = 50;
            std::vector<double> w(np);
            double sum = 0.0;
            for (auto& v : w) {
                v = rng.uniform();
                sum += v;
            }
            for (auto& v : w) v /= sum;
            const auto idx = systematic_resample(w, rng.uniform());
            REQUIRE(idx.size() == static_cast<std::size_t>(np));
            std::vector<int> count(np, 0);
            for (int i : idx) count[static_cast<std::size_t>(i)]++;
            for (int j = 0; j < np; ++j)
                CHECK(std::fabs(count[static_cast<std::size_t>(j)] - np * w[static_cast<std::size_t>(j)]) < 1.0);
        }
    }
}

TEST_CASE("oracle on the linear-Gaussian process approaches the Kalman mean") {
    auto spec = dgp::make_process_spec(1);
    spec.n_obs = 1800;
    auto ds = dgp::simulate(spec, 2);
    const long n = 500;
    ds.y.conservativeResize(n, ds.k());
    ds.x_true.conservativeResize(n);

    const auto truth = ssm::standardize_params(ssm::kalman_max(spec), ds.col_mean, ds.col_sd);
    const Eigen::VectorXd kalman = ssm::kalman_filter(truth, ds.y).filtered_mean;

    APFOptions small;
    small.n_particles = 500;
    APFOptions big;
    big.n_particles = 20000;
    const Eigen::VectorXd apf_small = apf_filter(ds, small, 99);
    const Eigen::VectorXd apf_big = apf_filter(ds, big, 99);

    const double rmse_small = std::sqrt((apf_small - kalman).squaredNorm() / n);
    const double rmse_big = std::sqrt((apf_big - kalman).squaredNorm() / n);
    CHECK(rmse_big < 0.05);
    CHECK(rmse_big < rmse_small);
}

TEST_CASE("single particle reduces to one propagated trajectory") {
    auto spec = dgp::make_process_spec(1);
    spec.n_obs = 1800;
    auto ds = dgp::simulate(spec, 3);
    ds.y.conservativeResize(50, ds.k());

    APFOptions opts;
    opts.n_particles = 1;
    const Eigen::VectorXd est = apf_filter(ds, opts, 7);

    // Replay the same seed: spin-up then one transition per period.
    Rng rng(7, 0x9f7u);
    dgp::ProcessState st;
    for (int t = 0; t < opts.spin_up; ++t) {
        const int r = dgp::draw_regime(spec, st.regime, rng);
        const double eps = dgp::sample_shock(dgp::state_shock_dist(spec, r), spec.sigma_x * spec.sigma_x, rng);
        dgp::push_state(st, dgp::state_mean(spec, st, r) + eps, eps, r);
    }
    for (long t = 0; t < 50; ++t) {
        rng.uniform();   // resampling offset
        rng.normal();    // roughening draw, scaled by a zero spread
        const int r = dgp::draw_regime(spec, st.regime, rng);
        const double eps = dgp::sample_shock(dgp::state_shock_dist(spec, r), spec.sigma_x * spec.sigma_x, rng);
        const double x_t = dgp::state_mean(spec, st, r) + eps;
        dgp::push_state(st, x_t, eps, r);
        CHECK(est(t) == Catch::Approx(x_t).margin(1e-12));
    }
}

TEST_CASE("oracle is deterministic for a fixed seed") {
    auto spec = dgp::make_process_spec(4);
    spec.n_obs = 1800;
    auto ds = dgp::simulate(spec, 5);
    ds.y.conservativeResize(80, ds.k());
    APFOptions opts;
    opts.n_particles = 300;
    const auto a = apf_filter(ds, opts, 1);
    const auto b = apf_filter(ds, opts, 1);
    CHECK(a == b);
}

TEST_CASE("oracle runs every process family") {
    for (int id : {2, 3, 5, 6}) {
        auto spec = dgp::make_process_spec(id);
        spec.n_obs = 1800;
        auto ds = dgp::simulate(spec, 1);
        ds.y.conservativeResize(60, ds.k());
        APFOptions opts;
        opts.n_particles = 200;
        const auto est = apf_filter(ds, opts, 11);
        CHECK(est.allFinite());
    }
}
