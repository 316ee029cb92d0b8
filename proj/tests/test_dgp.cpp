#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "dflab/dgp.hpp"

using namespace dflab;
using namespace dflab::dgp;

TEST_CASE("spow identity and symmetry") {
    CHECK(spow(4.0, 1.0, 1.0, 0.0) == Catch::Approx(4.0));
    // Odd symmetry holds exactly, including the smoothing term.
    CHECK(spow(-4.0, 0.8, 2.0) == -spow(4.0, 0.8, 2.0));
    CHECK(spow(0.0, 0.8, 2.0) == 0.0);
}

TEST_CASE("spow matches the smoothed power formula") {
    // Direct evaluation of c*(( |z/c| + eps)^g - eps^g) at z=2, g=0.8, c=2.
    const double expected = 2.0 * (std::pow(1.0 + 1e-4, 0.8) - std::pow(1e-4, 0.8));
    CHECK(spow(2.0, 0.8, 2.0, 1e-4) == Catch::Approx(expected).epsilon(1e-12));
    CHECK(expected == Catch::Approx(1.99890).margin(5e-5));
}

TEST_CASE("spow is strictly increasing and continuous") {
    SpowParams p{0.55, 0.77, 1e-4};
    double prev = spow(-3.0, p);
    for (double z = -2.99; z <= 3.0; z += 0.01) {
        const double v = spow(z, p);
        CHECK(v > prev);
        prev = v;
    }
    // No jump across zero.
    CHECK(std::fabs(spow(1e-12, p) - spow(-1e-12, p)) < 1e-9);
}

TEST_CASE("sample_shock hits the target moments") {
    const int n = 1'000'000;
    Rng rng(42);

    SECTION("gaussian") {
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = sample_shock(gaussian_shock(), 1.0, rng);
            s += v;
            s2 += v * v;
        }
        const double var = s2 / n - (s / n) * (s / n);
        CHECK(var == Catch::Approx(1.0).epsilon(0.01));
    }
    SECTION("student t rescaled by sqrt((df-2)/df)") {
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = sample_shock(t_shock(10), 1.0, rng);
            s += v;
            s2 += v * v;
        }
        const double var = s2 / n - (s / n) * (s / n);
        CHECK(var == Catch::Approx(1.0).epsilon(0.01));
    }
    SECTION("skew t standardized by its analytic moments") {
        double s = 0.0, s2 = 0.0, s3 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = sample_shock(skew_t_shock(10, -2), 1.0, rng);
            s += v;
            s2 += v * v;
            s3 += v * v * v;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        const double skew = (s3 / n - 3 * mean * var - mean * mean * mean) / std::pow(var, 1.5);
        CHECK(std::fabs(mean) < 0.01);
        CHECK(var == Catch::Approx(1.0).epsilon(0.01));
        CHECK(skew < -0.2);
    }
}

TEST_CASE("sample_shock rejects unsupported descriptors") {
    Rng rng(1);
    CHECK_THROWS_AS(sample_shock(t_shock(2.0), 1.0, rng), ConfigError);
    CHECK_THROWS_AS(sample_shock(gaussian_shock(), -1.0, rng), ConfigError);
    CHECK_THROWS_AS(sample_shock(skew_t_shock(10, 0.0), 1.0, rng), ConfigError);
}

TEST_CASE("two-piece t analytic moments agree with sampling") {
    TwoPieceT tp(10.0, 0.5);
    Rng rng(7);
    const int n = 400'000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = tp.draw(rng);
        s += v;
        s2 += v * v;
    }
    CHECK(s / n == Catch::Approx(tp.mean).margin(0.01));
    CHECK(std::sqrt(s2 / n - (s / n) * (s / n)) == Catch::Approx(tp.sd).epsilon(0.01));
}

TEST_CASE("build_covariance base cases") {
    Rng rng(3);
    SECTION("identity") {
        const auto sigma = build_covariance({{1, 1, 1}, 0.0, 0.0}, rng);
        CHECK(sigma.isApprox(Eigen::MatrixXd::Identity(3, 3)));
    }
    SECTION("DRD arithmetic") {
        const auto sigma = build_covariance({{1, 2}, 0.3, 0.0}, rng);
        CHECK(sigma(0, 0) == 1.0);
        CHECK(sigma(1, 1) == 4.0);
        CHECK(sigma(0, 1) == Catch::Approx(0.6));
        CHECK(sigma(1, 0) == Catch::Approx(0.6));
    }
}

TEST_CASE("build_covariance is symmetric and PSD for random specs") {
    Rng rng(11);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> sds;
        const int k = 2 + static_cast<int>(rng.integer(6));
        for (int i = 0; i < k; ++i) sds.push_back(0.2 + 2.0 * rng.uniform());
        const auto sigma = build_covariance({sds, 0.3, 0.15}, rng);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
        CHECK(es.eigenvalues().minCoeff() >= -1e-10);
        for (int i = 0; i < k; ++i) CHECK(sigma(i, i) == sds[static_cast<std::size_t>(i)] * sds[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("simulate: no stochasticity collapses the factor to zero") {
    auto spec = make_process_spec(1);
    spec.sigma_x = 0.0;
    spec.sds.assign(5, 0.0);
    spec.n_obs = 1800;
    const auto ds = simulate(spec, 9);
    CHECK(ds.x_true.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate is bit-reproducible for a fixed seed") {
    auto spec = make_process_spec(3);
    spec.n_obs = 1800;
    const auto a = simulate(spec, 5);
    const auto b = simulate(spec, 5);
    CHECK(a.y == b.y);
    CHECK(a.x_true == b.x_true);
}

TEST_CASE("error covariance is shared across seeds of a process") {
    auto spec = make_process_spec(4);
    spec.n_obs = 1800;
    const auto a = simulate(spec, 1);
    const auto b = simulate(spec, 2);
    CHECK(a.sigma_y == b.sigma_y);
    CHECK(a.y != b.y);
}

TEST_CASE("process 2 with footnote parameters standardizes cleanly") {
    auto spec = make_process_spec(2);
    REQUIRE(spec.beta == std::vector<double>{0.58, 1.56, 1.62, 1.23, 1.18});
    REQUIRE(spec.gamma_exp == std::vector<double>{0.55, 1.37, 0.57, 1.48, 0.61});
    REQUIRE(spec.c_y == 0.77);
    const auto ds = simulate(spec, 12);
    REQUIRE(ds.k() == 5);
    REQUIRE(ds.n() == 1800);
    for (int i = 0; i < 5; ++i) {
        CHECK(std::fabs(ds.y.col(i).mean()) < 1e-10);
        const double sd = std::sqrt(ds.y.col(i).squaredNorm() / ds.n() -
                                    ds.y.col(i).mean() * ds.y.col(i).mean());
        CHECK(sd == Catch::Approx(1.0).margin(1e-10));
    }
}

TEST_CASE("all six processes simulate with finite standardized output") {
    for (int id = 1; id <= 6; ++id) {
        auto spec = make_process_spec(id);
        spec.n_obs = 1800;
        const auto ds = simulate(spec, 2);
        CHECK(ds.y.allFinite());
        CHECK(ds.x_true.allFinite());
        if (id == 6) CHECK(ds.regime.size() == static_cast<std::size_t>(ds.n()));
    }
}

TEST_CASE("split boundaries") {
    SECTION("paper defaults") {
        const auto s = split(1800);
        CHECK(s.train_end == 640);
        CHECK(s.val_end == 800);
        CHECK(s.test_begin == 800);
        CHECK(s.test_end == 1800);
    }
    SECTION("too short") { CHECK_THROWS_AS(split(1799), ConfigError); }
    SECTION("test occupies the last indices") {
        const auto s = split(2000);
        CHECK(s.test_begin == 1000);
        CHECK(s.test_end == 2000);
    }
}

TEST_CASE("process 6 regime switch frequencies match the transition probabilities") {
    auto spec = make_process_spec(6);
    spec.n_obs = 100000;
    const auto ds = simulate(spec, 21);
    long n00 = 0, n01 = 0, n10 = 0, n11 = 0;
    for (std::size_t t = 1; t < ds.regime.size(); ++t) {
        if (ds.regime[t - 1] == 0)
            (ds.regime[t] == 1 ? n01 : n00)++;
        else
            (ds.regime[t] == 0 ? n10 : n11)++;
    }
    const double p01 = static_cast<double>(n01) / (n00 + n01);
    const double p10 = static_cast<double>(n10) / (n10 + n11);
    CHECK(p01 > 0.03 * 0.7);
    CHECK(p01 < 0.03 * 1.3);
    CHECK(p10 > 0.01 * 0.7);
    CHECK(p10 < 0.01 * 1.3);
}

TEST_CASE("dataset CSV export shape") {
    auto spec = make_process_spec(6);
    spec.n_obs = 1800;
    const auto ds = simulate(spec, 4);
    const auto path = std::filesystem::temp_directory_path() / "dflab_test_dataset.csv";
    write_dataset_csv(ds, path);
    const auto table = csv::read_file(path);
    REQUIRE(table.header ==
            std::vector<std::string>{"t", "y1", "y2", "y3", "y4", "y5", "x_true", "regime"});
    CHECK(table.rows.size() == 1800);
    std::filesystem::remove(path);
}
