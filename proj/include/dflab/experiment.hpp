#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dflab/common.hpp"
#include "dflab/config.hpp"
#include "dflab/csv.hpp"
#include "dflab/dataio.hpp"
#include "dflab/dgp.hpp"
#include "dflab/eval.hpp"
#include "dflab/interpret.hpp"
#include "dflab/linear_ssm.hpp"
#include "dflab/net.hpp"
#include "dflab/particle_filter.hpp"
#include "dflab/train.hpp"

namespace dflab::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Parsed experiment settings
// ---------------------------------------------------------------------------

struct Settings {
    config::Config raw;
    std::string mode;                    // simulate | empirical
    int process = 0;
    std::vector<std::uint64_t> seeds;
    net::Hyperparams hyper;
    train::TrainConfig tcfg;
    std::vector<double> lambda_set;      // one entry unless an ablation is requested
    fs::path out = "out";
    int jobs = 1;
    bool allow_network = false;

    long n_obs = 1800, train_total = 800, test_len = 1000;
    double val_frac = 0.2;

    int np = 10000;
    double ess_threshold = 0.5, roughening = 0.05;
    int mle_max_evals = 2000;

    long snapshot_t = -1;
    int tentacle_steps = 20, tentacle_stride = 25;
    bool per_head = false;

    fs::path data_production, data_sales, data_income, data_hours, split_file, recessions_file;
};

namespace detail {

inline fs::path resolve_data_path(const std::string& value) {
    fs::path p(value);
    if (p.is_absolute() || fs::exists(p)) return p;
#ifdef DFLAB_DATA_DIR
    const fs::path bundled = fs::path(DFLAB_DATA_DIR) / p;
    if (fs::exists(bundled)) return bundled;
#endif
    return p;
}

inline std::string lambda_tag(double lambda) { return "lambda_" + csv::format_double(lambda); }

} // namespace detail

inline Settings parse_settings(const config::Config& cfg) {
    Settings s;
    s.raw = cfg;
    s.mode = cfg.get("mode");
    if (s.mode != "simulate" && s.mode != "empirical")
        throw ConfigError("mode must be 'simulate' or 'empirical'");

    s.hyper.lags = static_cast<int>(cfg.get_int("lags"));
    s.hyper.d_model = static_cast<int>(cfg.get_int("d_model"));
    s.hyper.n_heads = static_cast<int>(cfg.get_int("heads"));
    s.hyper.d_head = static_cast<int>(cfg.get_int("d_head"));
    s.hyper.d_ff = static_cast<int>(cfg.get_int("d_ff"));
    s.hyper.depth = static_cast<int>(cfg.get_int("depth"));
    s.hyper.dropout = cfg.get_double("dropout");
    s.hyper.enc_scale = cfg.get_double("enc_scale");
    s.hyper.sinusoidal_pos = cfg.get_bool("sinusoidal_pos");
    const std::string init = cfg.get("factor_init");
    if (init == "mean") {
        s.hyper.factor_init = net::FactorInit::Mean;
    } else if (init == "prior") {
        s.hyper.factor_init = net::FactorInit::External;
    } else if (init.size() > 1 && init[0] == 'y') {
        s.hyper.factor_init = net::FactorInit::Variable;
        s.hyper.init_variable = std::stoi(init.substr(1)) - 1;
    } else {
        throw ConfigError("factor_init must be 'mean', 'prior' or 'y<i>'");
    }

    s.tcfg.batch = static_cast<int>(cfg.get_int("batch"));
    s.tcfg.lr = cfg.get_double("lr");
    s.tcfg.t0 = static_cast<int>(cfg.get_int("t0"));
    s.tcfg.warmup = static_cast<int>(cfg.get_int("warmup"));
    s.tcfg.max_epochs = static_cast<int>(cfg.get_int("max_epochs"));
    s.tcfg.patience = static_cast<int>(cfg.get_int("patience"));
    s.tcfg.weight_decay = cfg.get_double("weight_decay");
    s.tcfg.lambda = cfg.get_double("lambda");
    s.tcfg.runs = static_cast<int>(cfg.get_int("runs"));
    s.tcfg.record_test_fit = cfg.get_bool("record_test_fit");

    if (cfg.has("lambda_set")) s.lambda_set = cfg.get_list("lambda_set");
    else s.lambda_set = {s.tcfg.lambda};

    s.jobs = static_cast<int>(cfg.get_int("jobs"));
    s.out = cfg.get_or("out", "out");
    s.seeds = cfg.get_seed_list("seeds");
    s.tcfg.seed = s.seeds.front();

    s.np = static_cast<int>(cfg.get_int("np"));
    s.ess_threshold = cfg.get_double("ess_threshold");
    s.roughening = cfg.get_double("roughening");
    s.mle_max_evals = static_cast<int>(cfg.get_int("mle_max_evals"));
    s.snapshot_t = cfg.get_int("snapshot_t");
    s.tentacle_steps = static_cast<int>(cfg.get_int("tentacle_steps"));
    s.tentacle_stride = static_cast<int>(cfg.get_int("tentacle_stride"));
    s.per_head = cfg.has("per_head") && cfg.get_bool("per_head");

    if (s.mode == "simulate") {
        s.process = static_cast<int>(cfg.get_int("process"));
        s.n_obs = cfg.get_int("n_obs");
        s.train_total = cfg.get_int("train_total");
        s.test_len = cfg.get_int("test");
        s.val_frac = cfg.get_double("val_frac");
        s.hyper.vars = 5;
    } else {
        s.data_production = detail::resolve_data_path(cfg.get("data_production"));
        s.data_sales = detail::resolve_data_path(cfg.get("data_sales"));
        s.data_income = detail::resolve_data_path(cfg.get("data_income"));
        s.data_hours = detail::resolve_data_path(cfg.get("data_hours"));
        s.split_file = detail::resolve_data_path(cfg.get("split_file"));
        s.recessions_file = detail::resolve_data_path(cfg.get("recessions_file"));
        s.hyper.vars = 4;
    }
    s.hyper.validate();
    s.tcfg.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

inline void write_manifest(const Settings& s, const std::string& command) {
    fs::create_directories(s.out);
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["config_hash"] = s.raw.hash();
    m["seeds"] = s.seeds;
    m["config"] = s.raw.values();
    std::ofstream out(s.out / ("manifest_" + command + ".json"));
    out << m.dump(2) << '\n';
}

inline fs::path seed_dir(const Settings& s, std::uint64_t seed) {
    return s.out / ("seed_" + std::to_string(seed));
}

inline dgp::DGPSpec spec_for(const Settings& s) {
    dgp::DGPSpec spec = dgp::make_process_spec(s.process);
    spec.n_obs = static_cast<int>(s.n_obs);
    return spec;
}

inline dgp::SimulatedDataset dataset_for(const Settings& s, std::uint64_t seed) {
    auto ds = dgp::simulate(spec_for(s), seed);
    ds.split = dgp::split(s.n_obs, s.train_total, s.test_len, s.val_frac);
    return ds;
}

inline Eigen::VectorXd read_column(const csv::Table& table, const std::string& name,
                                   const std::string& context) {
    const int col = table.column(name);
    if (col < 0) throw DataError("missing column '" + name + "' in " + context);
    Eigen::VectorXd v(static_cast<long>(table.rows.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r)
        v(static_cast<long>(r)) = csv::parse_double(table.rows[r][col], context);
    return v;
}

inline void write_factor_csv(const fs::path& path, const std::vector<std::string>& names,
                             long t_begin, const std::vector<const Eigen::VectorXd*>& cols) {
    csv::Writer w(path);
    std::vector<std::string> header = {"t"};
    header.insert(header.end(), names.begin(), names.end());
    w.row(header);
    const long n = cols.front()->size();
    for (long t = 0; t < n; ++t) {
        std::vector<std::string> row = {std::to_string(t_begin + t)};
        for (const auto* c : cols) row.push_back(csv::format_double((*c)(t)));
        w.row(row);
    }
}

/// Baselines are estimated once per seed and shared by training (prior),
/// evaluation and the acceptance checks.
struct BaselineSeries {
    ssm::LinearSSMParams kalman_params;
    Eigen::VectorXd kalman;       // filtered over the full span
    Eigen::VectorXd kalman_max;   // empty when undefined for the process
    Eigen::VectorXd oracle;
    Eigen::VectorXd mean_y;
};

inline BaselineSeries compute_baselines(const Settings& s, const dgp::SimulatedDataset& ds) {
    BaselineSeries b;
    const auto& sp = ds.split;

    ssm::EstimateOptions opts;
    opts.max_evals = s.mle_max_evals;
    const Eigen::MatrixXd y_insample = ds.y.topRows(sp.val_end);
    auto fitted = ssm::estimate_mle(y_insample, ssm::heuristic_init(y_insample), opts);
    b.kalman_params = fitted.params;
    b.kalman = ssm::kalman_filter(b.kalman_params, ds.y).filtered_mean;

    if (ds.spec.process_id <= 4) {
        const auto truth = ssm::standardize_params(ssm::kalman_max(ds.spec), ds.col_mean, ds.col_sd);
        b.kalman_max = ssm::kalman_filter(truth, ds.y).filtered_mean;
    }

    pf::APFOptions apf;
    apf.n_particles = s.np;
    apf.ess_threshold = s.ess_threshold;
    apf.roughening_scale = s.roughening;
    b.oracle = pf::apf_filter(ds, apf, splitmix64(ds.seed ^ 0x0aac1eULL));

    b.mean_y = ds.y.rowwise().mean();
    return b;
}

inline void write_baselines(const fs::path& dir, const BaselineSeries& b) {
    std::vector<std::string> names = {"x_kalman"};
    std::vector<const Eigen::VectorXd*> cols = {&b.kalman};
    if (b.kalman_max.size() > 0) {
        names.push_back("x_kalman_max");
        cols.push_back(&b.kalman_max);
    }
    names.push_back("x_oracle");
    cols.push_back(&b.oracle);
    names.push_back("x_mean");
    cols.push_back(&b.mean_y);
    write_factor_csv(dir / "baselines.csv", names, 0, cols);
    write_factor_csv(dir / "oracle.csv", {"x_oracle"}, 0, {&b.oracle});
    ssm::write_params(b.kalman_params, dir / "kalman_params.txt");
}

struct LoadedBaselines {
    Eigen::VectorXd kalman, kalman_max, oracle, mean_y;   // kalman_max may be empty
};

inline LoadedBaselines load_baselines(const fs::path& dir) {
    const fs::path file = dir / "baselines.csv";
    if (!fs::exists(file)) throw DataError("missing " + file.string() + "; run `baselines` first");
    const auto table = csv::read_file(file);
    LoadedBaselines b;
    b.kalman = read_column(table, "x_kalman", file.string());
    if (table.column("x_kalman_max") >= 0) b.kalman_max = read_column(table, "x_kalman_max", file.string());
    b.oracle = read_column(table, "x_oracle", file.string());
    b.mean_y = read_column(table, "x_mean", file.string());
    return b;
}

} // namespace detail

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline void cmd_simulate(const Settings& s) {
    if (s.mode != "simulate") throw ConfigError("cmd_simulate needs mode = simulate");
    detail::write_manifest(s, "simulate");
    for (auto seed : s.seeds) {
        const auto ds = detail::dataset_for(s, seed);
        const fs::path dir = detail::seed_dir(s, seed);
        fs::create_directories(dir);
        dgp::write_dataset_csv(ds, dir / "dataset.csv");
    }
}

// ---------------------------------------------------------------------------
// baselines
// ---------------------------------------------------------------------------

inline void cmd_baselines(const Settings& s) {
    if (s.mode != "simulate") throw ConfigError("cmd_baselines needs mode = simulate");
    detail::write_manifest(s, "baselines");
    for (auto seed : s.seeds) {
        const fs::path dir = detail::seed_dir(s, seed);
        if (!fs::exists(dir / "dataset.csv"))
            throw DataError("missing " + (dir / "dataset.csv").string() + "; run `simulate` first");
        const auto ds = detail::dataset_for(s, seed);
        const auto b = detail::compute_baselines(s, ds);
        detail::write_baselines(dir, b);
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace detail {

inline void write_history_csv(const fs::path& path, const train::TrainHistory& h, bool with_fit) {
    csv::Writer w(path);
    std::vector<std::string> header = {"epoch", "train_loss", "val_loss"};
    if (with_fit) header.push_back("test_fit");
    w.row(header);
    for (std::size_t e = 0; e < h.epochs.size(); ++e) {
        std::vector<std::string> row = {std::to_string(e + 1),
                                        csv::format_double(h.epochs[e].train_loss),
                                        csv::format_double(h.epochs[e].val_loss)};
        if (with_fit) row.push_back(csv::format_double(h.epochs[e].test_fit));
        w.row(row);
    }
}

/// Trains one ensemble and writes every run artifact plus the pointwise
/// mean. Returns the ensemble for further use.
inline train::Ensemble run_ensemble(const Settings& s, const fs::path& dir,
                                    const train::TrainData& data, const Eigen::MatrixXd& series,
                                    long span_begin, long span_end, double lambda) {
    train::TrainConfig cfg = s.tcfg;
    cfg.lambda = lambda;
    auto ens = train::train_ensemble(data, s.hyper, cfg, series, span_begin, span_end, s.jobs);

    fs::create_directories(dir);
    json meta;
    meta["lambda"] = lambda;
    int best_run = 0;
    for (int r = 0; r < cfg.runs; ++r) {
        const fs::path run_dir = dir / "runs" / ("run_" + std::to_string(r));
        fs::create_directories(run_dir);
        net::save_checkpoint(ens.runs[r].params, s.hyper, run_dir / "checkpoint.txt");
        write_history_csv(run_dir / "history.csv", ens.runs[r].history, cfg.record_test_fit);
        const Eigen::VectorXd col = ens.run_factors.col(r);
        write_factor_csv(run_dir / "factor.csv", {"x_hat"}, span_begin, {&col});
        meta["run_seeds"].push_back(ens.run_seeds[r]);
        meta["best_val_loss"].push_back(ens.runs[r].best_val_loss);
        meta["best_epoch"].push_back(ens.runs[r].history.best_epoch);
        meta["stop_reason"].push_back(ens.runs[r].history.stop_reason);
        if (ens.runs[r].best_val_loss < ens.runs[best_run].best_val_loss) best_run = r;
    }
    meta["best_run"] = best_run;
    std::ofstream(dir / "ensemble.json") << meta.dump(2) << '\n';

    std::vector<std::string> names = {"x_mean"};
    std::vector<const Eigen::VectorXd*> cols = {&ens.mean_factor};
    std::vector<Eigen::VectorXd> run_cols(cfg.runs);
    for (int r = 0; r < cfg.runs; ++r) {
        run_cols[r] = ens.run_factors.col(r);
        names.push_back("run_" + std::to_string(r));
        cols.push_back(&run_cols[r]);
    }
    write_factor_csv(dir / "factor_mean.csv", names, span_begin, cols);

    if (cfg.record_test_fit) {
        bool any = false;
        Eigen::MatrixXd fit_factors(span_end - span_begin, cfg.runs);
        for (int r = 0; r < cfg.runs; ++r) {
            if (ens.runs[r].params_fit_max.embed.size() == 0) continue;
            any = true;
            fit_factors.col(r) =
                train::factor_series(ens.runs[r].params_fit_max, s.hyper, series, span_begin, span_end);
        }
        if (any) {
            const Eigen::VectorXd mean = fit_factors.rowwise().mean();
            std::vector<const Eigen::VectorXd*> fcols = {&mean};
            std::vector<std::string> fnames = {"x_mean"};
            write_factor_csv(dir / "factor_fitmax_mean.csv", fnames, span_begin, fcols);
        }
    }
    return ens;
}

} // namespace detail

inline void cmd_train(const Settings& s) {
    if (s.mode != "simulate") throw ConfigError("cmd_train needs mode = simulate (see `coincident`)");
    detail::write_manifest(s, "train");
    for (auto seed : s.seeds) {
        const fs::path dir = detail::seed_dir(s, seed);
        const auto ds = detail::dataset_for(s, seed);
        const auto base = detail::load_baselines(dir);
        const auto& sp = ds.split;

        train::TrainData data;
        data.train = train::make_windows_in_range(ds.y, s.hyper.lags, base.kalman, 0, sp.train_end);
        data.val = train::make_windows_in_range(ds.y, s.hyper.lags, base.kalman, sp.train_end, sp.val_end);

        if (s.tcfg.record_test_fit) {
            // Fit against the scaled, estimated Kalman baseline on the test span.
            const Eigen::VectorXd x_true_ins = ds.x_true.head(sp.val_end);
            const auto sc_k = eval::fit_scaling(base.kalman.head(sp.val_end), x_true_ins);
            const Eigen::VectorXd k_test =
                eval::apply_scaling(sc_k, base.kalman.segment(sp.test_begin, s.test_len));
            const double mse_k = eval::mse(k_test, ds.x_true.segment(sp.test_begin, s.test_len));
            const auto hyper = s.hyper;
            const auto y = ds.y;
            const auto x_true = ds.x_true;
            data.test_fit = [=](const net::TransformerParams& p) {
                const Eigen::VectorXd ins =
                    train::factor_series(p, hyper, y, hyper.lags - 1, sp.val_end);
                const auto sc = eval::fit_scaling(ins, x_true.segment(hyper.lags - 1,
                                                                      sp.val_end - hyper.lags + 1));
                const Eigen::VectorXd test =
                    eval::apply_scaling(sc, train::factor_series(p, hyper, y, sp.test_begin, sp.test_end));
                const double m = eval::mse(test, x_true.segment(sp.test_begin, sp.test_end - sp.test_begin));
                return (mse_k - m) / mse_k * 100.0;
            };
        }

        for (double lambda : s.lambda_set) {
            train::TrainConfig cfg = s.tcfg;
            cfg.seed = seed;
            const fs::path target =
                s.lambda_set.size() == 1 ? dir : dir / detail::lambda_tag(lambda);
            Settings s_run = s;
            s_run.tcfg = cfg;
            detail::run_ensemble(s_run, target, data, ds.y, s.hyper.lags - 1, sp.test_end, lambda);
        }
    }
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace detail {

struct SeedEvaluation {
    eval::MetricsReport report;
    double loss_mean = 0.0;
};

inline json metrics_to_json(const eval::MetricsReport& r) {
    auto put = [](json& j, const char* key, double v) {
        if (eval::present(v)) j[key] = v;
        else j[key] = nullptr;
    };
    json j;
    put(j, "mse_transformer", r.mse_transformer);
    put(j, "mse_kalman", r.mse_kalman);
    put(j, "mse_kalman_max", r.mse_kalman_max);
    put(j, "mse_oracle", r.mse_oracle);
    put(j, "mse_mean_y", r.mse_mean_y);
    put(j, "r2_transformer", r.r2_transformer);
    put(j, "r2_kalman", r.r2_kalman);
    put(j, "r2_kalman_max", r.r2_kalman_max);
    put(j, "r2_oracle", r.r2_oracle);
    put(j, "r2_mean_y", r.r2_mean_y);
    put(j, "fit", r.fit);
    put(j, "fit_max", r.fit_max);
    put(j, "gain", r.gain);
    put(j, "corr", r.corr);
    put(j, "val_loss", r.val_loss);
    j["discarded"] = r.discarded;
    return j;
}

/// Scale on the in-sample span, score on the test span.
inline eval::MetricsReport evaluate_seed(const Settings& s, const dgp::SimulatedDataset& ds,
                                         const LoadedBaselines& base, const fs::path& ens_dir) {
    const auto& sp = ds.split;
    const long p1 = s.hyper.lags - 1;

    const auto mean_table = csv::read_file(ens_dir / "factor_mean.csv");
    const Eigen::VectorXd x_mean = read_column(mean_table, "x_mean", "factor_mean.csv");
    if (x_mean.size() != sp.test_end - p1)
        throw DataError("factor_mean.csv span mismatch in " + ens_dir.string());

    auto scaled_test = [&](const Eigen::VectorXd& series, long t0) {
        // series starts at absolute index t0 and covers through test_end
        const Eigen::VectorXd ins = series.segment(0, sp.val_end - t0);
        const auto sc = eval::fit_scaling(ins, ds.x_true.segment(t0, sp.val_end - t0));
        return eval::apply_scaling(sc, series.segment(sp.test_begin - t0, sp.test_end - sp.test_begin));
    };

    eval::ScaledEstimates est;
    est.transformer = scaled_test(x_mean, p1);
    est.kalman = scaled_test(base.kalman, 0);
    if (base.kalman_max.size() > 0) est.kalman_max = scaled_test(base.kalman_max, 0);
    est.oracle = scaled_test(base.oracle, 0);
    est.mean_y = scaled_test(base.mean_y, 0);

    const fs::path fitmax = ens_dir / "factor_fitmax_mean.csv";
    if (fs::exists(fitmax)) {
        const auto t = csv::read_file(fitmax);
        est.transformer_fit_max = scaled_test(read_column(t, "x_mean", "factor_fitmax_mean.csv"), p1);
    }

    double val_loss = 0.0;
    {
        std::ifstream in(ens_dir / "ensemble.json");
        if (!in) throw DataError("missing ensemble.json in " + ens_dir.string() + "; run `train` first");
        json meta = json::parse(in);
        for (double v : meta["best_val_loss"]) val_loss += v;
        val_loss /= meta["best_val_loss"].size();
    }

    auto rep = eval::metrics(est, ds.x_true.segment(sp.test_begin, sp.test_end - sp.test_begin), val_loss);

    // Seed-discard rule keyed on the Kalman baseline flatlining in-sample.
    const auto sc_k = eval::fit_scaling(base.kalman.head(sp.val_end), ds.x_true.head(sp.val_end));
    rep.discarded = eval::flatline_check(base.kalman.head(sp.val_end), sc_k, ds.x_true.head(sp.val_end));
    return rep;
}

inline std::string mean_sd_cell(const std::vector<double>& values) {
    if (values.empty()) return "-";
    double m = 0.0;
    for (double v : values) m += v;
    m /= values.size();
    double sd = 0.0;
    for (double v : values) sd += (v - m) * (v - m);
    sd = values.size() > 1 ? std::sqrt(sd / values.size()) : 0.0;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f (%.1f)", m, sd);
    return buf;
}

} // namespace detail

inline void cmd_evaluate(const Settings& s) {
    if (s.mode != "simulate") throw ConfigError("cmd_evaluate needs mode = simulate");
    detail::write_manifest(s, "evaluate");

    csv::Writer table(s.out / "results_table.csv");
    table.row({"process", "lambda", "fit", "fit_max", "gain", "r2", "loss", "seeds_used", "seeds_discarded"});

    for (double lambda : s.lambda_set) {
        std::vector<double> fits, fit_maxes, gains, r2s, losses;
        int discarded = 0;
        for (auto seed : s.seeds) {
            const fs::path dir = detail::seed_dir(s, seed);
            const auto ds = detail::dataset_for(s, seed);
            const auto base = detail::load_baselines(dir);
            const fs::path ens_dir = s.lambda_set.size() == 1 ? dir : dir / detail::lambda_tag(lambda);
            auto rep = detail::evaluate_seed(s, ds, base, ens_dir);
            std::ofstream(ens_dir / "metrics.json") << detail::metrics_to_json(rep).dump(2) << '\n';

            if (rep.discarded) {
                ++discarded;
                continue;
            }
            fits.push_back(rep.fit);
            if (eval::present(rep.fit_max)) fit_maxes.push_back(rep.fit_max);
            if (eval::present(rep.gain)) gains.push_back(rep.gain);
            r2s.push_back(rep.r2_transformer);
            losses.push_back(rep.val_loss);
        }
        double loss_mean = 0.0;
        for (double v : losses) loss_mean += v;
        if (!losses.empty()) loss_mean /= losses.size();
        char loss_buf[32];
        std::snprintf(loss_buf, sizeof(loss_buf), "%.4f", loss_mean);
        table.row({std::to_string(s.process), csv::format_double(lambda), detail::mean_sd_cell(fits),
                   detail::mean_sd_cell(fit_maxes), detail::mean_sd_cell(gains), detail::mean_sd_cell(r2s),
                   losses.empty() ? "-" : loss_buf, std::to_string(fits.size()), std::to_string(discarded)});
    }

    // Per-run loss-against-fit regression slopes, when the histories carry fit.
    bool any_slopes = false;
    std::vector<std::array<std::string, 4>> slope_rows;
    for (auto seed : s.seeds) {
        for (double lambda : s.lambda_set) {
            const fs::path ens_dir = s.lambda_set.size() == 1
                                         ? detail::seed_dir(s, seed)
                                         : detail::seed_dir(s, seed) / detail::lambda_tag(lambda);
            for (int r = 0;; ++r) {
                const fs::path hist = ens_dir / "runs" / ("run_" + std::to_string(r)) / "history.csv";
                if (!fs::exists(hist)) break;
                const auto t = csv::read_file(hist);
                if (t.column("test_fit") < 0) break;
                std::vector<std::pair<double, double>> pairs;
                const int cl = t.column("val_loss"), cf = t.column("test_fit");
                for (const auto& row : t.rows)
                    pairs.emplace_back(csv::parse_double(row[cl], "history.csv"),
                                       csv::parse_double(row[cf], "history.csv"));
                if (pairs.size() < 3) continue;
                any_slopes = true;
                slope_rows.push_back({std::to_string(seed), csv::format_double(lambda),
                                      std::to_string(r),
                                      csv::format_double(eval::loss_fit_slope(pairs))});
            }
        }
    }
    if (any_slopes) {
        csv::Writer w(s.out / "loss_fit.csv");
        w.row({"seed", "lambda", "run", "slope"});
        for (const auto& row : slope_rows) w.row({row[0], row[1], row[2], row[3]});
    }
}

// ---------------------------------------------------------------------------
// interpret
// ---------------------------------------------------------------------------

namespace detail {

inline fs::path ensemble_dir_for(const Settings& s, const fs::path& seed_dir) {
    if (fs::exists(seed_dir / "ensemble.json")) return seed_dir;
    const fs::path lam = seed_dir / lambda_tag(s.tcfg.lambda);
    if (fs::exists(lam / "ensemble.json")) return lam;
    throw DataError("no trained ensemble under " + seed_dir.string() + "; run `train` first");
}

inline std::pair<net::TransformerParams, net::Hyperparams> load_best_run(const fs::path& ens_dir) {
    std::ifstream in(ens_dir / "ensemble.json");
    if (!in) throw DataError("missing ensemble.json in " + ens_dir.string());
    json meta = json::parse(in);
    const int best = meta["best_run"];
    return net::load_checkpoint(ens_dir / "runs" / ("run_" + std::to_string(best)) / "checkpoint.txt");
}

/// Replays inference over [t_begin, t_end) and writes every attention and
/// residual artifact into dir.
inline void interpret_span(const Settings& s, const net::TransformerParams& params,
                           const net::Hyperparams& hyper, const Eigen::MatrixXd& series, long t_begin,
                           long t_end, long snapshot_t, const fs::path& dir) {
    fs::create_directories(dir);
    Rng idle(0);
    std::vector<interpret::AttentionRecord> records;
    records.reserve(t_end - t_begin);
    for (long t = t_begin; t < t_end; ++t) {
        const auto tr =
            net::forward(series.middleRows(t - hyper.lags + 1, hyper.lags), params, hyper, net::Mode::Infer, idle);
        records.push_back(interpret::attention_record(tr, t));
        if (t == snapshot_t) {
            interpret::write_attention_snapshot(records.back().state_matrix, dir / "attn_state_snapshot.csv");
            interpret::write_residual_stream(interpret::residual_probe(tr, params.w_factor),
                                             dir / "residual_stream.csv");
            if (s.per_head)
                for (int hh = 0; hh < hyper.n_heads; ++hh) {
                    net::ForwardTrace one = tr;
                    one.state.back().attn.scores = {tr.state.back().attn.scores[hh]};
                    interpret::write_attention_snapshot(
                        interpret::state_attention_matrix(one),
                        dir / ("attn_state_snapshot_head" + std::to_string(hh + 1) + ".csv"));
                }
        }
    }
    interpret::write_contributions(interpret::contribution_series(records), dir);

    std::vector<std::pair<long, interpret::Projection>> tentacles;
    for (long t = t_begin; t < t_end; t += s.tentacle_stride)
        tentacles.emplace_back(t, interpret::project(params, hyper, series, t, s.tentacle_steps));
    interpret::write_tentacles(tentacles, dir / "tentacles.csv", true);
}

} // namespace detail

inline void cmd_interpret(const Settings& s) {
    if (s.mode != "simulate") throw ConfigError("cmd_interpret needs mode = simulate");
    detail::write_manifest(s, "interpret");
    for (auto seed : s.seeds) {
        const fs::path dir = detail::seed_dir(s, seed);
        const auto ds = detail::dataset_for(s, seed);
        const auto ens_dir = detail::ensemble_dir_for(s, dir);
        auto [params, hyper] = detail::load_best_run(ens_dir);
        const auto& sp = ds.split;
        const long snapshot = s.snapshot_t >= 0 ? s.snapshot_t : sp.test_begin + (sp.test_end - sp.test_begin) / 2;
        detail::interpret_span(s, params, hyper, ds.y, sp.test_begin, sp.test_end, snapshot,
                               dir / "interpret");
    }
}

// ---------------------------------------------------------------------------
// coincident (empirical pipeline)
// ---------------------------------------------------------------------------

inline void cmd_coincident(const Settings& s) {
    if (s.mode != "empirical") throw ConfigError("cmd_coincident needs mode = empirical");
    detail::write_manifest(s, "coincident");
    fs::create_directories(s.out);

    std::vector<dataio::MacroSeries> series;
    for (const auto& p : {s.data_production, s.data_sales, s.data_income, s.data_hours})
        series.push_back(dataio::load_csv(p));
    const auto data = dataio::transform(series);
    const auto split = dataio::apply_split(data.dates, dataio::load_split(s.split_file));
    const auto recessions = dataio::load_recessions(s.recessions_file);
    const long n = data.y.rows();

    // Shared-variance linear model over the full span doubles as prior.
    ssm::EstimateOptions mle;
    mle.max_evals = s.mle_max_evals;
    mle.shared_sigma = true;
    auto init = ssm::heuristic_init(data.y);
    init.R = init.R.diagonal().mean() * Eigen::MatrixXd::Identity(data.y.cols(), data.y.cols());
    const auto fitted = ssm::estimate_mle(data.y, init, mle);
    const Eigen::VectorXd prior = ssm::kalman_filter(fitted.params, data.y).filtered_mean;
    ssm::write_params(fitted.params, s.out / "kalman_params.txt");

    train::TrainData tdata;
    for (const auto& seg : split.segments) {
        auto windows = train::make_windows_in_range(data.y, s.hyper.lags, prior, seg.begin, seg.end);
        auto& sink = seg.label == dataio::SplitLabel::Train ? tdata.train : tdata.val;
        for (auto& w : windows) sink.push_back(std::move(w));
    }

    Settings s_run = s;
    s_run.tcfg.seed = s.seeds.front();
    s_run.tcfg.record_test_fit = false;
    auto ens = detail::run_ensemble(s_run, s.out, tdata, data.y, s.hyper.lags - 1, n, s.tcfg.lambda);

    // Scale the index (and each run) onto the Kalman baseline.
    const long p1 = s.hyper.lags - 1;
    const auto sc = eval::fit_scaling(ens.mean_factor, prior.segment(p1, n - p1));
    {
        csv::Writer w(s.out / "coincident.csv");
        std::vector<std::string> header = {"date", "x_transformer", "x_kalman", "in_recession"};
        for (int r = 0; r < s.tcfg.runs; ++r) header.push_back("run_" + std::to_string(r));
        w.row(header);
        for (long t = p1; t < n; ++t) {
            std::vector<std::string> row = {data.dates[t].str(),
                                            csv::format_double(sc.gamma0 + sc.gamma1 * ens.mean_factor(t - p1)),
                                            csv::format_double(prior(t)),
                                            dataio::in_recession(recessions, data.dates[t]) ? "1" : "0"};
            for (int r = 0; r < s.tcfg.runs; ++r)
                row.push_back(csv::format_double(sc.gamma0 + sc.gamma1 * ens.run_factors(t - p1, r)));
            w.row(row);
        }
    }
    {
        csv::Writer w(s.out / "recession_bands.csv");
        w.row({"start", "end"});
        for (const auto& r : recessions) w.row({r.start.str(), r.end.str()});
    }

    // Attention artifacts from the lowest-validation-loss run; the default
    // snapshot is the first month of the last recession in range.
    auto [params, hyper] = detail::load_best_run(s.out);
    long snapshot = s.snapshot_t;
    if (snapshot < 0) {
        snapshot = p1 + (n - p1) / 2;
        for (long t = n - 1; t >= p1; --t)
            if (dataio::in_recession(recessions, data.dates[t]) &&
                (t == p1 || !dataio::in_recession(recessions, data.dates[t - 1]))) {
                snapshot = t;
                break;
            }
    }
    detail::interpret_span(s, params, hyper, data.y, p1, n, snapshot, s.out / "interpret");
}

} // namespace dflab::experiment
