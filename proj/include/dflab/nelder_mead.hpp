#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <functional>
#include <vector>

namespace dflab {

struct NelderMeadOptions {
    int max_evals = 2000;
    double f_tol = 1e-8;       // stop when the simplex f-spread falls below this
    double init_step = 0.1;    // per-coordinate simplex offset
};

struct NelderMeadResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int evals = 0;
    bool converged = false;
};

/// Downhill simplex minimization. Deterministic: the path depends only on
/// the start point and options.
inline NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                    const Eigen::VectorXd& x0, const NelderMeadOptions& opts = {}) {
    const int n = static_cast<int>(x0.size());
    const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

    std::vector<Eigen::VectorXd> xs(n + 1, x0);
    std::vector<double> fs(n + 1);
    int evals = 0;
    auto eval = [&](const Eigen::VectorXd& x) {
        ++evals;
        return f(x);
    };

    for (int i = 1; i <= n; ++i)
        xs[i](i - 1) += opts.init_step * (1.0 + std::abs(x0(i - 1)));
    for (int i = 0; i <= n; ++i) fs[i] = eval(xs[i]);

    std::vector<int> order(n + 1);
    bool converged = false;
    while (evals < opts.max_evals) {
        for (int i = 0; i <= n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
        const int best = order[0], worst = order[n], second_worst = order[n - 1];
        if (fs[worst] - fs[best] < opts.f_tol) {
            converged = true;
            break;
        }

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (int i = 0; i <= n; ++i)
            if (i != worst) centroid += xs[i];
        centroid /= n;

        Eigen::VectorXd xr = centroid + alpha * (centroid - xs[worst]);
        const double fr = eval(xr);
        if (fr < fs[order[0]]) {
            Eigen::VectorXd xe = centroid + gamma * (xr - centroid);
            const double fe = eval(xe);
            if (fe < fr) {
                xs[worst] = xe;
                fs[worst] = fe;
            } else {
                xs[worst] = xr;
                fs[worst] = fr;
            }
        } else if (fr < fs[second_worst]) {
            xs[worst] = xr;
            fs[worst] = fr;
        } else {
            Eigen::VectorXd xc = centroid + rho * (xs[worst] - centroid);
            const double fc = eval(xc);
            if (fc < fs[worst]) {
                xs[worst] = xc;
                fs[worst] = fc;
            } else {
                for (int i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    xs[i] = xs[best] + sigma * (xs[i] - xs[best]);
                    fs[i] = eval(xs[i]);
                }
            }
        }
    }

    int best = 0;
    for (int i = 1; i <= n; ++i)
        if (fs[i] < fs[best]) best = i;
    return {xs[best], fs[best], evals, converged};
}

} // namespace dflab
