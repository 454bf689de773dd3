// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include "pcrlb/experiment.hpp"
#include "pcrlb/output.hpp"
#include "pcrlb/selftest.hpp"

#include "oracles/kalman.hpp"
#include "oracles/ungm_reference.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace pcrlb;
using M = Eigen::MatrixXd;
using V = Eigen::VectorXd;

namespace
{

int failures = 0;

void report(const std::string& id, const std::string& what, bool ok, const std::string& detail)
{
    std::printf("%s %s %s (%s)\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt_err(double worst, double tol)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "worst %.3g, tol %.0e", worst, tol);
    return buf;
}

double rel(const M& value, const M& reference, double floor = 0.0)
{
    return (value - reference).norm() / std::max({reference.norm(), floor, 1e-300});
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

M random_spd(std::mt19937_64& rng, Eigen::Index n, double lo, double hi)
{
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> eig(lo, hi);
    M x(n, n);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = normal(rng);
    const M q = Eigen::HouseholderQR<M>(x).householderQ();
    V d(n);
    for (Eigen::Index i = 0; i < n; ++i)
        d(i) = eig(rng);
    const M s = q * d.asDiagonal() * q.transpose();
    return 0.5 * (s + s.transpose());
}

// 1. Bound engines versus Kalman covariances on random stable linear-Gaussian models.
void kalman_oracle()
{
    constexpr double tol = 1e-8;
    constexpr int horizon = 50;
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> radius(0.3, 0.95);
    double worst_true = 0.0, worst_mean_only = 0.0, worst_mean_cov = 0.0;

    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::Index n = trial < 5 ? 1 : 2;
        M a(n, n);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a(i) = u(rng);
        a *= radius(rng) / Eigen::JacobiSVD<M>(a).singularValues()(0);
        M h(1, n);
        for (Eigen::Index i = 0; i < n; ++i)
            h(0, i) = u(rng) + (i == 0 ? 1.5 : 0.0);
        const M q = random_spd(rng, n, 0.1, 2.0);
        const M r = random_spd(rng, 1, 0.1, 3.0);
        const M p0 = random_spd(rng, n, 0.5, 5.0);
        const auto model = linear_gaussian_model<double>(a, h, q, r, {V::Zero(n), p0});
        const auto traj = sample_trajectory(model, horizon, rng());
        const auto kalman = oracle::kalman_covariances(a, h, q, r, p0, horizon);

        GaussianBeliefd post{V::Zero(n), p0};
        M j_true = initial_fim(model.prior());
        M j_mean_only = j_true;
        M j_mean_cov = j_true;
        for (int k = 1; k <= horizon; ++k) {
            const auto step = oracle::kalman_step(a, h, q, r, post.mean, post.cov, traj.z(k));
            const GaussianBeliefd pred{step.predicted_mean, step.predicted_cov};
            j_true = fim_recursion_step(j_true, true_fim_terms_mc(model, k - 1, M(traj.x(k - 1)), M(traj.x(k))));
            j_mean_only = fim_recursion_step(j_mean_only, mean_only_terms(model, k - 1, post.mean, pred.mean));
            j_mean_cov = fim_recursion_step(j_mean_cov, mean_cov_terms(model, k - 1, post, pred));
            const M& p = kalman[static_cast<std::size_t>(k - 1)];
            worst_true = std::max(worst_true, rel(j_true.inverse(), p));
            worst_mean_only = std::max(worst_mean_only, rel(j_mean_only.inverse(), p));
            worst_mean_cov = std::max(worst_mean_cov, rel(j_mean_cov.inverse(), p));
            post = {step.mean, step.cov};
        }
    }
    report("1a", "Kalman oracle, true bound", worst_true <= tol, fmt_err(worst_true, tol));
    report("1b", "Kalman oracle, mean-only bound", worst_mean_only <= tol, fmt_err(worst_mean_only, tol));
    report("1c", "Kalman oracle, mean+cov bound", worst_mean_cov <= tol, fmt_err(worst_mean_cov, tol));
}

// 2. Sigma blocks and the Theta/Pi recursion against the direct mean+cov terms.
void decomposition_identities()
{
    constexpr double tol = 1e-8;
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> mean(-20.0, 20.0);
    std::uniform_real_distribution<double> log_var(std::log(0.01), std::log(25.0));
    std::uniform_real_distribution<double> log_info(std::log(0.01), std::log(10.0));
    const auto model = ungm_model<double>();
    double worst_blocks = 0.0, worst_recursion = 0.0;
    for (int i = 0; i < 100; ++i) {
        const GaussianBeliefd state{V::Constant(1, mean(rng)), M::Constant(1, 1, std::exp(log_var(rng)))};
        const GaussianBeliefd meas{V::Constant(1, mean(rng)), M::Constant(1, 1, std::exp(log_var(rng)))};
        const M j = M::Constant(1, 1, std::exp(log_info(rng)));
        const int k = i % 50;
        const auto direct = mean_cov_terms(model, k, state, meas);
        const auto sum = decompose_terms(model, k, state, meas).combined();
        worst_blocks = std::max({worst_blocks, rel(sum.d11, direct.d11), rel(sum.d12, direct.d12), rel(sum.d22, direct.d22)});
        const auto split = fim_via_decomposition(j, decompose_terms(model, k, state, meas));
        worst_recursion = std::max(worst_recursion, rel(split.j_next, fim_recursion_step(j, direct)));
    }
    report("2a", "decomposition blocks sum to the direct terms", worst_blocks <= tol, fmt_err(worst_blocks, tol));
    report("2b", "Theta + Pi recursion matches the direct recursion", worst_recursion <= tol,
           fmt_err(worst_recursion, tol));
}

// 3. Matrix-lemma identities against dense inverses.
void lemma_identities()
{
    constexpr double tol = 1e-10;
    std::mt19937_64 rng(303);
    double worst_split = 0.0, worst_bound = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index n = 1 + i % 4;
        const M a = random_spd(rng, n, 0.2, 5.0);
        const M b = random_spd(rng, n, 0.2, 5.0);
        const M dense = (a + b).inverse();
        worst_split = std::max(worst_split, rel(inv_lemma_split<double>(a, b), dense));
        worst_bound = std::max(worst_bound, rel(pcrlb_from_theta_pi<double>(a, b).value, dense));
    }
    report("3a", "split inverse (A+B)^-1 = A^-1 - (A B^-1 A + A)^-1", worst_split <= tol, fmt_err(worst_split, tol));
    report("3b", "bound from Theta and Pi equals (Theta+Pi)^-1", worst_bound <= tol, fmt_err(worst_bound, tol));
}

// 4. Closed-form gap versus direct subtraction over a full experiment.
void gap_formula(const AggregateResult& result)
{
    constexpr double tol = 1e-8;
    double worst = 0.0;
    long checked = 0, skipped = 0;
    for (const auto& run : result.runs)
        for (const auto& er : run.estimators)
            for (std::size_t k = 0; k < er.gap_direct.size(); ++k) {
                if (!(er.pi_condition[k] < 1e8)) {
                    ++skipped;
                    continue;
                }
                ++checked;
                worst = std::max(worst, rel(er.gap_analytic[k], er.gap_direct[k], 1.0));
            }
    report("4", "closed-form gap matches direct subtraction where cond(Pi) < 1e8", worst <= tol && checked > 0,
           fmt_err(worst, tol) + ", " + std::to_string(checked) + " steps checked, " + std::to_string(skipped) +
               " skipped");
}

// 5. Qualitative claims on the default configuration.
void default_claims(const AggregateResult& result)
{
    const auto& ukf = result.estimator(Estimator::Ukf);
    const auto& pf = result.estimator(Estimator::Pf);
    const auto truth = trace_series(result.true_bound);
    const std::size_t steps = truth.size();
    const std::vector<std::pair<std::string, std::vector<double>>> approx{
        {"meanonly_ukf", trace_series(ukf.mean_only)},
        {"meanonly_pf", trace_series(pf.mean_only)},
        {"meancov_ukf", trace_series(ukf.mean_cov)},
        {"meancov_pf", trace_series(pf.mean_cov)}};

    bool ok_a = true;
    std::string detail_a;
    for (const auto& [name, series] : approx) {
        std::size_t below = 0;
        for (std::size_t k = 0; k < steps; ++k)
            below += truth[k] <= series[k] ? 1 : 0;
        ok_a = ok_a && below * 10 >= steps * 9;
        detail_a += (detail_a.empty() ? "" : ", ") + name + " " + std::to_string(below) + "/" + std::to_string(steps);
    }
    report("5a", "true bound <= each approximation at >= 90% of steps", ok_a, detail_a);

    auto mean_abs_dev = [&](const std::vector<double>& s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < steps; ++k)
            acc += std::abs(s[k] - truth[k]);
        return acc / static_cast<double>(steps);
    };
    for (int e = 0; e < 2; ++e) {
        const double mo = mean_abs_dev(approx[static_cast<std::size_t>(e)].second);
        const double mc = mean_abs_dev(approx[static_cast<std::size_t>(e + 2)].second);
        char buf[128];
        std::snprintf(buf, sizeof buf, "mean |meancov - true| %.4g vs mean |meanonly - true| %.4g", mc, mo);
        report(e == 0 ? "5b-ukf" : "5b-pf", "mean+cov closer to the true bound than mean-only", mc < mo, buf);
    }

    auto average = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v)
            acc += x;
        return acc / static_cast<double>(v.size());
    };
    char buf[128];
    std::snprintf(buf, sizeof buf, "PF %.4g vs UKF %.4g", average(pf.rmse), average(ukf.rmse));
    report("5c", "PF mean RMSE below UKF mean RMSE", average(pf.rmse) < average(ukf.rmse), buf);

    for (int m = 0; m < 2; ++m) {
        const auto& u = approx[static_cast<std::size_t>(2 * m)].second;
        const auto& p = approx[static_cast<std::size_t>(2 * m + 1)].second;
        std::size_t closer = 0;
        for (std::size_t k = 0; k < steps; ++k)
            closer += std::abs(p[k] - truth[k]) < std::abs(u[k] - truth[k]) ? 1 : 0;
        report(m == 0 ? "5d-meanonly" : "5d-meancov", "PF-based bound closer to the true bound than UKF-based",
               closer * 2 > steps, std::to_string(closer) + "/" + std::to_string(steps) + " steps");
    }
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// 6. Byte-identical CSVs across repeated runs and worker counts.
void determinism(const ExperimentConfig& base, const AggregateResult& first)
{
    const fs::path root = fs::temp_directory_path() / "pcrlb_acceptance";
    fs::remove_all(root);
    fs::create_directories(root / "a");
    fs::create_directories(root / "b");
    fs::create_directories(root / "c");

    auto dump = [](const AggregateResult& r, const fs::path& dir) {
        write_csv(rmse_table(r), dir / "rmse.csv");
        write_csv(bounds_table(r), dir / "bounds.csv");
        write_csv(gap_table(r), dir / "gap.csv");
    };
    dump(first, root / "a");
    ExperimentConfig c = base;
    c.workers = 1;
    dump(run_experiment(c), root / "b");
    c.workers = 4;
    dump(run_experiment(c), root / "c");

    bool same = true;
    for (const char* f : {"rmse.csv", "bounds.csv", "gap.csv"}) {
        const auto a = slurp(root / "a" / f);
        same = same && !a.empty() && a == slurp(root / "b" / f) && a == slurp(root / "c" / f);
    }
    report("6", "identical CSVs across repeated runs and worker counts", same, "workers default, 1 and 4");
    fs::remove_all(root);
}

// 7. Analytic UNGM derivatives and moment-map derivatives against finite differences.
void derivative_checks()
{
    const auto model = ungm_model<double>();
    std::mt19937_64 rng(707);
    std::uniform_real_distribution<double> ux(-25.0, 25.0);
    std::uniform_real_distribution<double> up(0.01, 5.0);
    auto rel_scalar = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };

    double worst_model = 0.0;
    for (int i = 0; i < 100; ++i) {
        const V x = V::Constant(1, ux(rng));
        const int k = 1 + i % 50;
        const auto f = [&](const V& s) { return model.transition(k, s); };
        const auto h = [&](const V& s) { return model.measure(k, s); };
        worst_model = std::max({worst_model,
                                rel_scalar(model.transition_jacobian(k, x)(0), fd_jacobian<double>(f, x)(0)),
                                rel_scalar(model.transition_hessians(k, x)[0](0), fd_hessian<double>(f, x)[0](0)),
                                rel_scalar(model.measurement_jacobian(k, x)(0), fd_jacobian<double>(h, x)(0)),
                                rel_scalar(model.measurement_hessians(k, x)[0](0), fd_hessian<double>(h, x)[0](0))});
    }
    report("7a", "analytic UNGM Jacobians and Hessians match finite differences", worst_model <= 1e-5,
           fmt_err(worst_model, 1e-5));

    double worst_moments = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double x = ux(rng) * 0.6;
        const double p = up(rng);
        const int k = 1 + i % 50;
        const GaussianBeliefd b{V::Constant(1, x), M::Constant(1, 1, p)};
        const double step = 1e-7 * std::max(1.0, std::abs(x));
        const auto d = state_moment_map_derivatives(model, k, b);
        const auto dz = measurement_moment_map_derivatives(model, k, b);
        const double mean_fd = (oracle::ungm::state_mean(k, x + step, p) - oracle::ungm::state_mean(k, x, p)) / step;
        const double cov_fd = (oracle::ungm::state_cov(x + step, p, 1.0) - oracle::ungm::state_cov(x, p, 1.0)) / step;
        const double zmean_fd = (oracle::ungm::meas_mean(x + step, p) - oracle::ungm::meas_mean(x, p)) / step;
        const double zcov_fd = (oracle::ungm::meas_cov(x + step, p, 5.0) - oracle::ungm::meas_cov(x, p, 5.0)) / step;
        worst_moments = std::max({worst_moments, rel_scalar(d.mean_jacobian(0), mean_fd),
                                  rel_scalar(d.cov_derivatives[0](0), cov_fd), rel_scalar(dz.mean_jacobian(0), zmean_fd),
                                  rel_scalar(dz.cov_derivatives[0](0), zcov_fd)});
    }
    report("7b", "moment-map derivatives match a one-sided difference oracle", worst_moments <= 1e-4,
           fmt_err(worst_moments, 1e-4));
}

} // namespace

int main()
{
    kalman_oracle();
    decomposition_identities();
    lemma_identities();

    const ExperimentConfig defaults;  // sigma_w^2 = 1, sigma_v^2 = 5, T = 50, 100 runs, N = 1000, default seed
    const auto t0 = std::chrono::steady_clock::now();
    const AggregateResult result = run_experiment(defaults);
    const double experiment_seconds = seconds_since(t0);

    gap_formula(result);
    default_claims(result);
    determinism(defaults, result);
    derivative_checks();

    const auto t1 = std::chrono::steady_clock::now();
    bool selftest_ok = true;
    for (const auto& c : run_selftest())
        selftest_ok = selftest_ok && c.passed;
    const double selftest_seconds = seconds_since(t1);
    char buf[128];
    std::snprintf(buf, sizeof buf, "experiment %.2f s (limit 300), selftest %.2f s (limit 60)", experiment_seconds,
                  selftest_seconds);
    report("8", "runtime", experiment_seconds < 300.0 && selftest_seconds < 60.0 && selftest_ok, buf);

    std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "NOT ACCEPTED", failures);
    return failures == 0 ? 0 : 1;
}
