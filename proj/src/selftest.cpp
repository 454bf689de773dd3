#include "pcrlb/selftest.hpp"

#include "pcrlb/fim.hpp"

#include <algorithm>
#include <random>

namespace pcrlb
{

namespace
{

using M = Eigen::MatrixXd;
using V = Eigen::VectorXd;

double relative_error(const M& value, const M& reference, double scale = 0.0)
{
    const double denom = std::max({reference.norm(), scale, 1e-300});
    return (value - reference).norm() / denom;
}

struct Worst
{
    double value = 0.0;
    void update(double e) { value = std::max(value, std::isnan(e) ? std::numeric_limits<double>::infinity() : e); }
};

M random_spd(std::mt19937_64& rng, Eigen::Index n, double lo, double hi)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> eig(lo, hi);
    M x(n, n);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x(i) = u(rng);
    const Eigen::HouseholderQR<M> qr(x);
    const M q = qr.householderQ();
    V d(n);
    for (Eigen::Index i = 0; i < n; ++i)
        d(i) = eig(rng);
    return symmetrized(M(q * d.asDiagonal() * q.transpose()));
}

struct LinearCase
{
    M a, h, q, r, p0;
};

LinearCase random_linear_case(std::mt19937_64& rng, Eigen::Index n)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> radius(0.3, 0.95);
    LinearCase c;
    c.a.resize(n, n);
    for (Eigen::Index i = 0; i < c.a.size(); ++i)
        c.a(i) = u(rng);
    const double spectral = Eigen::JacobiSVD<M>(c.a).singularValues()(0);
    c.a *= radius(rng) / std::max(spectral, 1e-12);
    c.h.resize(1, n);
    for (Eigen::Index i = 0; i < n; ++i)
        c.h(0, i) = u(rng) + (i == 0 ? 1.5 : 0.0);
    c.q = random_spd(rng, n, 0.1, 2.0);
    c.r = random_spd(rng, 1, 0.1, 3.0);
    c.p0 = random_spd(rng, n, 0.5, 5.0);
    return c;
}

} // namespace

std::vector<SelftestCase> kalman_oracle_suite(unsigned models, int horizon)
{
    std::mt19937_64 rng(20240601);
    Worst true_err, mean_only_err, mean_cov_err;
    constexpr double tol = 1e-8;

    for (unsigned trial = 0; trial < models; ++trial) {
        const Eigen::Index n = trial % 2 == 0 ? 1 : 2;
        const LinearCase c = random_linear_case(rng, n);
        const auto model = linear_gaussian_model<double>(c.a, c.h, c.q, c.r, {V::Zero(n), c.p0});
        const auto traj = sample_trajectory(model, horizon, rng());

        GaussianBeliefd post{V::Zero(n), c.p0};
        M j_true = initial_fim(model.prior());
        M j_mean_only = j_true;
        M j_mean_cov = j_true;
        M j_closed = j_true;
        for (int k = 1; k <= horizon; ++k) {
            // Kalman filter in covariance form.
            GaussianBeliefd pred{c.a * post.mean, symmetrized(M(c.a * post.cov * c.a.transpose() + c.q))};
            const M s = c.h * pred.cov * c.h.transpose() + c.r;
            const M gain = pred.cov * c.h.transpose() * s.inverse();
            const M ikh = M::Identity(n, n) - gain * c.h;
            GaussianBeliefd next{pred.mean + gain * (traj.z(k) - c.h * pred.mean),
                                 symmetrized(M(ikh * pred.cov * ikh.transpose() + gain * c.r * gain.transpose()))};

            const M states_k = traj.x(k - 1);
            const M states_next = traj.x(k);
            j_true = fim_recursion_step(j_true, true_fim_terms_mc(model, k - 1, states_k, states_next));
            j_mean_only = fim_recursion_step(j_mean_only, mean_only_terms(model, k - 1, post.mean, pred.mean));
            j_mean_cov = fim_recursion_step(j_mean_cov, mean_cov_terms(model, k - 1, post, pred));

            // Mean+covariance terms of a linear model: noise inflated by the propagated covariance.
            const M px_inv = (c.a * post.cov * c.a.transpose() + c.q).inverse();
            const M pz_inv = (c.h * pred.cov * c.h.transpose() + c.r).inverse();
            const FimTriple<double> closed{c.a.transpose() * px_inv * c.a, -c.a.transpose() * px_inv,
                                           px_inv + c.h.transpose() * pz_inv * c.h};
            j_closed = fim_recursion_step(j_closed, closed);

            true_err.update(relative_error(j_true.inverse(), next.cov));
            mean_only_err.update(relative_error(j_mean_only.inverse(), next.cov));
            mean_cov_err.update(relative_error(j_mean_cov.inverse(), j_closed.inverse()));
            post = next;
        }
    }
    return {{"kalman", "true bound equals Kalman covariance", true_err.value <= tol, true_err.value, tol},
            {"kalman", "mean-only bound equals Kalman covariance", mean_only_err.value <= tol, mean_only_err.value, tol},
            {"kalman", "mean+cov bound equals its linear closed form", mean_cov_err.value <= tol, mean_cov_err.value,
             tol}};
}

std::vector<SelftestCase> decomposition_suite(unsigned cases)
{
    std::mt19937_64 rng(20240602);
    std::uniform_real_distribution<double> mean(-20.0, 20.0);
    std::uniform_real_distribution<double> log_var(std::log(0.05), std::log(20.0));
    std::uniform_real_distribution<double> log_info(std::log(0.01), std::log(10.0));
    std::uniform_int_distribution<int> step(0, 49);
    const auto model = ungm_model<double>();
    constexpr double tol = 1e-8;
    Worst blocks, recursion, bound, gap;

    for (unsigned i = 0; i < cases; ++i) {
        const GaussianBeliefd state{V::Constant(1, mean(rng)), M::Constant(1, 1, std::exp(log_var(rng)))};
        const GaussianBeliefd meas{V::Constant(1, mean(rng)), M::Constant(1, 1, std::exp(log_var(rng)))};
        const M j = M::Constant(1, 1, std::exp(log_info(rng)));
        const int k = step(rng);

        const auto direct = mean_cov_terms(model, k, state, meas);
        const auto dec = decompose_terms(model, k, state, meas);
        const auto sum = dec.combined();
        blocks.update(relative_error(sum.d11, direct.d11));
        blocks.update(relative_error(sum.d12, direct.d12));
        blocks.update(relative_error(sum.d22, direct.d22));

        const M j_next = fim_recursion_step(j, direct);
        const auto split = fim_via_decomposition(j, dec);
        recursion.update(relative_error(split.j_next, j_next));

        const auto inv = pcrlb_from_theta_pi(split.theta, split.pi);
        const M reference = (split.theta + split.pi).inverse();
        bound.update(relative_error(inv.value, reference));

        const auto diff = bound_difference(split.theta, split.pi);
        const M theta_inv = split.theta.inverse();
        gap.update(relative_error(diff.value, M(theta_inv - reference), theta_inv.norm()));
    }
    return {{"decomposition", "sigma* + sigma reproduce the mean+cov terms", blocks.value <= tol, blocks.value, tol},
            {"decomposition", "theta + pi reproduces the information recursion", recursion.value <= tol,
             recursion.value, tol},
            {"decomposition", "closed-form bound from theta and pi", bound.value <= tol, bound.value, tol},
            {"decomposition", "closed-form gap equals direct subtraction", gap.value <= tol, gap.value, tol}};
}

std::vector<SelftestCase> run_selftest()
{
    auto out = kalman_oracle_suite();
    const auto dec = decomposition_suite();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

} // namespace pcrlb
