/// @file filters.hpp Unscented Kalman filter and bootstrap particle filter.
#pragma once

#include "pcrlb/linalg.hpp"
#include "pcrlb/model.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <type_traits>
#include <utility>
#include <vector>

namespace pcrlb
{

/// Scaled unscented transform parameters. kappa defaults to 3 - n when unset.
template <typename Scalar>
struct UnscentedParams
{
    Scalar alpha = Scalar(1);
    Scalar beta = Scalar(2);
    std::optional<Scalar> kappa;

    Scalar lambda(Eigen::Index n) const
    {
        const Scalar k = kappa.value_or(Scalar(3) - Scalar(n));
        return alpha * alpha * (Scalar(n) + k) - Scalar(n);
    }
};

template <typename Scalar>
struct SigmaPointSet
{
    Matrix<Scalar> points;  ///< n x (2n+1), column 0 is the central point
    Vector<Scalar> mean_weights;
    Vector<Scalar> cov_weights;
};

template <typename Scalar>
struct UnscentedResult
{
    Vector<Scalar> mean;
    Matrix<Scalar> cov;
    Matrix<Scalar> cross_cov;  ///< input x output
};

template <typename Scalar>
struct FilterOutput
{
    GaussianBelief<Scalar> posterior;
    GaussianBelief<Scalar> predicted;
};

/// Cholesky factor of c with the jitter escalation used by spd_inverse.
template <typename Scalar>
Matrix<Scalar> jittered_cholesky(const Matrix<Scalar>& c)
{
    const Matrix<Scalar> s = symmetrized(c);
    Eigen::LLT<Matrix<Scalar>> llt(s);
    if (llt.info() == Eigen::Success)
        return llt.matrixL();
    const auto n = s.rows();
    Scalar scale = s.trace() / Scalar(n);
    if (!(scale > Scalar(0)))
        scale = Scalar(1);
    for (Scalar eps = Scalar(1e-12); eps <= Scalar(1.5e-6); eps *= Scalar(10)) {
        llt.compute(s + eps * scale * Matrix<Scalar>::Identity(n, n));
        if (llt.info() == Eigen::Success)
            return llt.matrixL();
    }
    throw NumericError("Cholesky factorization failed after jitter escalation");
}

template <typename Scalar>
SigmaPointSet<Scalar> sigma_points(const GaussianBelief<Scalar>& belief, const UnscentedParams<Scalar>& params = {})
{
    const auto n = belief.mean.size();
    const Scalar lambda = params.lambda(n);
    if (!(Scalar(n) + lambda > Scalar(0)))
        throw std::invalid_argument("sigma_points: n + lambda must be positive");
    const Matrix<Scalar> root = jittered_cholesky<Scalar>((Scalar(n) + lambda) * belief.cov);

    SigmaPointSet<Scalar> set;
    set.points.resize(n, 2 * n + 1);
    set.points.col(0) = belief.mean;
    for (Eigen::Index i = 0; i < n; ++i) {
        set.points.col(1 + i) = belief.mean + root.col(i);
        set.points.col(1 + n + i) = belief.mean - root.col(i);
    }
    const Scalar w = Scalar(1) / (Scalar(2) * (Scalar(n) + lambda));
    set.mean_weights = Vector<Scalar>::Constant(2 * n + 1, w);
    set.cov_weights = Vector<Scalar>::Constant(2 * n + 1, w);
    set.mean_weights(0) = lambda / (Scalar(n) + lambda);
    set.cov_weights(0) = set.mean_weights(0) + (Scalar(1) - params.alpha * params.alpha + params.beta);
    return set;
}

/// Pushes sigma points of `belief` through `map` and returns output mean, covariance
/// (plus noise_cov) and the input/output cross covariance.
template <typename Scalar, typename Map>
UnscentedResult<Scalar> unscented_transform(const GaussianBelief<Scalar>& belief, const Map& map,
                                            const Matrix<Scalar>& noise_cov, const UnscentedParams<Scalar>& params = {})
{
    const SigmaPointSet<Scalar> set = sigma_points(belief, params);
    const auto count = set.points.cols();

    Vector<Scalar> first = map(Vector<Scalar>(set.points.col(0)));
    Matrix<Scalar> mapped(first.size(), count);
    mapped.col(0) = first;
    for (Eigen::Index i = 1; i < count; ++i)
        mapped.col(i) = map(Vector<Scalar>(set.points.col(i)));
    throw_if_nonfinite(mapped, "unscented_transform");

    UnscentedResult<Scalar> out;
    out.mean = mapped * set.mean_weights;
    const Matrix<Scalar> dy = mapped.colwise() - out.mean;
    const Matrix<Scalar> dx = set.points.colwise() - belief.mean;
    out.cov = symmetrized(Matrix<Scalar>(dy * set.cov_weights.asDiagonal() * dy.transpose() + noise_cov));
    out.cross_cov = dx * set.cov_weights.asDiagonal() * dy.transpose();
    return out;
}

/// One predict/update cycle: `belief` describes x_{k-1}, `z` is z_k.
template <typename Scalar>
FilterOutput<Scalar> ukf_step(const SystemModel<Scalar>& model, int k, const std::type_identity_t<GaussianBelief<Scalar>>& belief,
                              const std::type_identity_t<Vector<Scalar>>& z, const UnscentedParams<Scalar>& params = {})
{
    if (z.size() != model.meas_dim())
        throw std::invalid_argument("ukf_step: measurement has wrong length");

    FilterOutput<Scalar> out;
    const auto pred = unscented_transform<Scalar>(
        belief, [&](const Vector<Scalar>& x) { return model.transition(k, x); }, model.process_cov(k), params);
    out.predicted = {pred.mean, regularized<Scalar>(pred.cov)};

    const auto meas = unscented_transform<Scalar>(
        out.predicted, [&](const Vector<Scalar>& x) { return model.measure(k, x); }, model.meas_cov(k), params);
    Eigen::LLT<Matrix<Scalar>> innovation(meas.cov);
    if (innovation.info() != Eigen::Success)
        throw NumericError("ukf_step: innovation covariance is not positive definite");

    // K = P_xz S^-1, computed as (S^-1 P_zx)'.
    const Matrix<Scalar> gain = innovation.solve(meas.cross_cov.transpose()).transpose();
    out.posterior.mean = out.predicted.mean + gain * (z - meas.mean);
    out.posterior.cov = regularized<Scalar>(out.predicted.cov - gain * meas.cov * gain.transpose());
    throw_if_nonfinite(out.posterior.mean, "ukf_step mean");
    throw_if_nonfinite(out.posterior.cov, "ukf_step covariance");
    return out;
}

template <typename Scalar>
struct ParticleSet
{
    Matrix<Scalar> particles;  ///< n x N
    Vector<Scalar> weights;    ///< normalized

    Eigen::Index size() const { return particles.cols(); }
    Scalar ess() const { return Scalar(1) / weights.squaredNorm(); }
};

enum class ResamplePolicy
{
    EveryStep,
    EffectiveSampleSize,
};

template <typename Scalar>
struct ParticleFilterOptions
{
    ResamplePolicy policy = ResamplePolicy::EveryStep;
    Scalar ess_fraction = Scalar(0.5);
};

/// Indices drawn at positions (i + u0) / N against the cumulative weights.
template <typename Scalar>
std::vector<Eigen::Index> systematic_resample(const Vector<Scalar>& weights, Scalar u0)
{
    const auto count = weights.size();
    if (count == 0)
        throw std::invalid_argument("systematic_resample: empty weights");
    if (!(u0 >= Scalar(0) && u0 < Scalar(1)))
        throw std::invalid_argument("systematic_resample: u0 must lie in [0, 1)");
    if ((weights.array() < Scalar(0)).any() || !weights.allFinite())
        throw std::invalid_argument("systematic_resample: weights must be finite and non-negative");
    if (std::abs(weights.sum() - Scalar(1)) > Scalar(1e-9))
        throw std::invalid_argument("systematic_resample: weights are not normalized");

    std::vector<Eigen::Index> indices(static_cast<std::size_t>(count));
    Scalar cumulative = weights(0);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < count; ++i) {
        const Scalar position = (Scalar(i) + u0) / Scalar(count);
        while (position >= cumulative && j < count - 1)
            cumulative += weights(++j);
        indices[static_cast<std::size_t>(i)] = j;
    }
    return indices;
}

/// Weighted mean and covariance, without bias correction.
template <typename Scalar>
GaussianBelief<Scalar> particle_moments(const ParticleSet<Scalar>& set)
{
    GaussianBelief<Scalar> out;
    out.mean = set.particles * set.weights;
    const Matrix<Scalar> centered = set.particles.colwise() - out.mean;
    out.cov = symmetrized(Matrix<Scalar>(centered * set.weights.asDiagonal() * centered.transpose()));
    return out;
}

template <typename Scalar>
ParticleSet<Scalar> sample_particles(const GaussianPrior<Scalar>& prior, Eigen::Index count, std::uint64_t seed)
{
    if (count < 1)
        throw std::invalid_argument("sample_particles: count must be positive");
    const auto n = prior.mean.size();
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
    Matrix<Scalar> draws(n, count);
    for (Eigen::Index j = 0; j < count; ++j)
        for (Eigen::Index i = 0; i < n; ++i)
            draws(i, j) = normal(rng);
    ParticleSet<Scalar> set;
    set.particles = (psd_sqrt<Scalar>(prior.cov) * draws).colwise() + prior.mean;
    set.weights = Vector<Scalar>::Constant(count, Scalar(1) / Scalar(count));
    return set;
}

/// Bootstrap SIR step with log-domain weighting. Reported moments are those of the
/// weighted particles before resampling.
template <typename Scalar>
std::pair<ParticleSet<Scalar>, FilterOutput<Scalar>> pf_step(const SystemModel<Scalar>& model, int k,
                                                             const std::type_identity_t<ParticleSet<Scalar>>& particles,
                                                             const std::type_identity_t<Vector<Scalar>>& z, std::uint64_t seed,
                                                             const ParticleFilterOptions<Scalar>& options = {})
{
    const auto n = model.state_dim();
    const auto count = particles.size();
    if (count < 1 || particles.particles.rows() != n || particles.weights.size() != count)
        throw std::invalid_argument("pf_step: malformed particle set");
    if (z.size() != model.meas_dim())
        throw std::invalid_argument("pf_step: measurement has wrong length");

    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
    const Matrix<Scalar> process_root = psd_sqrt<Scalar>(model.process_cov(k));
    Eigen::LLT<Matrix<Scalar>> meas_llt(model.meas_cov(k));
    if (meas_llt.info() != Eigen::Success)
        throw NumericError("pf_step: measurement covariance is not positive definite");

    ParticleSet<Scalar> next;
    next.particles.resize(n, count);
    Vector<Scalar> log_weights(count);
    Vector<Scalar> noise(n);
    for (Eigen::Index j = 0; j < count; ++j) {
        for (Eigen::Index i = 0; i < n; ++i)
            noise(i) = normal(rng);
        next.particles.col(j) = model.transition(k, Vector<Scalar>(particles.particles.col(j))) + process_root * noise;
        const Vector<Scalar> innovation = z - model.measure(k, Vector<Scalar>(next.particles.col(j)));
        const Vector<Scalar> whitened = meas_llt.matrixL().solve(innovation);
        log_weights(j) = std::log(particles.weights(j)) - Scalar(0.5) * whitened.squaredNorm();
    }

    const ParticleSet<Scalar> propagated{next.particles, particles.weights};

    const Scalar peak = log_weights.maxCoeff();
    if (!std::isfinite(static_cast<double>(peak)))
        throw DegenerateWeightsError("pf_step: all log-weights are non-finite");
    next.weights = (log_weights.array() - peak).exp().matrix();
    const Scalar total = next.weights.sum();
    if (!(total > Scalar(0)) || !std::isfinite(static_cast<double>(total)))
        throw DegenerateWeightsError("pf_step: weights do not normalize");
    next.weights /= total;

    FilterOutput<Scalar> out;
    out.predicted = particle_moments(propagated);
    out.predicted.cov = regularized<Scalar>(out.predicted.cov);
    out.posterior = particle_moments(next);
    out.posterior.cov = regularized<Scalar>(out.posterior.cov);

    const bool resample = options.policy == ResamplePolicy::EveryStep ||
                          next.ess() < options.ess_fraction * Scalar(count);
    if (resample) {
        std::uniform_real_distribution<Scalar> uniform(Scalar(0), Scalar(1));
        Scalar u0 = uniform(rng);
        if (u0 >= Scalar(1))
            u0 = Scalar(0);
        const auto indices = systematic_resample<Scalar>(next.weights, u0);
        Matrix<Scalar> chosen(n, count);
        for (Eigen::Index j = 0; j < count; ++j)
            chosen.col(j) = next.particles.col(indices[static_cast<std::size_t>(j)]);
        next.particles = std::move(chosen);
        next.weights.setConstant(Scalar(1) / Scalar(count));
    }
    return {std::move(next), std::move(out)};
}

} // namespace pcrlb
