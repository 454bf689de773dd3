/// @file moments.hpp Second-order Taylor propagation of Gaussian moments through model maps.
///
/// For a belief N(x, P) and a map g with Jacobian G and component Hessians S_i:
///
///     mean = g(x) + g_curv,          g_curv_i  = 1/2 tr(S_i P)
///     cov  = G P G' + C + noise,     C_ij      = 1/2 tr(S_i P S_j P)
///
/// The moment maps are also differentiated with respect to the conditioning point x
/// with P held fixed; those derivatives feed the mean+covariance information terms.
#pragma once

#include "pcrlb/model.hpp"

#include <type_traits>

namespace pcrlb
{

template <typename Scalar>
struct PropagatedMoments
{
    Vector<Scalar> mean;            ///< g(x) + curvature_mean
    Matrix<Scalar> cov;             ///< spread_cov + noise
    Vector<Scalar> curvature_mean;  ///< second-order mean correction
    Matrix<Scalar> curvature_cov;   ///< 1/2 tr(S_i P S_j P) term only
    Matrix<Scalar> spread_cov;      ///< G P G' + curvature_cov, i.e. cov without the noise
};

/// Derivatives of the moment maps with respect to the conditioning point.
template <typename Scalar>
struct MomentMapDerivatives
{
    Matrix<Scalar> mean_jacobian;            ///< d mean / dx, rows: outputs
    MatrixList<Scalar> cov_derivatives;      ///< d cov / dx_i, one per input coordinate
    Matrix<Scalar> curvature_mean_jacobian;  ///< d curvature_mean / dx
    Matrix<Scalar> map_jacobian;             ///< Jacobian of the map itself at the point
};

namespace detail
{

template <typename Scalar>
Vector<Scalar> curvature_mean(const MatrixList<Scalar>& hessians, const Matrix<Scalar>& p)
{
    Vector<Scalar> out(static_cast<Eigen::Index>(hessians.size()));
    for (std::size_t i = 0; i < hessians.size(); ++i)
        out(static_cast<Eigen::Index>(i)) = Scalar(0.5) * (hessians[i] * p).trace();
    return out;
}

template <typename Scalar>
Matrix<Scalar> curvature_cov(const MatrixList<Scalar>& hessians, const Matrix<Scalar>& p)
{
    const auto count = static_cast<Eigen::Index>(hessians.size());
    MatrixList<Scalar> sp;
    sp.reserve(hessians.size());
    for (const auto& s : hessians)
        sp.push_back(s * p);
    Matrix<Scalar> out(count, count);
    for (Eigen::Index i = 0; i < count; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const Scalar t = Scalar(0.5) * (sp[static_cast<std::size_t>(i)] * sp[static_cast<std::size_t>(j)]).trace();
            out(i, j) = t;
            out(j, i) = t;
        }
    return out;
}

/// Curvature parts only: these are the pieces of the moment maps whose x-dependence is
/// not captured by the model Jacobian.
template <typename Scalar>
struct CurvatureAt
{
    Vector<Scalar> mean;
    Matrix<Scalar> spread;
};

template <typename Scalar, typename JacFn, typename HessFn>
CurvatureAt<Scalar> curvature_at(const JacFn& jacobian, const HessFn& hessians, const Vector<Scalar>& x,
                                 const Matrix<Scalar>& p)
{
    const Matrix<Scalar> g = jacobian(x);
    const MatrixList<Scalar> s = hessians(x);
    return {curvature_mean(s, p), g * p * g.transpose() + curvature_cov(s, p)};
}

template <typename Scalar, typename ValueFn, typename JacFn, typename HessFn>
PropagatedMoments<Scalar> propagate(const ValueFn& value, const JacFn& jacobian, const HessFn& hessians,
                                    const GaussianBelief<Scalar>& belief, const Matrix<Scalar>& noise)
{
    if (belief.cov.rows() != belief.mean.size() || belief.cov.cols() != belief.mean.size())
        throw std::invalid_argument("propagate moments: belief covariance shape mismatch");
    PropagatedMoments<Scalar> out;
    const Matrix<Scalar> g = jacobian(belief.mean);
    const MatrixList<Scalar> s = hessians(belief.mean);
    out.curvature_mean = curvature_mean(s, belief.cov);
    out.curvature_cov = symmetrized(curvature_cov(s, belief.cov));
    throw_if_nonfinite(out.curvature_mean, "curvature mean");
    throw_if_nonfinite(out.curvature_cov, "curvature covariance");
    out.mean = value(belief.mean) + out.curvature_mean;
    out.spread_cov = clamp_psd<Scalar>(g * belief.cov * g.transpose() + out.curvature_cov);
    out.cov = clamp_psd<Scalar>(out.spread_cov + noise);
    return out;
}

template <typename Scalar, typename JacFn, typename HessFn>
MomentMapDerivatives<Scalar> differentiate(const JacFn& jacobian, const HessFn& hessians,
                                           const GaussianBelief<Scalar>& belief, bool affine,
                                           const StepPolicy<Scalar>& policy)
{
    const auto n = belief.mean.size();
    MomentMapDerivatives<Scalar> out;
    out.map_jacobian = jacobian(belief.mean);
    const auto rows = out.map_jacobian.rows();
    out.curvature_mean_jacobian = Matrix<Scalar>::Zero(rows, n);
    out.cov_derivatives.assign(static_cast<std::size_t>(n), Matrix<Scalar>::Zero(rows, rows));

    if (!affine) {
        Vector<Scalar> xp = belief.mean;
        Vector<Scalar> xm = belief.mean;
        for (Eigen::Index j = 0; j < n; ++j) {
            const Scalar h = policy.jacobian_step(belief.mean(j));
            xp(j) = belief.mean(j) + h;
            xm(j) = belief.mean(j) - h;
            const Scalar span = xp(j) - xm(j);
            const auto plus = curvature_at<Scalar>(jacobian, hessians, xp, belief.cov);
            const auto minus = curvature_at<Scalar>(jacobian, hessians, xm, belief.cov);
            out.curvature_mean_jacobian.col(j) = (plus.mean - minus.mean) / span;
            out.cov_derivatives[static_cast<std::size_t>(j)] = symmetrized((plus.spread - minus.spread) / span);
            xp(j) = belief.mean(j);
            xm(j) = belief.mean(j);
        }
    }
    out.mean_jacobian = out.map_jacobian + out.curvature_mean_jacobian;
    throw_if_nonfinite(out.mean_jacobian, "moment map derivative");
    for (const auto& d : out.cov_derivatives)
        throw_if_nonfinite(d, "moment covariance derivative");
    return out;
}

} // namespace detail

/// Moments of the state at time k given a belief about the state at time k-1.
template <typename Scalar>
PropagatedMoments<Scalar> propagate_state_moments(const SystemModel<Scalar>& model, int k,
                                                  const std::type_identity_t<GaussianBelief<Scalar>>& belief)
{
    return detail::propagate<Scalar>([&](const Vector<Scalar>& x) { return model.transition(k, x); },
                                     [&](const Vector<Scalar>& x) { return model.transition_jacobian(k, x); },
                                     [&](const Vector<Scalar>& x) { return model.transition_hessians(k, x); },
                                     belief, model.process_cov(k));
}

/// Moments of z_k given a belief about the state at time k.
template <typename Scalar>
PropagatedMoments<Scalar> propagate_measurement_moments(const SystemModel<Scalar>& model, int k,
                                                        const std::type_identity_t<GaussianBelief<Scalar>>& belief)
{
    return detail::propagate<Scalar>([&](const Vector<Scalar>& x) { return model.measure(k, x); },
                                     [&](const Vector<Scalar>& x) { return model.measurement_jacobian(k, x); },
                                     [&](const Vector<Scalar>& x) { return model.measurement_hessians(k, x); },
                                     belief, model.meas_cov(k));
}

/// Derivatives of the state moment map at belief.mean, covariance frozen.
template <typename Scalar>
MomentMapDerivatives<Scalar> state_moment_map_derivatives(const SystemModel<Scalar>& model, int k,
                                                          const std::type_identity_t<GaussianBelief<Scalar>>& belief)
{
    return detail::differentiate<Scalar>(
        [&](const Vector<Scalar>& x) { return model.transition_jacobian(k, x); },
        [&](const Vector<Scalar>& x) { return model.transition_hessians(k, x); }, belief, model.is_affine(),
        model.step_policy());
}

template <typename Scalar>
MomentMapDerivatives<Scalar> measurement_moment_map_derivatives(const SystemModel<Scalar>& model, int k,
                                                                const std::type_identity_t<GaussianBelief<Scalar>>& belief)
{
    return detail::differentiate<Scalar>(
        [&](const Vector<Scalar>& x) { return model.measurement_jacobian(k, x); },
        [&](const Vector<Scalar>& x) { return model.measurement_hessians(k, x); }, belief, model.is_affine(),
        model.step_policy());
}

} // namespace pcrlb
