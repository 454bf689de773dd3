/// @file fim.hpp Recursive posterior Fisher information and its Gaussian approximations.
///
/// The information matrix follows
///
///     J_{k+1} = D22 - D12' (J_k + D11)^-1 D12,     J_0 = P_0^-1.
///
/// Three ways of filling the D terms are provided:
///   - true_fim_terms_mc: expectations over samples of the true state (the exact bound);
///   - mean_only_terms:   model derivatives at the state estimate, noise Q and R;
///   - mean_cov_terms:    Gaussian moments of the second-order Taylor expansion, which
///                        also depend on the estimate covariance.
///
/// decompose_terms splits the mean+covariance terms into the mean-only part (starred
/// blocks) and a correction, so that J_{k+1} = Theta + Pi where Theta is the mean-only
/// update. bound_difference then gives the gap between the two bounds in closed form.
///
/// Index convention: `k` is the time of the conditioning state. The step uses the
/// model's transition, process noise and measurement at time k+1 (see model.hpp).
#pragma once

#include "pcrlb/linalg.hpp"
#include "pcrlb/moments.hpp"

#include <type_traits>

namespace pcrlb
{

template <typename Scalar>
struct FimTriple
{
    Matrix<Scalar> d11;
    Matrix<Scalar> d12;  ///< D21 is d12'
    Matrix<Scalar> d22;
};

template <typename Scalar>
struct DecomposedFim
{
    Matrix<Scalar> sigma11_star;
    Matrix<Scalar> sigma11;
    Matrix<Scalar> sigma12_star;
    Matrix<Scalar> sigma12;
    Matrix<Scalar> sigma22_star;
    Matrix<Scalar> sigma22;
    Matrix<Scalar> psi_x;  ///< n x n
    Matrix<Scalar> psi_z;  ///< m x m

    FimTriple<Scalar> star() const { return {sigma11_star, sigma12_star, sigma22_star}; }
    FimTriple<Scalar> combined() const
    {
        return {sigma11_star + sigma11, sigma12_star + sigma12, sigma22_star + sigma22};
    }
};

/// Output of the split recursion. `pi_fallback` marks steps where Pi was obtained as
/// J_{k+1} - Theta because the correction block sigma11 could not be inverted.
template <typename Scalar>
struct SplitRecursion
{
    Matrix<Scalar> j_next;
    Matrix<Scalar> theta;
    Matrix<Scalar> pi;
    bool pi_fallback = false;
};

/// A matrix result that may have come from a fallback path.
template <typename Scalar>
struct FlaggedMatrix
{
    Matrix<Scalar> value;
    bool fallback = false;
};

/// Matrices whose condition number reaches this are treated as singular by the
/// closed-form split formulas.
inline constexpr double kSplitConditionLimit = 1e12;

/// Relative size below which the curvature spread is treated as zero, giving Psi = 0.
inline constexpr double kPsiThreshold = 1e-12;

template <typename Scalar>
Matrix<Scalar> initial_fim(const GaussianPrior<Scalar>& prior)
{
    return spd_inverse<Scalar>(prior.cov);
}

template <typename Scalar>
Matrix<Scalar> fim_recursion_step(const Matrix<Scalar>& j_k, const FimTriple<Scalar>& terms)
{
    const auto n = j_k.rows();
    if (j_k.cols() != n || terms.d11.rows() != n || terms.d12.rows() != n || terms.d22.rows() != n)
        throw std::invalid_argument("fim_recursion_step: shape mismatch");
    const Matrix<Scalar> a = symmetrized(Matrix<Scalar>(j_k + terms.d11));
    Matrix<Scalar> solved;
    Eigen::LLT<Matrix<Scalar>> llt(a);
    if (llt.info() == Eigen::Success) {
        solved = llt.solve(terms.d12);
    } else {
        Eigen::FullPivLU<Matrix<Scalar>> lu(a);
        if (!lu.isInvertible())
            throw NumericError("fim_recursion_step: J_k + D11 is singular");
        solved = lu.solve(terms.d12);
    }
    Matrix<Scalar> next = terms.d22 - terms.d12.transpose() * solved;
    throw_if_nonfinite(next, "fim_recursion_step");
    return symmetrized(next);
}

/// Sample averages of F'Q^-1 F, -F'Q^-1 and Q^-1 + H'R^-1 H, with F taken at the
/// time-k samples and H at the time-(k+1) samples (columns).
template <typename Scalar>
FimTriple<Scalar> true_fim_terms_mc(const SystemModel<Scalar>& model, int k, const std::type_identity_t<Matrix<Scalar>>& states_k,
                                    const std::type_identity_t<Matrix<Scalar>>& states_next)
{
    const auto n = model.state_dim();
    const auto count = states_k.cols();
    if (count == 0)
        throw std::invalid_argument("true_fim_terms_mc: empty sample");
    if (states_next.cols() != count || states_k.rows() != n || states_next.rows() != n)
        throw std::invalid_argument("true_fim_terms_mc: sample shape mismatch");

    const int t = k + 1;
    const Matrix<Scalar> q_inv = spd_inverse<Scalar>(model.process_cov(t));
    const Matrix<Scalar> r_inv = spd_inverse<Scalar>(model.meas_cov(t));
    Matrix<Scalar> sum_ff = Matrix<Scalar>::Zero(n, n);
    Matrix<Scalar> sum_f = Matrix<Scalar>::Zero(n, n);
    Matrix<Scalar> sum_hh = Matrix<Scalar>::Zero(n, n);
    for (Eigen::Index s = 0; s < count; ++s) {
        const Matrix<Scalar> f = model.transition_jacobian(t, Vector<Scalar>(states_k.col(s)));
        const Matrix<Scalar> h = model.measurement_jacobian(t, Vector<Scalar>(states_next.col(s)));
        sum_ff.noalias() += f.transpose() * q_inv * f;
        sum_f += f;
        sum_hh.noalias() += h.transpose() * r_inv * h;
    }
    const Scalar inv_count = Scalar(1) / Scalar(count);
    FimTriple<Scalar> out;
    out.d11 = symmetrized(Matrix<Scalar>(sum_ff * inv_count));
    out.d12 = -(sum_f * inv_count).transpose() * q_inv;
    out.d22 = symmetrized(Matrix<Scalar>(q_inv + sum_hh * inv_count));
    return out;
}

/// Mean-only terms: transition Jacobian at `estimate` (time k), measurement Jacobian at
/// `measurement_point` (an estimate of x_{k+1}).
template <typename Scalar>
FimTriple<Scalar> mean_only_terms(const SystemModel<Scalar>& model, int k, const std::type_identity_t<Vector<Scalar>>& estimate,
                                  const std::type_identity_t<Vector<Scalar>>& measurement_point)
{
    const int t = k + 1;
    const Matrix<Scalar> q_inv = spd_inverse<Scalar>(model.process_cov(t));
    const Matrix<Scalar> r_inv = spd_inverse<Scalar>(model.meas_cov(t));
    const Matrix<Scalar> f = model.transition_jacobian(t, estimate);
    const Matrix<Scalar> h = model.measurement_jacobian(t, measurement_point);
    FimTriple<Scalar> out;
    out.d11 = symmetrized(Matrix<Scalar>(f.transpose() * q_inv * f));
    out.d12 = -f.transpose() * q_inv;
    out.d22 = symmetrized(Matrix<Scalar>(q_inv + h.transpose() * r_inv * h));
    return out;
}

template <typename Scalar>
FimTriple<Scalar> mean_only_terms(const SystemModel<Scalar>& model, int k, const std::type_identity_t<Vector<Scalar>>& estimate)
{
    return mean_only_terms(model, k, estimate, estimate);
}

namespace detail
{

/// Everything the mean+covariance terms and their decomposition consume.
template <typename Scalar>
struct MomentTerms
{
    Matrix<Scalar> q_inv;
    Matrix<Scalar> r_inv;
    PropagatedMoments<Scalar> state;
    MomentMapDerivatives<Scalar> state_d;
    PropagatedMoments<Scalar> meas;
    MomentMapDerivatives<Scalar> meas_d;
    Matrix<Scalar> px_inv;
    Matrix<Scalar> pz_inv;
};

template <typename Scalar>
MomentTerms<Scalar> moment_terms(const SystemModel<Scalar>& model, int k, const std::type_identity_t<GaussianBelief<Scalar>>& state_belief,
                                 const std::type_identity_t<GaussianBelief<Scalar>>& meas_belief)
{
    const int t = k + 1;
    MomentTerms<Scalar> mt;
    mt.q_inv = spd_inverse<Scalar>(model.process_cov(t));
    mt.r_inv = spd_inverse<Scalar>(model.meas_cov(t));
    mt.state = propagate_state_moments(model, t, state_belief);
    mt.state_d = state_moment_map_derivatives(model, t, state_belief);
    mt.meas = propagate_measurement_moments(model, t, meas_belief);
    mt.meas_d = measurement_moment_map_derivatives(model, t, meas_belief);
    mt.px_inv = spd_inverse<Scalar>(mt.state.cov);
    mt.pz_inv = spd_inverse<Scalar>(mt.meas.cov);
    return mt;
}

/// Half of tr(P^-1 dP_i P^-1 dP_j) arranged as a matrix over (i, j).
template <typename Scalar>
Matrix<Scalar> covariance_information(const Matrix<Scalar>& p_inv, const MatrixList<Scalar>& derivatives)
{
    const auto n = static_cast<Eigen::Index>(derivatives.size());
    MatrixList<Scalar> whitened;
    whitened.reserve(derivatives.size());
    for (const auto& d : derivatives)
        whitened.push_back(p_inv * d);
    Matrix<Scalar> out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const Scalar v =
                Scalar(0.5) * (whitened[static_cast<std::size_t>(i)] * whitened[static_cast<std::size_t>(j)]).trace();
            out(i, j) = v;
            out(j, i) = v;
        }
    return out;
}

/// [N S^-1 N + N]^-1 for noise N and curvature spread S; zero when S is negligible.
template <typename Scalar>
Matrix<Scalar> psi_matrix(const Matrix<Scalar>& noise, const Matrix<Scalar>& spread, const Matrix<Scalar>& noise_inv)
{
    const auto d = noise.rows();
    if (spread.norm() <= Scalar(kPsiThreshold) * noise.norm())
        return Matrix<Scalar>::Zero(d, d);
    Eigen::LLT<Matrix<Scalar>> llt(spread);
    if (llt.info() == Eigen::Success && condition_number(spread) < Scalar(kSplitConditionLimit)) {
        const Matrix<Scalar> inner = noise * llt.solve(noise) + noise;
        return symmetrized(spd_inverse<Scalar>(symmetrized(inner)));
    }
    // Rank-deficient spread: same quantity through (N + S)^-1 = N^-1 - Psi.
    return symmetrized(Matrix<Scalar>(noise_inv - spd_inverse<Scalar>(symmetrized(Matrix<Scalar>(noise + spread)))));
}

} // namespace detail

/// Mean+covariance information terms. `state_belief` is the estimate of x_k,
/// `meas_belief` the estimate of x_{k+1} at which the measurement moments are formed.
template <typename Scalar>
FimTriple<Scalar> mean_cov_terms(const SystemModel<Scalar>& model, int k, const std::type_identity_t<GaussianBelief<Scalar>>& state_belief,
                                 const std::type_identity_t<GaussianBelief<Scalar>>& meas_belief)
{
    const auto mt = detail::moment_terms(model, k, state_belief, meas_belief);
    const Matrix<Scalar>& g = mt.state_d.mean_jacobian;
    const Matrix<Scalar>& gz = mt.meas_d.mean_jacobian;

    FimTriple<Scalar> out;
    out.d11 = symmetrized(Matrix<Scalar>(g.transpose() * mt.px_inv * g +
                                         detail::covariance_information(mt.px_inv, mt.state_d.cov_derivatives)));
    out.d12 = -g.transpose() * mt.px_inv;
    out.d22 = symmetrized(Matrix<Scalar>(mt.px_inv + gz.transpose() * mt.pz_inv * gz +
                                         detail::covariance_information(mt.pz_inv, mt.meas_d.cov_derivatives)));
    throw_if_nonfinite(out.d11, "mean_cov_terms d11");
    throw_if_nonfinite(out.d22, "mean_cov_terms d22");
    return out;
}

/// Splits the mean+covariance terms into mean-only (starred) blocks plus corrections.
template <typename Scalar>
DecomposedFim<Scalar> decompose_terms(const SystemModel<Scalar>& model, int k,
                                      const std::type_identity_t<GaussianBelief<Scalar>>& state_belief,
                                      const std::type_identity_t<GaussianBelief<Scalar>>& meas_belief)
{
    const int t = k + 1;
    const auto mt = detail::moment_terms(model, k, state_belief, meas_belief);
    const Matrix<Scalar>& f = mt.state_d.map_jacobian;
    const Matrix<Scalar>& b = mt.state_d.curvature_mean_jacobian;
    const Matrix<Scalar>& g = mt.state_d.mean_jacobian;
    const Matrix<Scalar>& h = mt.meas_d.map_jacobian;
    const Matrix<Scalar>& bz = mt.meas_d.curvature_mean_jacobian;
    const Matrix<Scalar>& gz = mt.meas_d.mean_jacobian;

    DecomposedFim<Scalar> dec;
    dec.psi_x = detail::psi_matrix<Scalar>(model.process_cov(t), mt.state.spread_cov, mt.q_inv);
    dec.psi_z = detail::psi_matrix<Scalar>(model.meas_cov(t), mt.meas.spread_cov, mt.r_inv);

    dec.sigma11_star = symmetrized(Matrix<Scalar>(f.transpose() * mt.q_inv * f));
    dec.sigma11 = detail::covariance_information(mt.px_inv, mt.state_d.cov_derivatives) +
                  b.transpose() * mt.q_inv * f + g.transpose() * (mt.q_inv * b - dec.psi_x * g);

    dec.sigma12_star = -f.transpose() * mt.q_inv;
    dec.sigma12 = g.transpose() * dec.psi_x - b.transpose() * mt.q_inv;

    dec.sigma22_star = symmetrized(Matrix<Scalar>(mt.q_inv + h.transpose() * mt.r_inv * h));
    dec.sigma22 = detail::covariance_information(mt.pz_inv, mt.meas_d.cov_derivatives) - dec.psi_x +
                  bz.transpose() * mt.r_inv * h + gz.transpose() * (mt.r_inv * bz - dec.psi_z * gz);
    return dec;
}

/// J_{k+1} = Theta + Pi from the decomposed terms.
template <typename Scalar>
SplitRecursion<Scalar> fim_via_decomposition(const Matrix<Scalar>& j_k, const DecomposedFim<Scalar>& dec)
{
    const Matrix<Scalar> a = j_k + dec.sigma11_star;
    const Matrix<Scalar> a_inv = checked_inverse<Scalar>(a, "fim_via_decomposition(J + sigma11*)");
    const FimTriple<Scalar> full = dec.combined();

    SplitRecursion<Scalar> out;
    out.theta = symmetrized(Matrix<Scalar>(dec.sigma22_star - dec.sigma12_star.transpose() * a_inv * dec.sigma12_star));

    const bool sigma11_invertible = condition_number(dec.sigma11) < Scalar(kSplitConditionLimit);
    if (sigma11_invertible) {
        const Matrix<Scalar> m_inv = checked_inverse<Scalar>(Matrix<Scalar>(j_k + full.d11), "fim_via_decomposition(J + D11)");
        const Matrix<Scalar> sigma11_inv = checked_inverse<Scalar>(dec.sigma11, "fim_via_decomposition(sigma11)");
        const Matrix<Scalar> phi = checked_inverse<Scalar>(Matrix<Scalar>(a * sigma11_inv * a + a), "fim_via_decomposition(phi)");
        const Matrix<Scalar> pi = dec.sigma22 - full.d12.transpose() * m_inv * dec.sigma12 -
                                  (dec.sigma12.transpose() * m_inv - dec.sigma12_star.transpose() * phi) * dec.sigma12_star;
        out.pi = symmetrized(pi);
        out.j_next = symmetrized(Matrix<Scalar>(out.theta + out.pi));
    } else {
        out.j_next = fim_recursion_step(j_k, full);
        out.pi = symmetrized(Matrix<Scalar>(out.j_next - out.theta));
        out.pi_fallback = true;
    }
    throw_if_nonfinite(out.j_next, "fim_via_decomposition");
    return out;
}

/// J^-1 = Theta^-1 - (Pi^-1 Theta + I)^-1 Theta^-1, or (Theta + Pi)^-1 when Pi is singular.
template <typename Scalar>
FlaggedMatrix<Scalar> pcrlb_from_theta_pi(const Matrix<Scalar>& theta, const Matrix<Scalar>& pi)
{
    const auto n = theta.rows();
    if (condition_number(pi) >= Scalar(kSplitConditionLimit))
        return {spd_inverse<Scalar>(symmetrized(Matrix<Scalar>(theta + pi))), true};
    const Matrix<Scalar> theta_inv = checked_inverse<Scalar>(theta, "pcrlb_from_theta_pi(theta)");
    const Matrix<Scalar> pi_inv = checked_inverse<Scalar>(pi, "pcrlb_from_theta_pi(pi)");
    const Matrix<Scalar> bracket = pi_inv * theta + Matrix<Scalar>::Identity(n, n);
    return {symmetrized(Matrix<Scalar>(theta_inv - checked_inverse<Scalar>(bracket, "pcrlb_from_theta_pi") * theta_inv)),
            false};
}

/// Gap between the mean-only and mean+covariance bounds: (Pi^-1 J* + I)^-1 J*^-1.
template <typename Scalar>
FlaggedMatrix<Scalar> bound_difference(const Matrix<Scalar>& j_star, const Matrix<Scalar>& pi)
{
    const auto n = j_star.rows();
    const Matrix<Scalar> j_star_inv = checked_inverse<Scalar>(j_star, "bound_difference(J*)");
    if (condition_number(pi) >= Scalar(kSplitConditionLimit)) {
        const Matrix<Scalar> direct = j_star_inv - checked_inverse<Scalar>(Matrix<Scalar>(j_star + pi), "bound_difference");
        return {symmetrized(direct), true};
    }
    const Matrix<Scalar> pi_inv = checked_inverse<Scalar>(pi, "bound_difference(pi)");
    const Matrix<Scalar> bracket = pi_inv * j_star + Matrix<Scalar>::Identity(n, n);
    return {symmetrized(Matrix<Scalar>(checked_inverse<Scalar>(bracket, "bound_difference") * j_star_inv)), false};
}

} // namespace pcrlb
