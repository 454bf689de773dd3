/// @file finite_difference.hpp Central-difference Jacobians and Hessians of vector maps.
#pragma once

#include "pcrlb/types.hpp"

#include <cmath>
#include <limits>

namespace pcrlb
{

/// Step scaling for central differences. Step along coordinate i is scale * max(1, |x_i|).
template <typename Scalar>
struct StepPolicy
{
    Scalar jacobian_scale = std::cbrt(std::numeric_limits<Scalar>::epsilon());
    Scalar hessian_scale = std::sqrt(std::sqrt(std::numeric_limits<Scalar>::epsilon()));

    Scalar jacobian_step(Scalar xi) const { return jacobian_scale * std::max(Scalar(1), std::abs(xi)); }
    Scalar hessian_step(Scalar xi) const { return hessian_scale * std::max(Scalar(1), std::abs(xi)); }
};

namespace detail
{

template <typename Scalar, typename Map>
Vector<Scalar> evaluate_checked(const Map& map, const Vector<Scalar>& x)
{
    Vector<Scalar> y = map(x);
    throw_if_nonfinite(y, "finite difference evaluation");
    return y;
}

} // namespace detail

/// Jacobian (rows: outputs, cols: inputs) of `map` at `x`.
template <typename Scalar, typename Map>
Matrix<Scalar> fd_jacobian(const Map& map, const Vector<Scalar>& x, const StepPolicy<Scalar>& policy = {})
{
    const Vector<Scalar> y0 = detail::evaluate_checked<Scalar>(map, x);
    Matrix<Scalar> jac(y0.size(), x.size());
    Vector<Scalar> xp = x;
    Vector<Scalar> xm = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const Scalar h = policy.jacobian_step(x(j));
        xp(j) = x(j) + h;
        xm(j) = x(j) - h;
        // Actual spacing, so the rounding of x +- h does not bias the quotient.
        const Scalar span = xp(j) - xm(j);
        jac.col(j) = (detail::evaluate_checked<Scalar>(map, xp) - detail::evaluate_checked<Scalar>(map, xm)) / span;
        xp(j) = x(j);
        xm(j) = x(j);
    }
    return jac;
}

/// One symmetric Hessian per output component of `map`, at `x`.
template <typename Scalar, typename Map>
MatrixList<Scalar> fd_hessian(const Map& map, const Vector<Scalar>& x, const StepPolicy<Scalar>& policy = {})
{
    const auto n = x.size();
    const Vector<Scalar> y0 = detail::evaluate_checked<Scalar>(map, x);
    const auto m = y0.size();
    MatrixList<Scalar> hess(static_cast<std::size_t>(m), Matrix<Scalar>::Zero(n, n));

    Vector<Scalar> steps(n);
    for (Eigen::Index i = 0; i < n; ++i)
        steps(i) = policy.hessian_step(x(i));

    auto shifted = [&](Eigen::Index i, Scalar si, Eigen::Index j, Scalar sj) {
        Vector<Scalar> xs = x;
        xs(i) += si * steps(i);
        xs(j) += sj * steps(j);
        return detail::evaluate_checked<Scalar>(map, xs);
    };

    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector<Scalar> second =
            (shifted(i, 1, i, 0) - Scalar(2) * y0 + shifted(i, -1, i, 0)) / (steps(i) * steps(i));
        for (Eigen::Index c = 0; c < m; ++c)
            hess[static_cast<std::size_t>(c)](i, i) = second(c);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Vector<Scalar> mixed =
                (shifted(i, 1, j, 1) - shifted(i, 1, j, -1) - shifted(i, -1, j, 1) + shifted(i, -1, j, -1)) /
                (Scalar(4) * steps(i) * steps(j));
            for (Eigen::Index c = 0; c < m; ++c) {
                hess[static_cast<std::size_t>(c)](i, j) = mixed(c);
                hess[static_cast<std::size_t>(c)](j, i) = mixed(c);
            }
        }
    }
    return hess;
}

} // namespace pcrlb
