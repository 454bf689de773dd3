/// @file linalg.hpp Small dense inverses used by the information recursions.
#pragma once

#include "pcrlb/types.hpp"

#include <limits>
#include <sstream>

namespace pcrlb
{

/// Ratio of extreme singular values; infinity for singular or empty-norm input.
template <typename Derived>
typename Derived::Scalar condition_number(const Eigen::MatrixBase<Derived>& m)
{
    using Scalar = typename Derived::Scalar;
    using Plain = typename Derived::PlainObject;
    if (m.size() == 0)
        return Scalar(1);
    Eigen::JacobiSVD<Plain> svd(m.eval());
    const auto& sv = svd.singularValues();
    const Scalar smax = sv(0);
    const Scalar smin = sv(sv.size() - 1);
    if (!(smin > Scalar(0)))
        return std::numeric_limits<Scalar>::infinity();
    return smax / smin;
}

template <typename Derived>
bool is_well_conditioned(const Eigen::MatrixBase<Derived>& m, typename Derived::Scalar max_condition)
{
    return condition_number(m) < max_condition;
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
///
/// On factorization failure, jitter epsilon * trace(m)/n * I is added with epsilon
/// escalating from 1e-12 to 1e-6 by decades.
template <typename Scalar>
Matrix<Scalar> spd_inverse(const Matrix<Scalar>& m)
{
    if (m.rows() != m.cols())
        throw std::invalid_argument("spd_inverse: matrix is not square");
    const auto n = m.rows();
    const Scalar asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    const Scalar mag = std::max(Scalar(1), m.cwiseAbs().maxCoeff());
    if (asym > Scalar(1e-8) * mag)
        throw std::invalid_argument("spd_inverse: matrix is not symmetric");
    throw_if_nonfinite(m, "spd_inverse");

    const Matrix<Scalar> s = symmetrized(m);
    const Matrix<Scalar> identity = Matrix<Scalar>::Identity(n, n);
    Eigen::LLT<Matrix<Scalar>> llt(s);
    if (llt.info() == Eigen::Success)
        return symmetrized(llt.solve(identity));

    const Scalar scale = s.trace() / Scalar(n);
    if (scale > Scalar(0)) {
        for (Scalar eps = Scalar(1e-12); eps <= Scalar(1.5e-6); eps *= Scalar(10)) {
            llt.compute(s + eps * scale * identity);
            if (llt.info() == Eigen::Success)
                return symmetrized(llt.solve(identity));
        }
    }
    std::ostringstream msg;
    msg << "spd_inverse: Cholesky failed after jitter escalation (condition number "
        << static_cast<double>(condition_number(s)) << ", trace " << static_cast<double>(s.trace()) << ")";
    throw NumericError(msg.str());
}

/// LU inverse of a general square matrix; throws when the matrix is numerically singular.
template <typename Scalar>
Matrix<Scalar> checked_inverse(const Matrix<Scalar>& m, const char* what = "checked_inverse")
{
    if (m.rows() != m.cols())
        throw std::invalid_argument(std::string(what) + ": matrix is not square");
    throw_if_nonfinite(m, what);
    Eigen::FullPivLU<Matrix<Scalar>> lu(m);
    if (!lu.isInvertible())
        throw NumericError(std::string(what) + ": singular matrix");
    return lu.inverse();
}

/// (a + b)^-1 expressed as a^-1 - (a b^-1 a + a)^-1.
template <typename Scalar>
Matrix<Scalar> inv_lemma_split(const Matrix<Scalar>& a, const Matrix<Scalar>& b)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("inv_lemma_split: shape mismatch");
    const Matrix<Scalar> a_inv = checked_inverse(a, "inv_lemma_split(a)");
    const Matrix<Scalar> b_inv = checked_inverse(b, "inv_lemma_split(b)");
    const Matrix<Scalar> inner = a * b_inv * a + a;
    return a_inv - checked_inverse(inner, "inv_lemma_split(a b^-1 a + a)");
}

} // namespace pcrlb
