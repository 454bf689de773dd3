/// @file types.hpp Common dense types, error classes and covariance helpers.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcrlb
{

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// A list of n x n matrices, one per output component (Hessians, covariance derivatives).
template <typename Scalar>
using MatrixList = std::vector<Matrix<Scalar>>;

/// Raised when a computation produces non-finite values or hits a singular matrix.
class NumericError : public std::runtime_error
{
public:
    explicit NumericError(const std::string& what, int row = -1, int col = -1)
        : std::runtime_error(what), row_(row), col_(col)
    {
    }

    /// Offending entry, -1 when not applicable.
    int row() const noexcept { return row_; }
    int col() const noexcept { return col_; }

private:
    int row_;
    int col_;
};

/// Particle weights collapsed to zero or became non-finite.
class DegenerateWeightsError : public NumericError
{
public:
    using NumericError::NumericError;
};

/// Mean and covariance of a Gaussian approximation.
template <typename Scalar>
struct GaussianBelief
{
    Vector<Scalar> mean;
    Matrix<Scalar> cov;

    Eigen::Index dim() const { return mean.size(); }
};

using GaussianBeliefd = GaussianBelief<double>;

template <typename Derived>
auto symmetrized(const Eigen::MatrixBase<Derived>& m)
{
    using Plain = typename Derived::PlainObject;
    Plain s = (m + m.transpose()) / typename Derived::Scalar(2);
    return s;
}

template <typename Derived>
void throw_if_nonfinite(const Eigen::MatrixBase<Derived>& m, const std::string& what)
{
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(static_cast<double>(m(i, j))))
                throw NumericError(what + ": non-finite entry at (" + std::to_string(i) + ", " +
                                       std::to_string(j) + ")",
                                   static_cast<int>(i), static_cast<int>(j));
}

/// Symmetrize and clamp rounding-level negative eigenvalues to zero.
///
/// Eigenvalues below -tol * max(1, |lambda_max|) mean the input was genuinely indefinite.
template <typename Scalar>
Matrix<Scalar> clamp_psd(const Matrix<Scalar>& m, Scalar tol = Scalar(1e-10))
{
    Matrix<Scalar> s = symmetrized(m);
    if (s.size() == 0)
        return s;
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(s);
    const auto& values = eig.eigenvalues();
    const Scalar scale = std::max(Scalar(1), values.cwiseAbs().maxCoeff());
    if (values.minCoeff() < -tol * scale)
        throw NumericError("covariance is indefinite (min eigenvalue " +
                           std::to_string(static_cast<double>(values.minCoeff())) + ")");
    if (values.minCoeff() >= Scalar(0))
        return s;
    Vector<Scalar> clamped = values.cwiseMax(Scalar(0));
    Matrix<Scalar> out = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
    return symmetrized(out);
}

/// Adds epsilon * trace(m)/n * I when m does not admit a Cholesky factorization.
/// A zero trace falls back to an absolute epsilon.
template <typename Scalar>
Matrix<Scalar> regularized(const Matrix<Scalar>& m, Scalar epsilon = Scalar(1e-10))
{
    Matrix<Scalar> s = symmetrized(m);
    Eigen::LLT<Matrix<Scalar>> llt(s);
    if (llt.info() == Eigen::Success)
        return s;
    const auto n = s.rows();
    Scalar scale = s.trace() / Scalar(n);
    if (!(scale > Scalar(0)))
        scale = Scalar(1);
    s.diagonal().array() += epsilon * scale;
    return s;
}

} // namespace pcrlb
