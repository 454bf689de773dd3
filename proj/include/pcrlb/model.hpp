/// @file model.hpp Discrete-time state-space models with additive Gaussian noise.
///
/// Time convention: `transition(k, x)` maps the state at time k-1 to the noise-free
/// state at time k, and `process_cov(k)` is the covariance of the noise added there.
/// `measure(k, x)` maps the state at time k to the noise-free measurement z_k.
/// A step of the information recursion from time k to k+1 therefore uses the
/// transition, process noise and measurement indexed by k+1.
#pragma once

#include "pcrlb/finite_difference.hpp"
#include "pcrlb/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>

namespace pcrlb
{

template <typename Scalar>
struct GaussianPrior
{
    Vector<Scalar> mean;
    Matrix<Scalar> cov;
};

/// A vector map together with optional analytic derivatives. Missing derivatives
/// are replaced by central finite differences.
template <typename Scalar>
struct ModelChannel
{
    std::function<Vector<Scalar>(int, const Vector<Scalar>&)> value;
    std::function<Matrix<Scalar>(int, const Vector<Scalar>&)> jacobian;
    std::function<MatrixList<Scalar>(int, const Vector<Scalar>&)> hessians;
};

template <typename Scalar>
using CovarianceSchedule = std::function<Matrix<Scalar>(int)>;

namespace detail
{

template <typename Scalar>
void check_covariance(const Matrix<Scalar>& c, Eigen::Index dim, const std::string& what)
{
    if (c.rows() != dim || c.cols() != dim)
        throw std::invalid_argument(what + ": expected " + std::to_string(dim) + "x" + std::to_string(dim) +
                                    ", got " + std::to_string(c.rows()) + "x" + std::to_string(c.cols()));
    throw_if_nonfinite(c, what);
    const Scalar mag = std::max(Scalar(1), c.cwiseAbs().maxCoeff());
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * mag)
        throw std::invalid_argument(what + ": not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(symmetrized(c), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -Scalar(1e-12) * mag)
        throw std::invalid_argument(what + ": not positive semidefinite");
}

} // namespace detail

/// Factor L with L L' = c for a symmetric PSD matrix (Cholesky, eigen fallback for singular c).
template <typename Scalar>
Matrix<Scalar> psd_sqrt(const Matrix<Scalar>& c)
{
    if (c.size() == 0)
        return c;
    Eigen::LLT<Matrix<Scalar>> llt(symmetrized(c));
    if (llt.info() == Eigen::Success)
        return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(symmetrized(c));
    Vector<Scalar> root = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal();
}

template <typename Scalar>
class SystemModel
{
public:
    using VectorType = Vector<Scalar>;
    using MatrixType = Matrix<Scalar>;

    SystemModel(std::string name, int state_dim, int meas_dim, ModelChannel<Scalar> transition,
                ModelChannel<Scalar> measurement, CovarianceSchedule<Scalar> process_cov,
                CovarianceSchedule<Scalar> meas_cov, GaussianPrior<Scalar> prior, bool affine = false)
        : name_(std::move(name)), n_(state_dim), m_(meas_dim), transition_(std::move(transition)),
          measurement_(std::move(measurement)), process_cov_(std::move(process_cov)),
          meas_cov_(std::move(meas_cov)), prior_(std::move(prior)), affine_(affine)
    {
        if (n_ < 1 || m_ < 1)
            throw std::invalid_argument("SystemModel: dimensions must be positive");
        if (!transition_.value || !measurement_.value)
            throw std::invalid_argument("SystemModel: transition and measurement maps are required");
        if (!process_cov_ || !meas_cov_)
            throw std::invalid_argument("SystemModel: noise covariances are required");
        if (prior_.mean.size() != n_)
            throw std::invalid_argument("SystemModel: prior mean has wrong length");
        detail::check_covariance<Scalar>(prior_.cov, n_, "prior covariance");
    }

    const std::string& name() const { return name_; }
    int state_dim() const { return n_; }
    int meas_dim() const { return m_; }
    const GaussianPrior<Scalar>& prior() const { return prior_; }

    /// True when both maps are affine, so all Hessians vanish identically.
    bool is_affine() const { return affine_; }

    bool analytic_transition_derivatives() const
    {
        return static_cast<bool>(transition_.jacobian) && static_cast<bool>(transition_.hessians);
    }
    bool analytic_measurement_derivatives() const
    {
        return static_cast<bool>(measurement_.jacobian) && static_cast<bool>(measurement_.hessians);
    }

    const StepPolicy<Scalar>& step_policy() const { return policy_; }
    void set_step_policy(const StepPolicy<Scalar>& policy) { policy_ = policy; }

    MatrixType process_cov(int k) const
    {
        MatrixType q = process_cov_(k);
        detail::check_covariance<Scalar>(q, n_, "process covariance");
        return q;
    }

    MatrixType meas_cov(int k) const
    {
        MatrixType r = meas_cov_(k);
        detail::check_covariance<Scalar>(r, m_, "measurement covariance");
        return r;
    }

    VectorType transition(int k, const VectorType& x) const
    {
        check_state(x, "transition");
        VectorType y = transition_.value(k, x);
        if (y.size() != n_)
            throw std::invalid_argument("transition: map returned wrong length");
        return y;
    }

    VectorType measure(int k, const VectorType& x) const
    {
        check_state(x, "measure");
        VectorType y = measurement_.value(k, x);
        if (y.size() != m_)
            throw std::invalid_argument("measure: map returned wrong length");
        return y;
    }

    MatrixType transition_jacobian(int k, const VectorType& x) const
    {
        return jacobian_of(transition_, n_, k, x, "transition_jacobian");
    }

    MatrixType measurement_jacobian(int k, const VectorType& x) const
    {
        return jacobian_of(measurement_, m_, k, x, "measurement_jacobian");
    }

    MatrixList<Scalar> transition_hessians(int k, const VectorType& x) const
    {
        return hessians_of(transition_, n_, k, x, "transition_hessians");
    }

    MatrixList<Scalar> measurement_hessians(int k, const VectorType& x) const
    {
        return hessians_of(measurement_, m_, k, x, "measurement_hessians");
    }

private:
    void check_state(const VectorType& x, const char* what) const
    {
        if (x.size() != n_)
            throw std::invalid_argument(std::string(what) + ": state has length " + std::to_string(x.size()) +
                                        ", expected " + std::to_string(n_));
    }

    MatrixType jacobian_of(const ModelChannel<Scalar>& ch, int rows, int k, const VectorType& x,
                           const char* what) const
    {
        check_state(x, what);
        MatrixType jac = ch.jacobian ? ch.jacobian(k, x)
                                     : fd_jacobian<Scalar>([&](const VectorType& p) { return ch.value(k, p); }, x,
                                                           policy_);
        if (jac.rows() != rows || jac.cols() != n_)
            throw std::invalid_argument(std::string(what) + ": wrong shape");
        throw_if_nonfinite(jac, what);
        return jac;
    }

    MatrixList<Scalar> hessians_of(const ModelChannel<Scalar>& ch, int count, int k, const VectorType& x,
                                   const char* what) const
    {
        check_state(x, what);
        MatrixList<Scalar> hess;
        if (affine_)
            hess.assign(static_cast<std::size_t>(count), MatrixType::Zero(n_, n_));
        else if (ch.hessians)
            hess = ch.hessians(k, x);
        else
            hess = fd_hessian<Scalar>([&](const VectorType& p) { return ch.value(k, p); }, x, policy_);
        if (hess.size() != static_cast<std::size_t>(count))
            throw std::invalid_argument(std::string(what) + ": wrong number of Hessians");
        for (auto& h : hess) {
            if (h.rows() != n_ || h.cols() != n_)
                throw std::invalid_argument(std::string(what) + ": wrong Hessian shape");
            throw_if_nonfinite(h, what);
            h = symmetrized(h);
        }
        return hess;
    }

    std::string name_;
    int n_;
    int m_;
    ModelChannel<Scalar> transition_;
    ModelChannel<Scalar> measurement_;
    CovarianceSchedule<Scalar> process_cov_;
    CovarianceSchedule<Scalar> meas_cov_;
    GaussianPrior<Scalar> prior_;
    bool affine_;
    StepPolicy<Scalar> policy_{};
};

using SystemModeld = SystemModel<double>;

template <typename Scalar>
CovarianceSchedule<Scalar> constant_covariance(Matrix<Scalar> c)
{
    return [c = std::move(c)](int) { return c; };
}

/// States x_0..x_T as columns of an n x (T+1) matrix and measurements z_1..z_T as
/// columns of an m x T matrix (column k-1 holds z_k).
template <typename Scalar>
struct Trajectory
{
    Matrix<Scalar> states;
    Matrix<Scalar> measurements;
    std::uint64_t seed = 0;

    int horizon() const { return static_cast<int>(measurements.cols()); }
    Vector<Scalar> x(int k) const { return states.col(k); }
    Vector<Scalar> z(int k) const { return measurements.col(k - 1); }
};

using Trajectoryd = Trajectory<double>;

/// Draws x_0 from the prior, then x_k = f(x_{k-1}) + w_k and z_k = h(x_k) + v_k for k = 1..T.
template <typename Scalar>
Trajectory<Scalar> sample_trajectory(const SystemModel<Scalar>& model, int horizon, std::uint64_t seed)
{
    if (horizon < 1)
        throw std::invalid_argument("sample_trajectory: horizon must be >= 1");
    const int n = model.state_dim();
    const int m = model.meas_dim();
    std::mt19937_64 rng(seed);
    std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
    auto draw = [&](int dim) {
        Vector<Scalar> e(dim);
        for (int i = 0; i < dim; ++i)
            e(i) = normal(rng);
        return e;
    };

    Trajectory<Scalar> traj;
    traj.seed = seed;
    traj.states.resize(n, horizon + 1);
    traj.measurements.resize(m, horizon);

    traj.states.col(0) = model.prior().mean + psd_sqrt<Scalar>(model.prior().cov) * draw(n);
    for (int k = 1; k <= horizon; ++k) {
        const Vector<Scalar> prev = traj.states.col(k - 1);
        traj.states.col(k) = model.transition(k, prev) + psd_sqrt<Scalar>(model.process_cov(k)) * draw(n);
        const Vector<Scalar> xk = traj.states.col(k);
        traj.measurements.col(k - 1) = model.measure(k, xk) + psd_sqrt<Scalar>(model.meas_cov(k)) * draw(m);
    }
    return traj;
}

namespace ungm
{

// Scalar pieces of x_k = 0.5 x + 25 x / (1 + x^2) + 8 cos(1.2 (k - 1)),  z_k = x_k^2 / 20.

template <typename Scalar>
Scalar drift(int k, Scalar x)
{
    return Scalar(0.5) * x + Scalar(25) * x / (Scalar(1) + x * x) + Scalar(8) * std::cos(Scalar(1.2) * Scalar(k - 1));
}

template <typename Scalar>
Scalar drift_d1(Scalar x)
{
    const Scalar d = Scalar(1) + x * x;
    return Scalar(0.5) + Scalar(25) * (Scalar(1) - x * x) / (d * d);
}

template <typename Scalar>
Scalar drift_d2(Scalar x)
{
    const Scalar d = Scalar(1) + x * x;
    return Scalar(25) * (Scalar(2) * x * x * x - Scalar(6) * x) / (d * d * d);
}

template <typename Scalar>
Scalar drift_d3(Scalar x)
{
    const Scalar x2 = x * x;
    const Scalar d = Scalar(1) + x2;
    return Scalar(25) * (-Scalar(6) * x2 * x2 + Scalar(36) * x2 - Scalar(6)) / (d * d * d * d);
}

template <typename Scalar>
Scalar observation(Scalar x)
{
    return x * x / Scalar(20);
}

template <typename Scalar>
Scalar observation_d1(Scalar x)
{
    return x / Scalar(10);
}

template <typename Scalar>
constexpr Scalar observation_d2()
{
    return Scalar(1) / Scalar(10);
}

} // namespace ungm

/// Univariate nonlinear growth model with analytic first and second derivatives.
template <typename Scalar>
SystemModel<Scalar> ungm_model(Scalar process_var = Scalar(1), Scalar meas_var = Scalar(5),
                               std::optional<GaussianPrior<Scalar>> prior = std::nullopt)
{
    if (!(process_var > Scalar(0)) || !(meas_var > Scalar(0)))
        throw std::invalid_argument("ungm_model: variances must be positive");
    GaussianPrior<Scalar> p = prior.value_or(
        GaussianPrior<Scalar>{Vector<Scalar>::Zero(1), Matrix<Scalar>::Constant(1, 1, Scalar(20))});

    using V = Vector<Scalar>;
    using M = Matrix<Scalar>;
    ModelChannel<Scalar> f;
    f.value = [](int k, const V& x) { return V::Constant(1, ungm::drift(k, x(0))); };
    f.jacobian = [](int, const V& x) { return M::Constant(1, 1, ungm::drift_d1(x(0))); };
    f.hessians = [](int, const V& x) { return MatrixList<Scalar>{M::Constant(1, 1, ungm::drift_d2(x(0)))}; };

    ModelChannel<Scalar> h;
    h.value = [](int, const V& x) { return V::Constant(1, ungm::observation(x(0))); };
    h.jacobian = [](int, const V& x) { return M::Constant(1, 1, ungm::observation_d1(x(0))); };
    h.hessians = [](int, const V&) { return MatrixList<Scalar>{M::Constant(1, 1, ungm::observation_d2<Scalar>())}; };

    return SystemModel<Scalar>("ungm", 1, 1, std::move(f), std::move(h),
                               constant_covariance<Scalar>(M::Constant(1, 1, process_var)),
                               constant_covariance<Scalar>(M::Constant(1, 1, meas_var)), std::move(p));
}

/// x_k = A x_{k-1} + w_k, z_k = H x_k + v_k.
template <typename Scalar>
SystemModel<Scalar> linear_gaussian_model(const Matrix<Scalar>& a, const Matrix<Scalar>& h, const Matrix<Scalar>& q,
                                          const Matrix<Scalar>& r, GaussianPrior<Scalar> prior)
{
    const auto n = a.rows();
    const auto m = h.rows();
    if (n < 1 || a.cols() != n)
        throw std::invalid_argument("linear_gaussian_model: A must be square and non-empty");
    if (m < 1 || h.cols() != n)
        throw std::invalid_argument("linear_gaussian_model: H must be m x n");
    detail::check_covariance<Scalar>(q, n, "linear_gaussian_model: Q");
    detail::check_covariance<Scalar>(r, m, "linear_gaussian_model: R");

    using V = Vector<Scalar>;
    using M = Matrix<Scalar>;
    ModelChannel<Scalar> f;
    f.value = [a](int, const V& x) -> V { return a * x; };
    f.jacobian = [a](int, const V&) -> M { return a; };
    f.hessians = [n](int, const V&) { return MatrixList<Scalar>(static_cast<std::size_t>(n), M::Zero(n, n)); };

    ModelChannel<Scalar> g;
    g.value = [h](int, const V& x) -> V { return h * x; };
    g.jacobian = [h](int, const V&) -> M { return h; };
    g.hessians = [n, m](int, const V&) { return MatrixList<Scalar>(static_cast<std::size_t>(m), M::Zero(n, n)); };

    return SystemModel<Scalar>("linear", static_cast<int>(n), static_cast<int>(m), std::move(f), std::move(g),
                               constant_covariance<Scalar>(q), constant_covariance<Scalar>(r), std::move(prior),
                               /*affine=*/true);
}

} // namespace pcrlb
