#include "pcrlb/experiment.hpp"

#include "oracles/kalman.hpp"

#include <gtest/gtest.h>

#include <random>
#include <unordered_set>

using V = Eigen::VectorXd;
using M = Eigen::MatrixXd;
using namespace pcrlb;

namespace
{

M scalar_m(double x) { return M::Constant(1, 1, x); }

ExperimentConfig linear_config(int runs)
{
    ExperimentConfig c;
    c.model.name = "linear";
    c.model.a = (M(2, 2) << 0.9, 0.1, -0.2, 0.7).finished();
    c.model.h = (M(1, 2) << 1.0, 0.5).finished();
    c.model.q = (M(2, 2) << 0.5, 0.1, 0.1, 0.3).finished();
    c.model.r = scalar_m(0.8);
    c.model.prior_cov = (M(2, 2) << 2.0, 0.3, 0.3, 1.0).finished();
    c.horizon = 30;
    c.runs = runs;
    c.particles = 200;
    c.workers = 1;
    return c;
}

ExperimentConfig small_ungm()
{
    ExperimentConfig c;
    c.horizon = 10;
    c.runs = 4;
    c.particles = 200;
    c.workers = 1;
    return c;
}

void expect_bitwise_equal(const MatrixListd& a, const MatrixListd& b)
{
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k)
        EXPECT_TRUE(a[k] == b[k]) << "step " << k + 1;
}

} // namespace

TEST(DeriveRunSeed, PureAndOrderIndependent)
{
    const auto a = derive_run_seed(123, 7);
    derive_run_seed(999, 1);
    EXPECT_EQ(derive_run_seed(123, 7), a);
    EXPECT_NE(derive_run_seed(123, 7), derive_run_seed(123, 8));
    EXPECT_NE(derive_run_seed(123, 7), derive_run_seed(124, 7));
}

TEST(DeriveRunSeed, NeighbouringIndicesNeverCollide)
{
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1'000'000; ++i) {
        const auto s = rng();
        ASSERT_NE(derive_run_seed(s, 0), derive_run_seed(s, 1)) << "master " << s;
    }
}

TEST(DeriveRunSeed, DistinctAcrossManyRuns)
{
    std::unordered_set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 100'000; ++i)
        seen.insert(derive_run_seed(kDefaultMasterSeed, i));
    EXPECT_EQ(seen.size(), 100'000u);
}

TEST(RmseSeries, ZeroWhenEstimatesMatch)
{
    const M truth = M::Random(2, 5);
    for (double v : rmse_series({truth, truth}, {truth, truth}))
        EXPECT_EQ(v, 0.0);
}

TEST(RmseSeries, TwoRunsHandValue)
{
    const auto out = rmse_series({M::Zero(1, 1), M::Zero(1, 1)}, {scalar_m(3.0), scalar_m(4.0)});
    EXPECT_NEAR(out[0], std::sqrt(12.5), 1e-15);
    EXPECT_NEAR(out[0], 3.5355, 1e-4);
}

TEST(RmseSeries, ConstantOffset)
{
    const M truth = M::Random(1, 6);
    const M est = truth.array() - 2.5;
    for (double v : rmse_series({truth}, {est}))
        EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(RmseSeries, MismatchedShapesThrow)
{
    EXPECT_THROW(rmse_series({M::Zero(1, 3)}, {M::Zero(1, 4)}), std::invalid_argument);
    EXPECT_THROW(rmse_series({M::Zero(1, 3)}, {}), std::invalid_argument);
    EXPECT_THROW(rmse_series({}, {}), std::invalid_argument);
}

TEST(AggregateBounds, SingleRunPassesThrough)
{
    const MatrixListd fim{scalar_m(2.0), scalar_m(4.0)};
    const auto out = aggregate_bounds({fim}, AveragingMode::AverageBounds);
    EXPECT_DOUBLE_EQ(out[0](0, 0), 0.5);
    EXPECT_DOUBLE_EQ(out[1](0, 0), 0.25);
    const auto out_fim = aggregate_bounds({fim}, AveragingMode::AverageFim);
    EXPECT_DOUBLE_EQ(out_fim[0](0, 0), 0.5);
}

TEST(AggregateBounds, IdenticalRunsGiveSameSeries)
{
    const MatrixListd fim{(M(2, 2) << 2.0, 0.5, 0.5, 1.0).finished()};
    const auto one = aggregate_bounds({fim}, AveragingMode::AverageBounds);
    const auto two = aggregate_bounds({fim, fim}, AveragingMode::AverageBounds);
    EXPECT_LT((one[0] - two[0]).norm(), 1e-15);
}

TEST(AggregateBounds, ModesDiffer)
{
    // Bounds 1 and 3, i.e. information 1 and 1/3.
    const std::vector<MatrixListd> runs{{scalar_m(1.0)}, {scalar_m(1.0 / 3.0)}};
    EXPECT_NEAR(aggregate_bounds(runs, AveragingMode::AverageBounds)[0](0, 0), 2.0, 1e-14);
    EXPECT_NEAR(aggregate_bounds(runs, AveragingMode::AverageFim)[0](0, 0), 1.5, 1e-14);
}

TEST(AggregateBounds, RejectsEmptyAndRagged)
{
    EXPECT_THROW(aggregate_bounds({}, AveragingMode::AverageBounds), std::invalid_argument);
    EXPECT_THROW(aggregate_bounds({{scalar_m(1.0)}, {}}, AveragingMode::AverageBounds), std::invalid_argument);
}

TEST(GapSeries, IdenticalApproximationsGiveZero)
{
    EstimatorRun run;
    run.gap_analytic = {M::Zero(1, 1), M::Zero(1, 1)};
    run.gap_direct = run.gap_analytic;
    const auto out = gap_series({&run, &run});
    ASSERT_EQ(out.analytic.size(), 2u);
    EXPECT_EQ(out.analytic[1](0, 0), 0.0);
    EXPECT_EQ(out.direct[1](0, 0), 0.0);
    EXPECT_EQ(out.violations[0], 0);
}

TEST(GapSeries, UnitInformationHalfGap)
{
    EstimatorRun run;
    const auto analytic = bound_difference<double>(scalar_m(1.0), scalar_m(1.0));
    run.gap_analytic = {analytic.value};
    run.gap_direct = {scalar_m(1.0 - 1.0 / 2.0)};
    const auto out = gap_series({&run});
    EXPECT_NEAR(out.analytic[0](0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.direct[0](0, 0), 0.5, 1e-15);
}

TEST(GapSeries, CountsNegativeDirectGaps)
{
    EstimatorRun a;
    EstimatorRun b;
    a.gap_analytic = a.gap_direct = {scalar_m(-1.0), scalar_m(1.0)};
    b.gap_analytic = b.gap_direct = {scalar_m(-2.0), scalar_m(-1.0)};
    const auto out = gap_series({&a, &b});
    EXPECT_EQ(out.violations, (std::vector<int>{2, 1}));
    EXPECT_DOUBLE_EQ(out.direct[0](0, 0), -1.5);
}

TEST(Validate, RejectsBadConfigs)
{
    auto c = small_ungm();
    c.horizon = 0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = small_ungm();
    c.runs = 0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = small_ungm();
    c.particles = 0;
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = small_ungm();
    c.model.name = "lorenz";
    EXPECT_THROW(validate(c), std::invalid_argument);
    c = linear_config(1);
    c.model.h = M::Ones(1, 3);
    EXPECT_THROW(validate(c), std::invalid_argument);
}

TEST(RunExperiment, LinearSingleRunMatchesKalman)
{
    const auto c = linear_config(1);
    const auto result = run_experiment(c);
    const auto kalman = oracle::kalman_covariances(c.model.a, c.model.h, c.model.q, c.model.r, c.model.prior_cov, c.horizon);
    ASSERT_EQ(result.true_bound.size(), static_cast<std::size_t>(c.horizon));
    for (const auto& ea : result.estimators)
        for (int k = 0; k < c.horizon; ++k) {
            const auto sk = static_cast<std::size_t>(k);
            EXPECT_LT((result.true_bound[sk] - kalman[sk]).norm(), 1e-6);
            EXPECT_LT((ea.mean_only[sk] - kalman[sk]).norm(), 1e-6) << to_string(ea.estimator) << " k=" << k + 1;
        }
}

TEST(RunExperiment, LinearMeanCovIsConservative)
{
    // The mean+cov terms inflate Q by the propagated estimate covariance, so the bound
    // exceeds the Kalman covariance instead of matching it.
    const auto c = linear_config(1);
    const auto result = run_experiment(c);
    const auto kalman = oracle::kalman_covariances(c.model.a, c.model.h, c.model.q, c.model.r, c.model.prior_cov, c.horizon);
    const auto& ukf = result.estimator(Estimator::Ukf);
    for (int k = 0; k < c.horizon; ++k) {
        const M diff = ukf.mean_cov[static_cast<std::size_t>(k)] - kalman[static_cast<std::size_t>(k)];
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<M>(diff).eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(RunExperiment, LinearGapsAgree)
{
    const auto result = run_experiment(linear_config(2));
    for (const auto& run : result.runs)
        for (const auto& er : run.estimators)
            for (std::size_t k = 0; k < er.gap_direct.size(); ++k)
                EXPECT_LT((er.gap_analytic[k] - er.gap_direct[k]).norm(), 1e-8 * std::max(1.0, er.gap_direct[k].norm()));
}

TEST(RunExperiment, LinearLowerBoundSanity)
{
    auto c = linear_config(300);
    c.estimators = {Estimator::Ukf};
    c.methods = {BoundMethod::True};
    const auto result = run_experiment(c);
    for (int k = 1; k <= c.horizon; ++k) {
        std::vector<double> errors;
        for (const auto& run : result.runs) {
            const V e = run.trajectory.x(k) - run.estimator(Estimator::Ukf).posterior[static_cast<std::size_t>(k)].mean;
            errors.push_back(e.squaredNorm());
        }
        double mean = 0.0;
        for (double e : errors)
            mean += e;
        mean /= static_cast<double>(errors.size());
        double var = 0.0;
        for (double e : errors)
            var += (e - mean) * (e - mean);
        const double sigma = std::sqrt(var / static_cast<double>(errors.size() - 1) / static_cast<double>(errors.size()));
        EXPECT_GE(mean, result.true_bound[static_cast<std::size_t>(k - 1)].trace() - 3.0 * sigma) << "k=" << k;
    }
}

TEST(RunExperiment, WorkerCountDoesNotChangeResults)
{
    auto c = small_ungm();
    c.runs = 2;
    const auto one = run_experiment(c);
    c.workers = 2;
    const auto two = run_experiment(c);
    expect_bitwise_equal(one.true_bound, two.true_bound);
    for (std::size_t e = 0; e < one.estimators.size(); ++e) {
        EXPECT_EQ(one.estimators[e].rmse, two.estimators[e].rmse);
        expect_bitwise_equal(one.estimators[e].mean_only, two.estimators[e].mean_only);
        expect_bitwise_equal(one.estimators[e].mean_cov, two.estimators[e].mean_cov);
        expect_bitwise_equal(one.estimators[e].gap_analytic, two.estimators[e].gap_analytic);
    }
}

TEST(RunExperiment, UngmShapes)
{
    const auto c = small_ungm();
    const auto result = run_experiment(c);
    EXPECT_EQ(result.runs.size() + result.failures.size(), static_cast<std::size_t>(c.runs));
    EXPECT_EQ(result.true_bound.size(), static_cast<std::size_t>(c.horizon));
    ASSERT_EQ(result.estimators.size(), 2u);
    for (const auto& ea : result.estimators) {
        EXPECT_EQ(ea.rmse.size(), static_cast<std::size_t>(c.horizon));
        EXPECT_EQ(ea.mean_only.size(), static_cast<std::size_t>(c.horizon));
        EXPECT_EQ(ea.mean_cov.size(), static_cast<std::size_t>(c.horizon));
        EXPECT_EQ(ea.gap_direct.size(), static_cast<std::size_t>(c.horizon));
        for (double v : ea.rmse)
            EXPECT_GE(v, 0.0);
    }
    for (const auto& run : result.runs)
        for (const auto& er : run.estimators) {
            EXPECT_EQ(er.posterior.size(), static_cast<std::size_t>(c.horizon) + 1);
            EXPECT_EQ(er.predicted.size(), static_cast<std::size_t>(c.horizon));
        }
}

TEST(RunExperiment, RunsUseDerivedSeeds)
{
    const auto c = small_ungm();
    const auto model = build_model(c.model);
    const auto a = run_single(model, c, 0);
    const auto b = run_single(model, c, 1);
    EXPECT_EQ(a.seed, derive_run_seed(c.seed, 0));
    EXPECT_FALSE(a.trajectory.states == b.trajectory.states);
    const auto again = run_single(model, c, 1);
    EXPECT_TRUE(again.trajectory.states == b.trajectory.states);
}

TEST(RunExperiment, MethodSelection)
{
    auto c = small_ungm();
    c.methods = {BoundMethod::MeanOnly};
    c.estimators = {Estimator::Pf};
    const auto result = run_experiment(c);
    EXPECT_TRUE(result.true_bound.empty());
    EXPECT_TRUE(result.estimator(Estimator::Pf).mean_cov.empty());
    EXPECT_EQ(result.estimator(Estimator::Pf).mean_only.size(), static_cast<std::size_t>(c.horizon));
    EXPECT_THROW(result.estimator(Estimator::Ukf), std::out_of_range);
}

TEST(TrueBoundSeries, RejectsEmptyEnsemble)
{
    const auto model = ungm_model<double>();
    EXPECT_THROW(true_bound_series(model, {}), std::invalid_argument);
}
