/// @file experiment.hpp Monte Carlo harness: trajectories, estimators, bound recursions and aggregation.
#pragma once

#include "pcrlb/filters.hpp"
#include "pcrlb/fim.hpp"
#include "pcrlb/model.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcrlb
{

using MatrixListd = MatrixList<double>;

enum class AveragingMode
{
    AverageBounds,  ///< mean of J^-1 across runs
    AverageFim,     ///< inverse of the mean J
};

enum class Estimator
{
    Ukf,
    Pf,
};

enum class BoundMethod
{
    True,
    MeanOnly,
    MeanCov,
};

/// Which filter belief the approximate bounds linearize around.
enum class BeliefChoice
{
    Posterior,
    Predicted,
};

std::string to_string(AveragingMode mode);
std::string to_string(Estimator estimator);
std::string to_string(BoundMethod method);
std::string to_string(BeliefChoice choice);
std::string to_string(ResamplePolicy policy);

struct ModelConfig
{
    std::string name = "ungm";
    double process_var = 1.0;  ///< ungm only
    double meas_var = 5.0;     ///< ungm only
    Eigen::VectorXd prior_mean;  ///< empty: model default
    Eigen::MatrixXd prior_cov;   ///< empty: model default
    Eigen::MatrixXd a;           ///< linear only
    Eigen::MatrixXd h;
    Eigen::MatrixXd q;
    Eigen::MatrixXd r;
};

inline constexpr std::uint64_t kDefaultMasterSeed = 42;

struct ExperimentConfig
{
    ModelConfig model;
    int horizon = 50;
    int runs = 100;
    std::uint64_t seed = kDefaultMasterSeed;
    int workers = 0;  ///< 0: hardware concurrency
    AveragingMode averaging = AveragingMode::AverageBounds;
    std::vector<Estimator> estimators{Estimator::Ukf, Estimator::Pf};
    double max_failure_fraction = 0.1;

    int particles = 1000;
    ResamplePolicy resample = ResamplePolicy::EveryStep;
    double ess_fraction = 0.5;
    UnscentedParams<double> unscented;

    std::vector<BoundMethod> methods{BoundMethod::True, BoundMethod::MeanOnly, BoundMethod::MeanCov};
    BeliefChoice state_belief = BeliefChoice::Posterior;
    BeliefChoice measurement_point = BeliefChoice::Predicted;

    std::string output_dir = "out";
    bool plots = true;

    bool has_estimator(Estimator e) const;
    bool has_method(BoundMethod m) const;
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const ExperimentConfig& config);

SystemModeld build_model(const ModelConfig& config);

/// Per-estimator results of one run. Series entry k-1 refers to time k = 1..T.
struct EstimatorRun
{
    Estimator estimator = Estimator::Ukf;
    std::vector<GaussianBeliefd> posterior;  ///< times 0..T, entry 0 is the prior
    std::vector<GaussianBeliefd> predicted;  ///< times 1..T
    MatrixListd fim_mean_only;
    MatrixListd fim_mean_cov;
    MatrixListd theta;
    MatrixListd pi;
    MatrixListd gap_analytic;
    MatrixListd gap_direct;
    std::vector<double> pi_condition;
    std::vector<char> pi_fallback;   ///< Pi taken as J - Theta
    std::vector<char> gap_fallback;  ///< gap computed by subtraction
};

struct RunResult
{
    int index = 0;
    std::uint64_t seed = 0;
    Trajectoryd trajectory;
    std::vector<EstimatorRun> estimators;

    const EstimatorRun& estimator(Estimator e) const;
};

struct RunFailure
{
    int run = 0;
    std::string message;
};

struct EstimatorAggregate
{
    Estimator estimator = Estimator::Ukf;
    std::vector<double> rmse;
    MatrixListd mean_only;  ///< aggregated bounds
    MatrixListd mean_cov;
    MatrixListd gap_analytic;
    MatrixListd gap_direct;
    std::vector<int> gap_violations;  ///< runs with a negative direct gap, per step
    std::vector<int> pi_indefinite;   ///< runs with an indefinite Pi, per step
    std::vector<int> pi_fallbacks;
};

struct AggregateResult
{
    int horizon = 0;
    MatrixListd true_bound;  ///< empty when the true method is disabled
    std::vector<EstimatorAggregate> estimators;
    std::vector<RunResult> runs;  ///< successful runs in index order
    std::vector<RunFailure> failures;

    const EstimatorAggregate& estimator(Estimator e) const;
};

/// Raised when more runs fail than the configured quota allows.
class ExperimentFailure : public std::runtime_error
{
public:
    ExperimentFailure(const std::string& what, std::vector<RunFailure> failures)
        : std::runtime_error(what), failures_(std::move(failures))
    {
    }
    const std::vector<RunFailure>& failures() const noexcept { return failures_; }

private:
    std::vector<RunFailure> failures_;
};

/// splitmix64 avalanche of (master, index).
std::uint64_t derive_run_seed(std::uint64_t master, std::uint64_t index);

/// One Monte Carlo run: trajectory, filters and approximate bound recursions.
RunResult run_single(const SystemModeld& model, const ExperimentConfig& config, int index);

AggregateResult run_experiment(const ExperimentConfig& config);

/// True PCRLB from an ensemble of trajectories, averaging the information terms per step.
MatrixListd true_bound_series(const SystemModeld& model, const std::vector<const Trajectoryd*>& trajectories);

/// Per-step sqrt(mean over runs of |x_k - xhat_k|^2). truths[r] is n x T, estimates likewise.
std::vector<double> rmse_series(const std::vector<Eigen::MatrixXd>& truths, const std::vector<Eigen::MatrixXd>& estimates);

/// Combines per-run FIM series into one bound series.
MatrixListd aggregate_bounds(const std::vector<MatrixListd>& per_run_fim, AveragingMode mode);

struct GapSeries
{
    MatrixListd analytic;
    MatrixListd direct;
    std::vector<int> violations;
};

/// Averages the analytic and direct gaps and counts negative direct gaps per step.
GapSeries gap_series(const std::vector<const EstimatorRun*>& runs);

/// Scalar summary of a bound matrix (its trace).
std::vector<double> trace_series(const MatrixListd& series);

} // namespace pcrlb
