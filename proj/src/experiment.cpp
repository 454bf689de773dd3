#include "pcrlb/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace pcrlb
{

std::string to_string(AveragingMode mode)
{
    return mode == AveragingMode::AverageBounds ? "average-bounds" : "average-fim";
}

std::string to_string(Estimator estimator)
{
    return estimator == Estimator::Ukf ? "ukf" : "pf";
}

std::string to_string(BoundMethod method)
{
    switch (method) {
    case BoundMethod::True:
        return "true";
    case BoundMethod::MeanOnly:
        return "meanonly";
    case BoundMethod::MeanCov:
        return "meancov";
    }
    return "unknown";
}

std::string to_string(BeliefChoice choice)
{
    return choice == BeliefChoice::Posterior ? "posterior" : "predicted";
}

std::string to_string(ResamplePolicy policy)
{
    return policy == ResamplePolicy::EveryStep ? "every-step" : "ess";
}

bool ExperimentConfig::has_estimator(Estimator e) const
{
    return std::find(estimators.begin(), estimators.end(), e) != estimators.end();
}

bool ExperimentConfig::has_method(BoundMethod m) const
{
    return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void validate(const ExperimentConfig& config)
{
    if (config.horizon < 1)
        throw std::invalid_argument("experiment.horizon must be >= 1");
    if (config.runs < 1)
        throw std::invalid_argument("experiment.runs must be >= 1");
    if (config.workers < 0)
        throw std::invalid_argument("experiment.workers must be >= 0");
    if (!(config.max_failure_fraction >= 0.0 && config.max_failure_fraction <= 1.0))
        throw std::invalid_argument("experiment.max_failure_fraction must lie in [0, 1]");
    if (config.particles < 1)
        throw std::invalid_argument("filters.particles must be >= 1");
    if (!(config.ess_fraction > 0.0 && config.ess_fraction <= 1.0))
        throw std::invalid_argument("filters.ess_fraction must lie in (0, 1]");
    if (!(config.unscented.alpha > 0.0))
        throw std::invalid_argument("filters.ut_alpha must be positive");
    if (config.estimators.empty())
        throw std::invalid_argument("experiment.estimators must not be empty");
    if (config.methods.empty())
        throw std::invalid_argument("bounds.methods must not be empty");
    if (config.model.name != "ungm" && config.model.name != "linear")
        throw std::invalid_argument("model.name '" + config.model.name + "' is not a known model (ungm, linear)");
    build_model(config.model);
}

SystemModeld build_model(const ModelConfig& config)
{
    std::optional<GaussianPrior<double>> prior;
    if (config.prior_mean.size() > 0 || config.prior_cov.size() > 0) {
        const auto n = config.name == "ungm" ? Eigen::Index(1) : config.a.rows();
        GaussianPrior<double> p;
        p.mean = config.prior_mean.size() > 0 ? config.prior_mean : Eigen::VectorXd::Zero(n);
        if (config.prior_cov.size() > 0)
            p.cov = config.prior_cov;
        else if (config.name == "ungm")
            p.cov = Eigen::MatrixXd::Constant(1, 1, 20.0);
        else
            p.cov = Eigen::MatrixXd::Identity(n, n);
        if (p.mean.size() != n || p.cov.rows() != n || p.cov.cols() != n)
            throw std::invalid_argument("model prior dimensions do not match the state dimension");
        detail::check_covariance<double>(p.cov, n, "model.prior_cov");
        prior = std::move(p);
    }

    if (config.name == "ungm")
        return ungm_model<double>(config.process_var, config.meas_var, prior);
    if (config.name == "linear") {
        if (config.a.size() == 0 || config.h.size() == 0 || config.q.size() == 0 || config.r.size() == 0)
            throw std::invalid_argument("linear model requires model.a, model.h, model.q and model.r");
        const auto n = config.a.rows();
        return linear_gaussian_model<double>(
            config.a, config.h, config.q, config.r,
            prior.value_or(GaussianPrior<double>{Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Identity(n, n)}));
    }
    throw std::invalid_argument("unknown model '" + config.name + "'");
}

const EstimatorRun& RunResult::estimator(Estimator e) const
{
    for (const auto& er : estimators)
        if (er.estimator == e)
            return er;
    throw std::out_of_range("run has no results for estimator " + to_string(e));
}

const EstimatorAggregate& AggregateResult::estimator(Estimator e) const
{
    for (const auto& ea : estimators)
        if (ea.estimator == e)
            return ea;
    throw std::out_of_range("experiment has no results for estimator " + to_string(e));
}

std::uint64_t derive_run_seed(std::uint64_t master, std::uint64_t index)
{
    std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace
{

template <typename Fn>
auto annotated(int run, int step, const std::string& stage, Fn&& fn) -> decltype(fn())
{
    try {
        return fn();
    } catch (const NumericError& e) {
        throw NumericError("run " + std::to_string(run) + ", step " + std::to_string(step) + ", " + stage + ": " +
                           e.what());
    }
}

void run_filter(const SystemModeld& model, const ExperimentConfig& config, const Trajectoryd& traj,
                std::uint64_t run_seed, int index, EstimatorRun& out)
{
    const int horizon = traj.horizon();
    out.posterior.reserve(static_cast<std::size_t>(horizon) + 1);
    out.predicted.reserve(static_cast<std::size_t>(horizon));
    out.posterior.push_back({model.prior().mean, model.prior().cov});

    if (out.estimator == Estimator::Ukf) {
        for (int k = 1; k <= horizon; ++k) {
            const auto step = annotated(index, k, "ukf", [&] {
                return ukf_step(model, k, out.posterior.back(), traj.z(k), config.unscented);
            });
            out.predicted.push_back(step.predicted);
            out.posterior.push_back(step.posterior);
        }
        return;
    }

    const ParticleFilterOptions<double> options{config.resample, config.ess_fraction};
    ParticleSet<double> set = sample_particles(model.prior(), config.particles, derive_run_seed(run_seed, 1));
    for (int k = 1; k <= horizon; ++k) {
        auto step = annotated(index, k, "pf", [&] {
            return pf_step(model, k, set, traj.z(k), derive_run_seed(run_seed, 2 + static_cast<std::uint64_t>(k)),
                           options);
        });
        set = std::move(step.first);
        out.predicted.push_back(step.second.predicted);
        out.posterior.push_back(step.second.posterior);
    }
}

bool has_negative_direction(const Eigen::MatrixXd& m)
{
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrized(m), Eigen::EigenvaluesOnly);
    const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    return eig.eigenvalues().minCoeff() < -1e-12 * scale;
}

void run_bounds(const SystemModeld& model, const ExperimentConfig& config, int index, EstimatorRun& out)
{
    const int horizon = static_cast<int>(out.predicted.size());
    const std::string name = to_string(out.estimator);
    const Eigen::MatrixXd j0 = initial_fim(model.prior());
    Eigen::MatrixXd j_mean_only = j0;
    Eigen::MatrixXd j_mean_cov = j0;

    for (int k = 0; k < horizon; ++k) {
        const auto sk = static_cast<std::size_t>(k);
        const GaussianBeliefd& state = (config.state_belief == BeliefChoice::Posterior || k == 0)
                                           ? out.posterior[sk]
                                           : out.predicted[sk - 1];
        const GaussianBeliefd& meas =
            config.measurement_point == BeliefChoice::Predicted ? out.predicted[sk] : out.posterior[sk + 1];

        if (config.has_method(BoundMethod::MeanOnly)) {
            j_mean_only = annotated(index, k + 1, name + " meanonly", [&] {
                return fim_recursion_step(j_mean_only, mean_only_terms(model, k, state.mean, meas.mean));
            });
            out.fim_mean_only.push_back(j_mean_only);
        }
        if (config.has_method(BoundMethod::MeanCov)) {
            annotated(index, k + 1, name + " meancov", [&] {
                const auto dec = decompose_terms(model, k, state, meas);
                const auto split = fim_via_decomposition(j_mean_cov, dec);
                j_mean_cov = split.j_next;
                const auto gap = bound_difference(split.theta, split.pi);
                const Eigen::MatrixXd direct = checked_inverse<double>(split.theta, "theta") -
                                               spd_inverse<double>(split.j_next);
                out.fim_mean_cov.push_back(split.j_next);
                out.theta.push_back(split.theta);
                out.pi.push_back(split.pi);
                out.gap_analytic.push_back(gap.value);
                out.gap_direct.push_back(symmetrized(direct));
                out.pi_condition.push_back(condition_number(split.pi));
                out.pi_fallback.push_back(split.pi_fallback ? 1 : 0);
                out.gap_fallback.push_back(gap.fallback ? 1 : 0);
                return 0;
            });
        }
    }
}

} // namespace

RunResult run_single(const SystemModeld& model, const ExperimentConfig& config, int index)
{
    RunResult result;
    result.index = index;
    result.seed = derive_run_seed(config.seed, static_cast<std::uint64_t>(index));
    result.trajectory = sample_trajectory(model, config.horizon, derive_run_seed(result.seed, 0));
    for (const Estimator e : config.estimators) {
        EstimatorRun er;
        er.estimator = e;
        run_filter(model, config, result.trajectory, result.seed, index, er);
        run_bounds(model, config, index, er);
        result.estimators.push_back(std::move(er));
    }
    return result;
}

MatrixListd true_bound_series(const SystemModeld& model, const std::vector<const Trajectoryd*>& trajectories)
{
    if (trajectories.empty())
        throw std::invalid_argument("true_bound_series: no trajectories");
    const int horizon = trajectories.front()->horizon();
    const auto n = model.state_dim();
    const auto count = static_cast<Eigen::Index>(trajectories.size());
    for (const auto* t : trajectories)
        if (t->horizon() != horizon)
            throw std::invalid_argument("true_bound_series: trajectories differ in length");

    MatrixListd bounds;
    bounds.reserve(static_cast<std::size_t>(horizon));
    Eigen::MatrixXd j = initial_fim(model.prior());
    Eigen::MatrixXd now(n, count);
    Eigen::MatrixXd next(n, count);
    for (int k = 0; k < horizon; ++k) {
        for (Eigen::Index s = 0; s < count; ++s) {
            now.col(s) = trajectories[static_cast<std::size_t>(s)]->x(k);
            next.col(s) = trajectories[static_cast<std::size_t>(s)]->x(k + 1);
        }
        j = fim_recursion_step(j, true_fim_terms_mc(model, k, now, next));
        bounds.push_back(spd_inverse<double>(j));
    }
    return bounds;
}

std::vector<double> rmse_series(const std::vector<Eigen::MatrixXd>& truths, const std::vector<Eigen::MatrixXd>& estimates)
{
    if (truths.empty() || truths.size() != estimates.size())
        throw std::invalid_argument("rmse_series: need the same nonzero number of truth and estimate runs");
    const auto rows = truths.front().rows();
    const auto steps = truths.front().cols();
    for (std::size_t r = 0; r < truths.size(); ++r)
        if (truths[r].rows() != rows || truths[r].cols() != steps || estimates[r].rows() != rows ||
            estimates[r].cols() != steps)
            throw std::invalid_argument("rmse_series: run " + std::to_string(r) + " has mismatched shape");

    std::vector<double> out(static_cast<std::size_t>(steps), 0.0);
    for (std::size_t r = 0; r < truths.size(); ++r)
        for (Eigen::Index k = 0; k < steps; ++k)
            out[static_cast<std::size_t>(k)] += (truths[r].col(k) - estimates[r].col(k)).squaredNorm();
    for (auto& v : out)
        v = std::sqrt(v / static_cast<double>(truths.size()));
    return out;
}

MatrixListd aggregate_bounds(const std::vector<MatrixListd>& per_run_fim, AveragingMode mode)
{
    if (per_run_fim.empty())
        throw std::invalid_argument("aggregate_bounds: no runs");
    const std::size_t steps = per_run_fim.front().size();
    for (const auto& series : per_run_fim)
        if (series.size() != steps)
            throw std::invalid_argument("aggregate_bounds: runs differ in length");

    const double inv_runs = 1.0 / static_cast<double>(per_run_fim.size());
    MatrixListd out;
    out.reserve(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const auto n = per_run_fim.front()[k].rows();
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
        for (const auto& series : per_run_fim) {
            if (series[k].rows() != n || series[k].cols() != n)
                throw std::invalid_argument("aggregate_bounds: inconsistent matrix sizes");
            acc += mode == AveragingMode::AverageBounds ? spd_inverse<double>(series[k]) : series[k];
        }
        acc *= inv_runs;
        out.push_back(mode == AveragingMode::AverageBounds ? symmetrized(acc) : spd_inverse<double>(symmetrized(acc)));
    }
    return out;
}

GapSeries gap_series(const std::vector<const EstimatorRun*>& runs)
{
    GapSeries out;
    if (runs.empty())
        return out;
    const std::size_t steps = runs.front()->gap_direct.size();
    for (const auto* run : runs)
        if (run->gap_direct.size() != steps || run->gap_analytic.size() != steps)
            throw std::invalid_argument("gap_series: runs differ in length");

    const double inv_runs = 1.0 / static_cast<double>(runs.size());
    out.violations.assign(steps, 0);
    for (std::size_t k = 0; k < steps; ++k) {
        const auto n = runs.front()->gap_direct[k].rows();
        Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(n, n);
        Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(n, n);
        for (const auto* run : runs) {
            analytic += run->gap_analytic[k];
            direct += run->gap_direct[k];
            if (has_negative_direction(run->gap_direct[k]))
                ++out.violations[k];
        }
        out.analytic.push_back(analytic * inv_runs);
        out.direct.push_back(direct * inv_runs);
    }
    return out;
}

std::vector<double> trace_series(const MatrixListd& series)
{
    std::vector<double> out;
    out.reserve(series.size());
    for (const auto& m : series)
        out.push_back(m.trace());
    return out;
}

namespace
{

std::vector<std::optional<RunResult>> execute_runs(const SystemModeld& model, const ExperimentConfig& config,
                                                   std::vector<RunFailure>& failures)
{
    const int runs = config.runs;
    std::vector<std::optional<RunResult>> results(static_cast<std::size_t>(runs));
    std::vector<std::string> errors(static_cast<std::size_t>(runs));
    std::atomic<int> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    auto worker = [&] {
        for (int r = next++; r < runs; r = next++) {
            try {
                results[static_cast<std::size_t>(r)] = run_single(model, config, r);
            } catch (const NumericError& e) {
                errors[static_cast<std::size_t>(r)] = e.what();
            } catch (...) {
                std::lock_guard<std::mutex> lock(fatal_mutex);
                if (!fatal)
                    fatal = std::current_exception();
                next = runs;
            }
        }
    };

    int workers = config.workers > 0 ? config.workers : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, runs);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    if (fatal)
        std::rethrow_exception(fatal);

    for (int r = 0; r < runs; ++r)
        if (!results[static_cast<std::size_t>(r)])
            failures.push_back({r, errors[static_cast<std::size_t>(r)]});
    return results;
}

} // namespace

AggregateResult run_experiment(const ExperimentConfig& config)
{
    validate(config);
    const SystemModeld model = build_model(config.model);

    AggregateResult agg;
    agg.horizon = config.horizon;
    auto results = execute_runs(model, config, agg.failures);

    const double allowed = config.max_failure_fraction * static_cast<double>(config.runs);
    if (static_cast<double>(agg.failures.size()) > allowed || agg.failures.size() == static_cast<std::size_t>(config.runs))
        throw ExperimentFailure(std::to_string(agg.failures.size()) + " of " + std::to_string(config.runs) +
                                    " runs failed; first: " + agg.failures.front().message,
                                agg.failures);

    for (auto& r : results)
        if (r)
            agg.runs.push_back(std::move(*r));

    if (config.has_method(BoundMethod::True)) {
        std::vector<const Trajectoryd*> trajectories;
        for (const auto& run : agg.runs)
            trajectories.push_back(&run.trajectory);
        agg.true_bound = true_bound_series(model, trajectories);
    }

    for (const Estimator e : config.estimators) {
        EstimatorAggregate ea;
        ea.estimator = e;
        std::vector<Eigen::MatrixXd> truths;
        std::vector<Eigen::MatrixXd> estimates;
        std::vector<MatrixListd> mean_only;
        std::vector<MatrixListd> mean_cov;
        std::vector<const EstimatorRun*> runs;
        for (const auto& run : agg.runs) {
            const EstimatorRun& er = run.estimator(e);
            truths.push_back(run.trajectory.states.rightCols(config.horizon));
            Eigen::MatrixXd est(model.state_dim(), config.horizon);
            for (int k = 1; k <= config.horizon; ++k)
                est.col(k - 1) = er.posterior[static_cast<std::size_t>(k)].mean;
            estimates.push_back(std::move(est));
            mean_only.push_back(er.fim_mean_only);
            mean_cov.push_back(er.fim_mean_cov);
            runs.push_back(&er);
        }
        ea.rmse = rmse_series(truths, estimates);
        if (config.has_method(BoundMethod::MeanOnly))
            ea.mean_only = aggregate_bounds(mean_only, config.averaging);
        if (config.has_method(BoundMethod::MeanCov)) {
            ea.mean_cov = aggregate_bounds(mean_cov, config.averaging);
            auto gaps = gap_series(runs);
            ea.gap_analytic = std::move(gaps.analytic);
            ea.gap_direct = std::move(gaps.direct);
            ea.gap_violations = std::move(gaps.violations);
            ea.pi_indefinite.assign(static_cast<std::size_t>(config.horizon), 0);
            ea.pi_fallbacks.assign(static_cast<std::size_t>(config.horizon), 0);
            for (const auto* er : runs)
                for (std::size_t k = 0; k < er->pi.size(); ++k) {
                    ea.pi_indefinite[k] += has_negative_direction(er->pi[k]) ? 1 : 0;
                    ea.pi_fallbacks[k] += er->pi_fallback[k];
                }
        }
        agg.estimators.push_back(std::move(ea));
    }
    return agg;
}

} // namespace pcrlb
