#include "pcrlb/config.hpp"
#include "pcrlb/output.hpp"
#include "pcrlb/selftest.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>

namespace fs = std::filesystem;
using namespace pcrlb;

namespace
{

enum ExitCode
{
    kOk = 0,
    kUsage = 1,
    kExperimentFailed = 2,
    kIoFailure = 3,
    kSelftestFailed = 4,
};

struct Options
{
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> runs;
    std::optional<int> workers;
    bool quiet = false;
};

ExperimentConfig load(const Options& opt)
{
    ExperimentConfig config = parse_config(opt.config);
    if (opt.seed)
        config.seed = *opt.seed;
    if (opt.runs)
        config.runs = *opt.runs;
    if (opt.workers)
        config.workers = *opt.workers;
    if (!opt.out.empty())
        config.output_dir = opt.out;
    validate(config);
    return config;
}

fs::path prepare_dir(const ExperimentConfig& config)
{
    const fs::path dir(config.output_dir);
    fs::create_directories(dir);
    return dir;
}

void summarize(const AggregateResult& result, double seconds)
{
    fmt::print("{} runs succeeded, {} failed, {:.2f} s\n", result.runs.size(), result.failures.size(), seconds);
    for (const auto& f : result.failures)
        fmt::print("  run {}: {}\n", f.run, f.message);
    for (const auto& ea : result.estimators) {
        double mean_rmse = 0.0;
        for (double v : ea.rmse)
            mean_rmse += v;
        mean_rmse /= static_cast<double>(std::max<std::size_t>(1, ea.rmse.size()));
        fmt::print("  {}: mean RMSE {:.4g}\n", to_string(ea.estimator), mean_rmse);
    }
}

int cmd_experiment(const Options& opt, bool full)
{
    const ExperimentConfig config = load(opt);
    const fs::path dir = prepare_dir(config);
    const auto start = std::chrono::steady_clock::now();
    const AggregateResult result = run_experiment(config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::vector<fs::path> written;
    if (full) {
        write_csv(rmse_table(result), dir / "rmse.csv");
        written.push_back(dir / "rmse.csv");
    }
    write_csv(bounds_table(result), dir / "bounds.csv");
    written.push_back(dir / "bounds.csv");
    write_csv(gap_table(result), dir / "gap.csv");
    written.push_back(dir / "gap.csv");
    write_manifest(config, result, dir / "meta.json");
    if (config.plots)
        emit_plot_script(written, dir / "plots.gp");

    if (!opt.quiet) {
        summarize(result, seconds);
        fmt::print("wrote {}\n", dir.string());
    }
    return kOk;
}

int cmd_simulate(const Options& opt)
{
    const ExperimentConfig config = load(opt);
    const fs::path dir = prepare_dir(config);
    const SystemModeld model = build_model(config.model);
    std::vector<Trajectoryd> trajectories;
    trajectories.reserve(static_cast<std::size_t>(config.runs));
    for (int r = 0; r < config.runs; ++r) {
        const auto run_seed = derive_run_seed(config.seed, static_cast<std::uint64_t>(r));
        trajectories.push_back(sample_trajectory(model, config.horizon, derive_run_seed(run_seed, 0)));
    }
    write_trajectories_csv(trajectories, dir / "trajectories.csv");
    if (!opt.quiet)
        fmt::print("wrote {}\n", (dir / "trajectories.csv").string());
    return kOk;
}

int cmd_selftest(const Options& opt)
{
    const auto start = std::chrono::steady_clock::now();
    const auto cases = run_selftest();
    bool ok = true;
    for (const auto& c : cases) {
        ok = ok && c.passed;
        if (!opt.quiet || !c.passed)
            fmt::print("{} [{}] {} (worst {:.3g}, tol {:.0e})\n", c.passed ? "PASS" : "FAIL", c.suite, c.name, c.worst,
                       c.tolerance);
    }
    if (!opt.quiet)
        fmt::print("selftest {} in {:.2f} s\n", ok ? "passed" : "FAILED",
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    return ok ? kOk : kSelftestFailed;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Posterior Cramer-Rao lower bounds: true, mean-only and mean+covariance approximations"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* config = sub->add_option("--config", opt.config, "Configuration file");
        if (needs_config)
            config->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "Output directory (overrides output.dir)");
        sub->add_option("--seed", opt.seed, "Master seed (overrides experiment.seed)");
        sub->add_option("--runs", opt.runs, "Monte Carlo runs (overrides experiment.runs)");
        sub->add_option("--workers", opt.workers, "Worker threads, 0 for all cores");
        sub->add_flag("--quiet,-q", opt.quiet, "Only report errors");
    };

    auto* run = app.add_subcommand("run", "Run the experiment and write rmse, bounds, gap, manifest and plots");
    auto* bounds = app.add_subcommand("bounds", "Run the experiment and write only bounds, gap and manifest");
    auto* simulate = app.add_subcommand("simulate", "Write the sampled true trajectories");
    auto* selftest = app.add_subcommand("selftest", "Run the built-in verification suites");
    add_common(run, true);
    add_common(bounds, true);
    add_common(simulate, true);
    selftest->add_flag("--quiet,-q", opt.quiet, "Only report failures");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_experiment(opt, true);
        if (bounds->parsed())
            return cmd_experiment(opt, false);
        if (simulate->parsed())
            return cmd_simulate(opt);
        return cmd_selftest(opt);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kUsage;
    } catch (const std::invalid_argument& e) {
        fmt::print(stderr, "invalid configuration: {}\n", e.what());
        return kUsage;
    } catch (const ExperimentFailure& e) {
        fmt::print(stderr, "experiment failed: {}\n", e.what());
        return kExperimentFailed;
    } catch (const OutputError& e) {
        fmt::print(stderr, "output error: {}\n", e.what());
        return kIoFailure;
    } catch (const fs::filesystem_error& e) {
        fmt::print(stderr, "output error: {}\n", e.what());
        return kIoFailure;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExperimentFailed;
    }
}
