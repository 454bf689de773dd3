#include "pcrlb/output.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pcrlb
{

namespace
{

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_text(const std::string& text, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw OutputError("cannot open '" + path.string() + "' for writing");
    out << text;
    out.flush();
    if (!out)
        throw OutputError("failed writing '" + path.string() + "'");
}

std::vector<double> maybe_trace(const MatrixListd& series, std::size_t length)
{
    if (series.empty())
        return std::vector<double>(length, kNaN);
    return trace_series(series);
}

const EstimatorAggregate* find_estimator(const AggregateResult& result, Estimator e)
{
    for (const auto& ea : result.estimators)
        if (ea.estimator == e)
            return &ea;
    return nullptr;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json config_json(const ExperimentConfig& c)
{
    nlohmann::json model{{"name", c.model.name}};
    if (c.model.name == "ungm") {
        model["process_var"] = c.model.process_var;
        model["meas_var"] = c.model.meas_var;
    } else {
        model["a"] = matrix_json(c.model.a);
        model["h"] = matrix_json(c.model.h);
        model["q"] = matrix_json(c.model.q);
        model["r"] = matrix_json(c.model.r);
    }
    const SystemModeld built = build_model(c.model);
    model["prior_mean"] = matrix_json(built.prior().mean);
    model["prior_cov"] = matrix_json(built.prior().cov);

    nlohmann::json estimators = nlohmann::json::array();
    for (const auto e : c.estimators)
        estimators.push_back(to_string(e));
    nlohmann::json methods = nlohmann::json::array();
    for (const auto m : c.methods)
        methods.push_back(to_string(m));

    nlohmann::json filters{{"particles", c.particles},
                           {"resample", to_string(c.resample)},
                           {"ess_fraction", c.ess_fraction},
                           {"ut_alpha", c.unscented.alpha},
                           {"ut_beta", c.unscented.beta}};
    if (c.unscented.kappa)
        filters["ut_kappa"] = *c.unscented.kappa;

    return {{"model", model},
            {"experiment",
             {{"horizon", c.horizon},
              {"runs", c.runs},
              {"seed", c.seed},
              {"averaging", to_string(c.averaging)},
              {"estimators", estimators},
              {"max_failure_fraction", c.max_failure_fraction}}},
            {"filters", filters},
            {"bounds",
             {{"methods", methods},
              {"state_belief", to_string(c.state_belief)},
              {"measurement_point", to_string(c.measurement_point)}}}};
}

} // namespace

std::string format_csv(const SeriesTable& table)
{
    if (table.names.size() != table.columns.size())
        throw std::invalid_argument("format_csv: column names and data disagree");
    const std::size_t length = table.length();
    for (const auto& col : table.columns)
        if (col.size() != length)
            throw std::invalid_argument("format_csv: columns differ in length");

    fmt::memory_buffer out;
    fmt::format_to(std::back_inserter(out), "k");
    for (const auto& name : table.names)
        fmt::format_to(std::back_inserter(out), ",{}", name);
    fmt::format_to(std::back_inserter(out), "\n");
    for (std::size_t k = 0; k < length; ++k) {
        fmt::format_to(std::back_inserter(out), "{}", k + 1);
        for (const auto& col : table.columns)
            fmt::format_to(std::back_inserter(out), ",{:.17g}", col[k]);
        fmt::format_to(std::back_inserter(out), "\n");
    }
    return fmt::to_string(out);
}

void write_csv(const SeriesTable& table, const std::filesystem::path& path)
{
    write_text(format_csv(table), path);
}

SeriesTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw OutputError("cannot read '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line))
        throw OutputError("'" + path.string() + "' is empty");

    SeriesTable table;
    std::stringstream header(line);
    std::string cell;
    std::getline(header, cell, ',');
    if (cell != "k")
        throw OutputError("'" + path.string() + "' does not start with a k column");
    while (std::getline(header, cell, ','))
        table.names.push_back(cell);
    table.columns.resize(table.names.size());

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        ++row;
        std::stringstream fields(line);
        std::getline(fields, cell, ',');
        if (std::stoul(cell) != row)
            throw OutputError("'" + path.string() + "': unexpected k at row " + std::to_string(row));
        for (auto& col : table.columns) {
            if (!std::getline(fields, cell, ','))
                throw OutputError("'" + path.string() + "': short row " + std::to_string(row));
            col.push_back(std::strtod(cell.c_str(), nullptr));
        }
    }
    return table;
}

SeriesTable rmse_table(const AggregateResult& result)
{
    const auto length = static_cast<std::size_t>(result.horizon);
    SeriesTable t;
    t.names = kRmseColumns;
    for (const Estimator e : {Estimator::Ukf, Estimator::Pf}) {
        const auto* ea = find_estimator(result, e);
        t.columns.push_back(ea ? ea->rmse : std::vector<double>(length, kNaN));
    }
    return t;
}

SeriesTable bounds_table(const AggregateResult& result)
{
    const auto length = static_cast<std::size_t>(result.horizon);
    SeriesTable t;
    t.names = kBoundsColumns;
    t.columns.push_back(maybe_trace(result.true_bound, length));
    const auto* ukf = find_estimator(result, Estimator::Ukf);
    const auto* pf = find_estimator(result, Estimator::Pf);
    const MatrixListd none;
    t.columns.push_back(maybe_trace(ukf ? ukf->mean_only : none, length));
    t.columns.push_back(maybe_trace(pf ? pf->mean_only : none, length));
    t.columns.push_back(maybe_trace(ukf ? ukf->mean_cov : none, length));
    t.columns.push_back(maybe_trace(pf ? pf->mean_cov : none, length));
    return t;
}

SeriesTable gap_table(const AggregateResult& result)
{
    const auto length = static_cast<std::size_t>(result.horizon);
    SeriesTable t;
    t.names = kGapColumns;
    const MatrixListd none;
    for (const Estimator e : {Estimator::Ukf, Estimator::Pf}) {
        const auto* ea = find_estimator(result, e);
        t.columns.push_back(maybe_trace(ea ? ea->gap_analytic : none, length));
        t.columns.push_back(maybe_trace(ea ? ea->gap_direct : none, length));
    }
    return t;
}

void write_trajectories_csv(const std::vector<Trajectoryd>& trajectories, const std::filesystem::path& path)
{
    fmt::memory_buffer out;
    if (trajectories.empty()) {
        write_text("run,k\n", path);
        return;
    }
    const auto n = trajectories.front().states.rows();
    const auto m = trajectories.front().measurements.rows();
    fmt::format_to(std::back_inserter(out), "run,k");
    for (Eigen::Index i = 0; i < n; ++i)
        fmt::format_to(std::back_inserter(out), ",x{}", i + 1);
    for (Eigen::Index i = 0; i < m; ++i)
        fmt::format_to(std::back_inserter(out), ",z{}", i + 1);
    fmt::format_to(std::back_inserter(out), "\n");
    for (std::size_t r = 0; r < trajectories.size(); ++r) {
        const auto& t = trajectories[r];
        for (int k = 0; k <= t.horizon(); ++k) {
            fmt::format_to(std::back_inserter(out), "{},{}", r, k);
            for (Eigen::Index i = 0; i < n; ++i)
                fmt::format_to(std::back_inserter(out), ",{:.17g}", t.states(i, k));
            for (Eigen::Index i = 0; i < m; ++i)
                fmt::format_to(std::back_inserter(out), ",{:.17g}", k == 0 ? kNaN : t.measurements(i, k - 1));
            fmt::format_to(std::back_inserter(out), "\n");
        }
    }
    write_text(fmt::to_string(out), path);
}

void write_manifest(const ExperimentConfig& config, const AggregateResult& result, const std::filesystem::path& path)
{
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : result.failures)
        failures.push_back({{"run", f.run}, {"message", f.message}});

    nlohmann::json violations = nlohmann::json::object();
    for (const auto& ea : result.estimators) {
        nlohmann::json v{{"negative_direct_gap", ea.gap_violations},
                         {"indefinite_pi", ea.pi_indefinite},
                         {"pi_fallback", ea.pi_fallbacks}};
        if (!result.true_bound.empty()) {
            std::vector<int> above;
            for (std::size_t k = 0; k < result.true_bound.size(); ++k) {
                const double t = result.true_bound[k].trace();
                int count = 0;
                if (!ea.mean_only.empty() && t > ea.mean_only[k].trace())
                    ++count;
                if (!ea.mean_cov.empty() && t > ea.mean_cov[k].trace())
                    ++count;
                above.push_back(count);
            }
            v["true_above_approximation"] = above;
        }
        violations[to_string(ea.estimator)] = std::move(v);
    }

    const nlohmann::json manifest{
        {"seed", config.seed},
        {"config", config_json(config)},
        {"runs", {{"requested", config.runs}, {"succeeded", result.runs.size()}, {"failed", failures}}},
        {"violations", violations},
        {"outputs", {"rmse.csv", "bounds.csv", "gap.csv"}}};
    write_text(manifest.dump(2) + "\n", path);
}

void emit_plot_script(const std::vector<std::filesystem::path>& csv_paths, const std::filesystem::path& out_path)
{
    const auto dir = out_path.parent_path();
    fmt::memory_buffer out;
    fmt::format_to(std::back_inserter(out),
                   "# gnuplot script; run from this directory: gnuplot {}\n"
                   "set datafile separator ','\n"
                   "set key autotitle columnhead\n"
                   "set terminal pngcairo size 900,600\n"
                   "set xlabel 'k'\n"
                   "set grid\n",
                   out_path.filename().string());
    for (const auto& csv : csv_paths) {
        std::ifstream in(csv);
        std::string header;
        if (!in || !std::getline(in, header))
            throw OutputError("cannot read header of '" + csv.string() + "'");
        const auto columns = static_cast<int>(std::count(header.begin(), header.end(), ',')) + 1;
        const std::string ref = csv.parent_path() == dir ? csv.filename().string() : csv.string();
        const std::string stem = csv.stem().string();
        bool positive = true;
        std::string line;
        while (positive && std::getline(in, line)) {
            std::stringstream fields(line);
            std::string cell;
            std::getline(fields, cell, ',');
            while (std::getline(fields, cell, ','))
                positive = positive && std::strtod(cell.c_str(), nullptr) > 0.0;
        }
        fmt::format_to(std::back_inserter(out),
                       "\nset output '{}.png'\n"
                       "set title '{}'\n"
                       "{}\n"
                       "plot for [i=2:{}] '{}' using 1:i with linespoints\n",
                       stem, stem, positive ? "set logscale y" : "unset logscale y", columns, ref);
    }
    fmt::format_to(std::back_inserter(out), "\nunset output\n");
    write_text(fmt::to_string(out), out_path);
}

} // namespace pcrlb
