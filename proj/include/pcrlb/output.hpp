/// @file output.hpp CSV series, run manifest and gnuplot script writers.
#pragma once

#include "pcrlb/experiment.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcrlb
{

class OutputError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Named value columns over k = 1..length. Written with a leading integer `k` column.
struct SeriesTable
{
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;

    std::size_t length() const { return columns.empty() ? 0 : columns.front().size(); }
};

inline const std::vector<std::string> kRmseColumns{"rmse_ukf", "rmse_pf"};
inline const std::vector<std::string> kBoundsColumns{"true", "meanonly_ukf", "meanonly_pf", "meancov_ukf", "meancov_pf"};
inline const std::vector<std::string> kGapColumns{"gap26_ukf", "gapdirect_ukf", "gap26_pf", "gapdirect_pf"};

/// Header `k,<names...>` then one row per step, floats with 17 significant digits.
std::string format_csv(const SeriesTable& table);

void write_csv(const SeriesTable& table, const std::filesystem::path& path);

SeriesTable read_csv(const std::filesystem::path& path);

/// Disabled estimators and methods appear as NaN columns so the schemas stay fixed.
SeriesTable rmse_table(const AggregateResult& result);
SeriesTable bounds_table(const AggregateResult& result);
SeriesTable gap_table(const AggregateResult& result);

/// One row per (run, k): run, k, x_1..x_n, z_1..z_m. The k = 0 row has NaN measurements.
void write_trajectories_csv(const std::vector<Trajectoryd>& trajectories, const std::filesystem::path& path);

/// JSON manifest: seed, configuration echo, failures and per-step violation counts.
void write_manifest(const ExperimentConfig& config, const AggregateResult& result, const std::filesystem::path& path);

/// gnuplot script drawing one figure per CSV into <stem>.png next to the script.
void emit_plot_script(const std::vector<std::filesystem::path>& csv_paths, const std::filesystem::path& out_path);

} // namespace pcrlb
