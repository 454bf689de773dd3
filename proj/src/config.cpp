#include "pcrlb/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pcrlb
{

namespace
{

struct ValueError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> parts;
    std::stringstream stream(s);
    std::string item;
    while (std::getline(stream, item, sep))
        parts.push_back(trim(item));
    if (!s.empty() && s.back() == sep)
        parts.emplace_back();
    return parts;
}

template <typename Int>
Int parse_integer(const std::string& v, const char* type)
{
    Int out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (v.empty() || ec != std::errc() || ptr != end)
        throw ValueError("expected " + std::string(type) + ", got '" + v + "'");
    return out;
}

double parse_double(const std::string& v)
{
    if (v.empty())
        throw ValueError("expected a number, got an empty value");
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        throw ValueError("expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "yes" || v == "on" || v == "1")
        return true;
    if (v == "false" || v == "no" || v == "off" || v == "0")
        return false;
    throw ValueError("expected a boolean, got '" + v + "'");
}

std::vector<double> parse_numbers(const std::string& v)
{
    std::string spaced = v;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::stringstream stream(spaced);
    std::vector<double> out;
    std::string token;
    while (stream >> token)
        out.push_back(parse_double(token));
    return out;
}

Eigen::VectorXd parse_vector(const std::string& v)
{
    const auto numbers = parse_numbers(v);
    if (numbers.empty())
        throw ValueError("expected a list of numbers");
    return Eigen::Map<const Eigen::VectorXd>(numbers.data(), static_cast<Eigen::Index>(numbers.size()));
}

/// Rows separated by ';', entries by spaces or commas.
Eigen::MatrixXd parse_matrix(const std::string& v)
{
    std::vector<std::vector<double>> rows;
    for (const auto& row : split(v, ';'))
        rows.push_back(parse_numbers(row));
    if (rows.empty() || rows.front().empty())
        throw ValueError("expected a matrix such as '1 0; 0 1'");
    const auto cols = rows.front().size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols)
            throw ValueError("matrix rows have different lengths");
        for (std::size_t j = 0; j < cols; ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return out;
}

template <typename Enum>
Enum parse_choice(const std::string& v, const std::vector<std::pair<std::string, Enum>>& choices)
{
    std::string names;
    for (const auto& [name, value] : choices) {
        if (name == v)
            return value;
        names += (names.empty() ? "" : ", ") + name;
    }
    throw ValueError("expected one of " + names + ", got '" + v + "'");
}

template <typename Enum>
std::vector<Enum> parse_choice_list(const std::string& v, const std::vector<std::pair<std::string, Enum>>& choices)
{
    std::vector<Enum> out;
    for (const auto& item : split(v, ',')) {
        const Enum e = parse_choice(item, choices);
        if (std::find(out.begin(), out.end(), e) != out.end())
            throw ValueError("'" + item + "' listed twice");
        out.push_back(e);
    }
    if (out.empty())
        throw ValueError("expected a non-empty list");
    return out;
}

const std::vector<std::pair<std::string, Estimator>> kEstimators{{"ukf", Estimator::Ukf}, {"pf", Estimator::Pf}};
const std::vector<std::pair<std::string, BoundMethod>> kMethods{
    {"true", BoundMethod::True}, {"meanonly", BoundMethod::MeanOnly}, {"meancov", BoundMethod::MeanCov}};
const std::vector<std::pair<std::string, BeliefChoice>> kBeliefs{{"posterior", BeliefChoice::Posterior},
                                                                 {"predicted", BeliefChoice::Predicted}};

using Setter = std::function<void(const std::string&, ExperimentConfig&)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table{
        {"model.name", [](const std::string& v, ExperimentConfig& c) { c.model.name = v; }},
        {"model.process_var", [](const std::string& v, ExperimentConfig& c) { c.model.process_var = parse_double(v); }},
        {"model.meas_var", [](const std::string& v, ExperimentConfig& c) { c.model.meas_var = parse_double(v); }},
        {"model.prior_mean", [](const std::string& v, ExperimentConfig& c) { c.model.prior_mean = parse_vector(v); }},
        {"model.prior_cov", [](const std::string& v, ExperimentConfig& c) { c.model.prior_cov = parse_matrix(v); }},
        {"model.a", [](const std::string& v, ExperimentConfig& c) { c.model.a = parse_matrix(v); }},
        {"model.h", [](const std::string& v, ExperimentConfig& c) { c.model.h = parse_matrix(v); }},
        {"model.q", [](const std::string& v, ExperimentConfig& c) { c.model.q = parse_matrix(v); }},
        {"model.r", [](const std::string& v, ExperimentConfig& c) { c.model.r = parse_matrix(v); }},

        {"experiment.horizon", [](const std::string& v, ExperimentConfig& c) { c.horizon = parse_integer<int>(v, "an integer"); }},
        {"experiment.runs", [](const std::string& v, ExperimentConfig& c) { c.runs = parse_integer<int>(v, "an integer"); }},
        {"experiment.seed",
         [](const std::string& v, ExperimentConfig& c) { c.seed = parse_integer<std::uint64_t>(v, "an unsigned 64-bit integer"); }},
        {"experiment.workers", [](const std::string& v, ExperimentConfig& c) { c.workers = parse_integer<int>(v, "an integer"); }},
        {"experiment.averaging",
         [](const std::string& v, ExperimentConfig& c) {
             c.averaging = parse_choice<AveragingMode>(
                 v, {{"average-bounds", AveragingMode::AverageBounds}, {"average-fim", AveragingMode::AverageFim}});
         }},
        {"experiment.estimators",
         [](const std::string& v, ExperimentConfig& c) { c.estimators = parse_choice_list(v, kEstimators); }},
        {"experiment.max_failure_fraction",
         [](const std::string& v, ExperimentConfig& c) { c.max_failure_fraction = parse_double(v); }},

        {"filters.particles", [](const std::string& v, ExperimentConfig& c) { c.particles = parse_integer<int>(v, "an integer"); }},
        {"filters.resample",
         [](const std::string& v, ExperimentConfig& c) {
             c.resample = parse_choice<ResamplePolicy>(
                 v, {{"every-step", ResamplePolicy::EveryStep}, {"ess", ResamplePolicy::EffectiveSampleSize}});
         }},
        {"filters.ess_fraction", [](const std::string& v, ExperimentConfig& c) { c.ess_fraction = parse_double(v); }},
        {"filters.ut_alpha", [](const std::string& v, ExperimentConfig& c) { c.unscented.alpha = parse_double(v); }},
        {"filters.ut_beta", [](const std::string& v, ExperimentConfig& c) { c.unscented.beta = parse_double(v); }},
        {"filters.ut_kappa", [](const std::string& v, ExperimentConfig& c) { c.unscented.kappa = parse_double(v); }},

        {"bounds.methods", [](const std::string& v, ExperimentConfig& c) { c.methods = parse_choice_list(v, kMethods); }},
        {"bounds.state_belief",
         [](const std::string& v, ExperimentConfig& c) { c.state_belief = parse_choice(v, kBeliefs); }},
        {"bounds.measurement_point",
         [](const std::string& v, ExperimentConfig& c) { c.measurement_point = parse_choice(v, kBeliefs); }},

        {"output.dir", [](const std::string& v, ExperimentConfig& c) { c.output_dir = v; }},
        {"output.plots", [](const std::string& v, ExperimentConfig& c) { c.plots = parse_bool(v); }},
    };
    return table;
}

const std::set<std::string> kSections{"model", "experiment", "filters", "bounds", "output"};

} // namespace

ExperimentConfig parse_config_text(const std::string& text, const std::string& source)
{
    ExperimentConfig config;
    std::set<std::string> seen;
    std::string section;
    std::istringstream stream(text);
    std::string raw;
    int line_no = 0;

    auto fail = [&](const std::string& message) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": " + message);
    };

    while (std::getline(stream, raw)) {
        ++line_no;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty())
            continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                fail("malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (!kSections.count(section))
                fail("unknown section '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail("expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty())
            fail("key '" + key + "' appears before any [section]");
        const std::string full = section + "." + key;
        const auto it = setters().find(full);
        if (it == setters().end())
            fail("unknown key '" + full + "'");
        if (!seen.insert(full).second)
            fail("duplicate key '" + full + "'");
        try {
            it->second(value, config);
        } catch (const ValueError& e) {
            fail(full + ": " + e.what());
        }
    }

    if (!seen.count("model.name"))
        throw ConfigError(source + ": missing required key 'model.name'");
    try {
        validate(config);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path.string());
}

} // namespace pcrlb
