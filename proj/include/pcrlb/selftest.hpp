/// @file selftest.hpp Built-in verification suites run by `pcrlb selftest`.
#pragma once

#include <string>
#include <vector>

namespace pcrlb
{

struct SelftestCase
{
    std::string suite;
    std::string name;
    bool passed = false;
    double worst = 0.0;  ///< largest observed relative error
    double tolerance = 0.0;
};

/// Bound engines against Kalman covariances on random stable linear-Gaussian models.
std::vector<SelftestCase> kalman_oracle_suite(unsigned models = 10, int horizon = 50);

/// Theta/Pi decomposition and closed-form bound identities on random UNGM beliefs.
std::vector<SelftestCase> decomposition_suite(unsigned cases = 100);

std::vector<SelftestCase> run_selftest();

} // namespace pcrlb
