#pragma once

// Executable verification suites: every inequality, degeneration,
// invariance and gradient contract as a batch of randomized checks with
// failing instances serialized for replay. Shared by the CLI and the
// acceptance tests.

#include "recap/numerics.hpp"

#include <string>
#include <vector>

namespace recap {

struct SuiteResult {
    std::string name;
    std::size_t checks = 0;
    std::size_t failures = 0;
    std::vector<std::string> failure_notes;
    double seconds = 0.0;

    bool passed() const { return failures == 0; }
};

// Inequality / degeneration / invariance suites (cmd_verify).
std::vector<std::string> verify_suite_names();
// Finite-difference suites (cmd_gradcheck).
std::vector<std::string> gradcheck_suite_names();

// scale multiplies the documented instance counts (1.0 keeps them).
SuiteResult run_suite(const std::string& name, Seed seed, double scale = 1.0);

}  // namespace recap
