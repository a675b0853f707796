#pragma once

// Experiment configuration: a versioned JSON document with explicit keys.
// Unknown keys anywhere in the document are hard errors that name the
// offending path, so config typos cannot silently change a run.

#include "recap/adapt.hpp"
#include "recap/model.hpp"
#include "recap/stream.hpp"

#include <string>
#include <vector>

namespace recap {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TaskConfig {
    std::size_t classes = 10;
    std::size_t input_dim = 32;
    double noise_scale = 1.25;
    double prototype_scale = 0.45;
    std::uint64_t seed = 9001;
};

struct ModelConfig {
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 16;
    std::size_t pretrain_epochs = 20;
    double pretrain_lr = 0.01;
    double pretrain_momentum = 0.9;
    std::size_t pretrain_batch = 32;
    std::size_t pretrain_samples = 2000;
    double label_smoothing = 0.1;
    std::uint64_t seed = 7;
};

struct RegionConfig {
    double tau = 1.2;
    std::size_t source_samples = 500;
};

struct MethodSetting {
    std::string kind = "recap";
    std::string name;            // display/output label; defaults to kind
    double lambda = 0.5;
    double tau_re_factor = 0.8;  // tau_re = factor * ln(C)
    double l0_factor = 0.7;      // l0 = factor * ln(C)
    double lr = 0.001;
    double momentum = 0.9;

    MethodConfig resolve(std::size_t classes) const;
    std::string label() const { return name.empty() ? kind : name; }
};

struct DomainSetting {
    std::string kind = "occlude";
    int severity = 5;
    double weight = 1.0;
};

struct ScenarioSetting {
    std::string name;
    std::size_t batch_size = 64;
    std::size_t length = 10000;
    std::vector<DomainSetting> domains;
    std::string label_schedule = "iid";  // "iid" | "imbalanced"
    double rho = kRhoInfinity;           // "inf" in JSON

    StreamScenario resolve(Seed seed) const;
};

struct ProbeSetting {
    std::size_t every = 1;
    std::size_t samples = 128;
};

struct RunConfig {
    int version = 1;
    TaskConfig task;
    ModelConfig model;
    RegionConfig region;
    ProbeSetting probe;
    std::vector<MethodSetting> methods;
    std::vector<ScenarioSetting> scenarios;
    std::vector<std::uint64_t> seeds;
    std::string checkpoint;  // optional path; pretrains when empty/missing

    ModelProfile profile() const;
};

// Default grid: {none, entropy, entropy_select, recap} x the three wild
// scenario profiles x 5 seeds.
RunConfig default_run_config();

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

}  // namespace recap
