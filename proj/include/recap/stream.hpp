#pragma once

// Synthetic source task and wild test-stream generators: limited batch
// size, mixed corruption domains, and time-varying imbalanced labels.

#include "recap/numerics.hpp"

#include <limits>
#include <string>

namespace recap {

// Source domain: one Gaussian blob per class around a random prototype.
struct SyntheticTask {
    Matrix prototypes;  // C x D
    double noise_scale = 1.0;
    Seed seed;

    std::size_t num_classes() const { return prototypes.rows; }
    std::size_t input_dim() const { return prototypes.cols; }

    static SyntheticTask make(std::size_t classes, std::size_t input_dim, double noise_scale,
                              double prototype_scale, Seed seed);
};

struct Dataset {
    Matrix x;            // n x D
    std::vector<int> y;  // n
    std::size_t size() const { return y.size(); }
};

// Balanced labeled sample of the source task (labels round-robin).
Dataset gen_source_dataset(const SyntheticTask& task, std::size_t n);

// Input-space corruption family. Severity tables (s = 1..5):
//   add_noise  x + e, e ~ N(0, (0.1 s)^2 I); fresh draw per call seed
//   rotate     rotation by 9 s degrees in a seed-fixed random 2-plane
//   scale      per-coordinate attenuation gains in [1 - 0.18 s, 1], seed-fixed
//   occlude    zero ceil(0.1 s D) coordinates chosen by the seed
// Expected displacement ||x' - x|| grows strictly with s for every kind.
enum class CorruptionKind { rotate, add_noise, scale, occlude };

const char* to_string(CorruptionKind kind);
CorruptionKind parse_corruption_kind(const std::string& name);

Vec corrupt(const Vec& x, CorruptionKind kind, int severity, Seed seed);

struct DomainSpec {
    CorruptionKind kind = CorruptionKind::add_noise;
    int severity = 5;
    double weight = 1.0;  // mixing coefficient
};

enum class LabelSchedule { iid, imbalanced };

constexpr double kRhoInfinity = std::numeric_limits<double>::infinity();

// Declarative description of one wild test stream. Under imbalanced(rho)
// the stream is split into C equal segments; in segment c class c has
// probability rho / (rho + C - 1) and the rest share the remainder
// uniformly. rho = infinity gives a sorted-by-class stream.
struct StreamScenario {
    std::string name;
    std::size_t batch_size = 64;
    std::size_t length = 10000;  // samples; a final partial batch is dropped
    std::vector<DomainSpec> domains;
    LabelSchedule schedule = LabelSchedule::iid;
    double rho = kRhoInfinity;
    Seed seed;

    void validate(std::size_t num_classes) const;
};

struct StreamBatch {
    Matrix x;                 // B x D
    std::vector<int> y;       // ground truth, for metrics only
    std::vector<int> domain;  // index into scenario.domains
};

// Fully deterministic in (task, scenario). Adaptation methods must only
// ever see the x rows; labels and domain ids feed the metrics log.
std::vector<StreamBatch> build_stream(const SyntheticTask& task, const StreamScenario& scenario);

}  // namespace recap
