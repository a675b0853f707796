#pragma once

// Online adaptation engine over a wild stream. Protocol per batch:
// forward, record predictions, compute the method loss, and if any sample
// is selected apply exactly one SGD step to (gamma, beta). Predictions are
// always recorded before the update they trigger.

#include "recap/model.hpp"
#include "recap/region.hpp"
#include "recap/stream.hpp"

#include <map>
#include <optional>
#include <string>

namespace recap {

enum class MethodKind {
    none,            // frozen model
    entropy,         // entropy loss on every sample
    entropy_select,  // entropy-thresholded selection + weighting, entropy loss
    recap,           // selection/weighting on regional entropy, l_re + lambda l_ri
};

const char* to_string(MethodKind kind);
MethodKind parse_method_kind(const std::string& name);

struct MethodConfig {
    MethodKind kind = MethodKind::none;
    RecapHyper hyper;  // tau_re / l0 also drive entropy_select; lambda is recap-only
    double lr = 0.001;
    double momentum = 0.9;
};

struct StepRecord {
    std::size_t step = 0;   // global sample index
    std::size_t batch = 0;  // batch index
    int domain = 0;
    int true_class = 0;
    int pred_class = 0;
    double entropy = 0.0;
    double l_re = 0.0;
    double l_ri = 0.0;
    bool selected = false;
    double alpha = 0.0;
    double probe_inconsistent = -1.0;  // -1 when the step was not probed
    double probe_kl = -1.0;
    double batch_loss = 0.0;
    std::uint64_t batch_wall_ns = 0;  // timing only; excluded from determinism
};

struct RunSummary {
    std::size_t samples = 0;
    std::size_t batches = 0;
    double online_accuracy = 0.0;
    std::map<int, double> per_domain_accuracy;
    std::map<int, std::size_t> per_domain_count;
    double mean_entropy = 0.0;
    double mean_l_re = 0.0;
    double mean_probe_kl = 0.0;             // over probed steps
    double mean_probe_kl_tail = 0.0;        // over the last `tail_window` probed steps
    std::size_t tail_window = 1000;
    double mean_probe_inconsistent = 0.0;
    std::size_t forward_batches = 0;
    std::size_t forward_samples = 0;
    std::size_t backward_batches = 0;
    std::size_t selected_samples = 0;
    bool collapsed = false;
    std::size_t collapse_step = 0;
    std::string collapse_reason;
    std::uint64_t total_wall_ns = 0;
};

struct MetricsLog {
    std::vector<StepRecord> steps;
    RunSummary summary;
};

struct ProbeConfig {
    std::size_t every = 1;  // probe every n-th sample; 0 disables probing
    std::size_t samples = 128;
    Seed seed;
};

// Per-method gradient path never sees labels or domain ids; they are only
// read when filling the metrics rows.
MetricsLog run_stream(TinyBackbone& model, const AffineHead& head,
                      const std::vector<StreamBatch>& stream, const MethodConfig& method,
                      const RegionSpec& region, const ProbeConfig& probe);

// Read-only local-consistency probe around a feature: the share of
// region samples whose argmax class differs from the center's, and the
// mean KL from the center prediction. Head-only forwards; the backbone
// is never touched.
struct ProbeResult {
    double inconsistent_fraction = 0.0;
    double mean_kl = 0.0;
};
ProbeResult consistency_probe(const AffineHead& head, const Vec& z, const RegionSpec& region,
                              std::size_t n, Seed seed);

// Closed-form regional losses vs naive MC estimation on one feature batch,
// plus per-batch forward/backward counters per method.
struct MethodCounters {
    std::string method;
    double forwards_per_batch = 0.0;
    double backwards_per_batch = 0.0;
    std::uint64_t median_step_ns = 0;
};

struct BenchReport {
    std::uint64_t closed_form_ns = 0;  // median per-batch wall time
    std::uint64_t mc_ns = 0;
    double speedup = 0.0;
    std::size_t batch_size = 0;
    std::size_t mc_samples = 0;
    std::size_t repeats = 0;
    std::vector<MethodCounters> counters;
};

BenchReport bench_proxy_vs_mc(const AffineHead& head, const RegionSpec& region,
                              const Matrix& features, std::size_t n_mc, std::size_t repeats);

}  // namespace recap
