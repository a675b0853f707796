#pragma once

// Output plumbing: versioned CSV metrics, JSON summary sidecars, simple
// aggregation across run cells, and self-contained SVG line charts.

#include "recap/adapt.hpp"

#include <string>
#include <vector>

namespace recap {

// Schema v1 columns; `batch_wall_ns` is the only timing column and is
// excluded from determinism comparisons.
inline constexpr const char* kMetricsSchema = "recap.metrics.v1";

void write_metrics_csv(const std::string& path, const MetricsLog& log);

// Rows of a previously written metrics CSV (numeric fields only, parsed
// back for reporting).
struct MetricsRow {
    std::size_t step = 0;
    double entropy = 0.0;
    double l_re = 0.0;
    double probe_kl = -1.0;
    double probe_inconsistent = -1.0;
};
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

void write_summary_json(const std::string& path, const RunSummary& summary,
                        const std::string& scenario, const std::string& method,
                        std::uint64_t seed);

// One line per run cell, appended by the experiment driver.
struct CellRow {
    std::string scenario;
    std::string method;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double mean_entropy = 0.0;
    double mean_l_re = 0.0;
    double mean_probe_kl = 0.0;
    double mean_probe_kl_tail = 0.0;
    std::size_t backward_batches = 0;
    std::size_t selected_samples = 0;
    bool collapsed = false;
    double lambda = 0.0;
    double tau = 0.0;
};
void write_cells_csv(const std::string& path, const std::vector<CellRow>& rows);
std::vector<CellRow> read_cells_csv(const std::string& path);

// Mean/std aggregate over seeds, one row per (scenario, method).
void write_summary_table(const std::string& path, const std::vector<CellRow>& rows);

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series);

}  // namespace recap
