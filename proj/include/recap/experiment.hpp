#pragma once

// Drives a full experiment grid: pretrain (or load) the source model,
// estimate the frozen region from source features, then execute every
// (scenario x method x seed) cell and write metrics, summaries and the
// aggregate table under one output directory.

#include "recap/config.hpp"
#include "recap/report.hpp"

#include <string>
#include <vector>

namespace recap {

struct Prepared {
    SyntheticTask task;
    SourceModel source;
    RegionSpec region;
};

// Pretrains (or loads cfg.checkpoint) and estimates the region from
// cfg.region.source_samples fresh source features.
Prepared prepare_source(const RunConfig& cfg);

struct CellResult {
    std::string scenario;
    std::string method;
    std::uint64_t seed = 0;
    RunSummary summary;
};

// Runs one cell on a copy of the source model. The cell seed drives the
// stream and the probe; model, head and region are shared read-only state.
CellResult run_cell(const Prepared& prep, const RunConfig& cfg,
                    const ScenarioSetting& scenario, const MethodSetting& method,
                    std::uint64_t seed, MetricsLog* log_out);

struct ExperimentResult {
    Prepared prep;
    std::vector<CellResult> cells;
};

// out_dir empty: keep everything in memory. threads <= 1: sequential.
ExperimentResult run_experiment(const RunConfig& cfg, const std::string& out_dir,
                                unsigned threads);

// <out>/<scenario>/<method>/seed<seed>.metrics.csv and .summary.json.
std::string cell_csv_path(const std::string& out_dir, const CellResult& cell);
std::string cell_summary_path(const std::string& out_dir, const CellResult& cell);

}  // namespace recap
