#include "recap/experiment.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

namespace recap {

namespace fs = std::filesystem;

Prepared prepare_source(const RunConfig& cfg) {
    Prepared prep;
    prep.task = SyntheticTask::make(cfg.task.classes, cfg.task.input_dim, cfg.task.noise_scale,
                                    cfg.task.prototype_scale, Seed{cfg.task.seed});
    if (!cfg.checkpoint.empty() && fs::exists(cfg.checkpoint)) {
        prep.source = load_checkpoint(cfg.checkpoint);
        const Dataset eval = gen_source_dataset(prep.task, cfg.model.pretrain_samples);
        prep.source.source_accuracy =
            evaluate_accuracy(eval, prep.source.backbone, prep.source.head);
    } else {
        const Dataset train = gen_source_dataset(prep.task, cfg.model.pretrain_samples);
        PretrainConfig pc;
        pc.epochs = cfg.model.pretrain_epochs;
        pc.lr = cfg.model.pretrain_lr;
        pc.momentum = cfg.model.pretrain_momentum;
        pc.batch_size = cfg.model.pretrain_batch;
        pc.label_smoothing = cfg.model.label_smoothing;
        pc.seed = Seed{cfg.model.seed};
        prep.source = pretrain_source(train, cfg.profile(), pc);
    }

    // Frozen region: feature variances over a small in-distribution sample,
    // drawn independently of the training set.
    SyntheticTask region_task = prep.task;
    region_task.seed = Rng(Seed{cfg.task.seed}).split(0xF0).seed();
    const Dataset probe_set = gen_source_dataset(region_task, cfg.region.source_samples);
    Matrix features(probe_set.size(), cfg.model.feature_dim);
    for (std::size_t i = 0; i < probe_set.size(); ++i) {
        const ForwardResult fr =
            forward(probe_set.x.row_vec(i), prep.source.backbone, prep.source.head);
        for (std::size_t k = 0; k < cfg.model.feature_dim; ++k) features(i, k) = fr.z[k];
    }
    prep.region = estimate_region(features, cfg.region.tau);
    return prep;
}

CellResult run_cell(const Prepared& prep, const RunConfig& cfg,
                    const ScenarioSetting& scenario, const MethodSetting& method,
                    std::uint64_t seed, MetricsLog* log_out) {
    const StreamScenario sc = scenario.resolve(Seed{seed});
    const std::vector<StreamBatch> stream = build_stream(prep.task, sc);

    TinyBackbone model = prep.source.backbone;  // each cell adapts its own copy
    const MethodConfig mc = method.resolve(cfg.task.classes);
    ProbeConfig probe;
    probe.every = cfg.probe.every;
    probe.samples = cfg.probe.samples;
    probe.seed = Rng(Seed{seed}).split(0x9E).seed();

    MetricsLog log = run_stream(model, prep.source.head, stream, mc, prep.region, probe);

    CellResult cell;
    cell.scenario = scenario.name;
    cell.method = method.label();
    cell.seed = seed;
    cell.summary = log.summary;
    if (log_out) *log_out = std::move(log);
    return cell;
}

std::string cell_csv_path(const std::string& out_dir, const CellResult& cell) {
    return out_dir + "/" + cell.scenario + "/" + cell.method + "/seed" +
           std::to_string(cell.seed) + ".metrics.csv";
}

std::string cell_summary_path(const std::string& out_dir, const CellResult& cell) {
    return out_dir + "/" + cell.scenario + "/" + cell.method + "/seed" +
           std::to_string(cell.seed) + ".summary.json";
}

ExperimentResult run_experiment(const RunConfig& cfg, const std::string& out_dir,
                                unsigned threads) {
    ExperimentResult result;
    result.prep = prepare_source(cfg);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        // The exact config ships with the outputs so any run can be replayed.
        std::ofstream cfg_os(out_dir + "/run_config.json");
        cfg_os << run_config_to_json(cfg);
        save_checkpoint(out_dir + "/source_checkpoint.bin", result.prep.source.backbone,
                        result.prep.source.head);
    }

    struct CellSpec {
        const ScenarioSetting* scenario;
        const MethodSetting* method;
        std::uint64_t seed;
    };
    std::vector<CellSpec> specs;
    for (const ScenarioSetting& sc : cfg.scenarios)
        for (const MethodSetting& m : cfg.methods)
            for (std::uint64_t seed : cfg.seeds) specs.push_back({&sc, &m, seed});

    result.cells.resize(specs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            const CellSpec& spec = specs[i];
            MetricsLog log;
            CellResult cell =
                run_cell(result.prep, cfg, *spec.scenario, *spec.method, spec.seed, &log);
            if (!out_dir.empty()) {
                fs::create_directories(out_dir + "/" + cell.scenario + "/" + cell.method);
                write_metrics_csv(cell_csv_path(out_dir, cell), log);
                write_summary_json(cell_summary_path(out_dir, cell), cell.summary,
                                   cell.scenario, cell.method, cell.seed);
            }
            result.cells[i] = std::move(cell);
        }
    };

    const unsigned n_workers = std::max(1u, threads);
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    if (!out_dir.empty()) {
        std::vector<CellRow> rows;
        for (const CellResult& cell : result.cells) {
            CellRow row;
            row.scenario = cell.scenario;
            row.method = cell.method;
            row.seed = cell.seed;
            row.accuracy = cell.summary.online_accuracy;
            row.mean_entropy = cell.summary.mean_entropy;
            row.mean_l_re = cell.summary.mean_l_re;
            row.mean_probe_kl = cell.summary.mean_probe_kl;
            row.mean_probe_kl_tail = cell.summary.mean_probe_kl_tail;
            row.backward_batches = cell.summary.backward_batches;
            row.selected_samples = cell.summary.selected_samples;
            row.collapsed = cell.summary.collapsed;
            for (const MethodSetting& m : cfg.methods)
                if (m.label() == cell.method) row.lambda = m.lambda;
            row.tau = cfg.region.tau;
            rows.push_back(row);
        }
        write_cells_csv(out_dir + "/cells.csv", rows);
        write_summary_table(out_dir + "/summary.csv", rows);
    }
    return result;
}

}  // namespace recap
