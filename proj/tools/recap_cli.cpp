// Experiment CLI: verification suites, gradient checks, source
// pretraining, wild-stream runs, the proxy-vs-MC benchmark, consistency
// probes and report emission.

#include "recap/experiment.hpp"
#include "recap/oracle.hpp"
#include "recap/suites.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using namespace recap;

namespace {

int run_suites(const std::vector<std::string>& names, const std::string& filter,
               std::uint64_t seed, double scale) {
    bool matched = false;
    bool ok = true;
    for (const std::string& name : names) {
        if (!filter.empty() && name != filter) continue;
        matched = true;
        const SuiteResult res = run_suite(name, Seed{seed}, scale);
        std::cout << "suite " << std::left << std::setw(18) << res.name << " "
                  << (res.checks - res.failures) << "/" << res.checks << " pass  (" << std::fixed
                  << std::setprecision(2) << res.seconds << " s)\n";
        if (!res.passed()) {
            ok = false;
            for (const std::string& note : res.failure_notes)
                std::cerr << "  FAIL " << note << "\n";
            if (name == "prop1")
                std::cerr << "  note: the regional-entropy bound weights classes by a softmax "
                             "of moments; a small share (~2%) of random instances genuinely "
                             "exceeds it. The failing instances above replay deterministically.\n";
        }
    }
    if (!matched) {
        std::cerr << "no suite matches --suite " << filter << "\n";
        return 2;
    }
    return ok ? 0 : 1;
}

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? default_run_config() : load_run_config(path);
}

void print_summary_table(const std::vector<CellRow>& rows) {
    struct Agg {
        double acc = 0.0;
        std::size_t n = 0;
        std::size_t collapsed = 0;
    };
    std::map<std::string, std::map<std::string, Agg>> table;
    for (const CellRow& r : rows) {
        Agg& a = table[r.scenario][r.method];
        a.acc += r.accuracy;
        a.n += 1;
        if (r.collapsed) a.collapsed += 1;
    }
    for (const auto& [scenario, methods] : table) {
        std::cout << scenario << ":\n";
        for (const auto& [method, a] : methods) {
            std::cout << "  " << std::left << std::setw(16) << method << " acc="
                      << std::fixed << std::setprecision(4)
                      << a.acc / static_cast<double>(a.n) << " (" << a.n << " seeds";
            if (a.collapsed > 0) std::cout << ", " << a.collapsed << " collapsed";
            std::cout << ")\n";
        }
    }
}

int cmd_report(const std::string& out_dir) {
    std::vector<CellRow> rows;
    const std::string single = out_dir + "/cells.csv";
    if (fs::exists(single)) {
        rows = read_cells_csv(single);
    } else if (fs::is_directory(out_dir)) {
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            if (!entry.is_directory()) continue;
            const std::string nested = entry.path().string() + "/cells.csv";
            if (fs::exists(nested)) {
                const auto part = read_cells_csv(nested);
                rows.insert(rows.end(), part.begin(), part.end());
            }
        }
    }
    if (rows.empty())
        throw std::runtime_error("report: no run cells found (expected " + single +
                                 " or <run>/cells.csv under " + out_dir + ")");

    write_summary_table(out_dir + "/report_summary.csv", rows);
    std::cout << "wrote " << out_dir << "/report_summary.csv (" << rows.size() << " cells)\n";
    print_summary_table(rows);

    // Aggregate accuracy per (scenario, x) curve with mean over seeds.
    auto curve = [&](auto key_of, const std::string& path, const std::string& x_label) {
        std::map<std::string, std::map<double, std::pair<double, std::size_t>>> agg;
        for (const CellRow& r : rows) {
            auto key = key_of(r);
            if (!key.second) continue;
            auto& cell = agg[r.scenario][key.first];
            cell.first += r.accuracy;
            cell.second += 1;
        }
        std::set<double> xs;
        for (const auto& [_, m] : agg)
            for (const auto& [x, __] : m) xs.insert(x);
        if (xs.size() < 2) return false;  // no grid to plot
        std::vector<Series> series;
        for (const auto& [scenario, m] : agg) {
            Series s;
            s.name = scenario;
            for (const auto& [x, acc] : m)
                s.points.push_back({x, acc.first / static_cast<double>(acc.second)});
            series.push_back(std::move(s));
        }
        write_svg_chart(path, "online accuracy", x_label, "accuracy", series);
        std::cout << "wrote " << path << "\n";
        return true;
    };
    curve(
        [](const CellRow& r) {
            return std::make_pair(r.lambda, r.method.rfind("recap", 0) == 0);
        },
        out_dir + "/accuracy_vs_lambda.svg", "lambda");
    curve(
        [](const CellRow& r) {
            return std::make_pair(r.tau, r.method.rfind("recap", 0) == 0);
        },
        out_dir + "/accuracy_vs_tau.svg", "tau");

    // KL trajectory, when a probe run is present.
    const std::string probe_csv = out_dir + "/probe_trajectory.csv";
    if (fs::exists(probe_csv)) {
        std::ifstream is(probe_csv);
        std::string line;
        std::getline(is, line);  // schema
        std::getline(is, line);  // header
        std::map<std::string, Series> by_method;
        while (std::getline(is, line)) {
            const auto comma1 = line.find(',');
            const auto comma2 = line.find(',', comma1 + 1);
            const auto comma3 = line.find(',', comma2 + 1);
            if (comma3 == std::string::npos) continue;
            const std::string method = line.substr(0, comma1);
            const double step = std::stod(line.substr(comma1 + 1, comma2 - comma1 - 1));
            const double kl = std::stod(line.substr(comma2 + 1, comma3 - comma2 - 1));
            Series& s = by_method[method];
            s.name = method;
            s.points.push_back({step, kl});
        }
        std::vector<Series> series;
        for (auto& [_, s] : by_method) series.push_back(std::move(s));
        write_svg_chart(out_dir + "/probe_kl_vs_step.svg", "probe KL during adaptation", "step",
                        "mean KL", series);
        std::cout << "wrote " << out_dir << "/probe_kl_vs_step.svg\n";
    }
    return 0;
}

int cmd_probe(const RunConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    fs::create_directories(out_dir);
    const Prepared prep = prepare_source(cfg);

    // Probe on the imbalanced scenario when present, else the first one.
    const ScenarioSetting* scenario = &cfg.scenarios.front();
    for (const ScenarioSetting& s : cfg.scenarios)
        if (s.label_schedule == "imbalanced") scenario = &s;

    std::ofstream os(out_dir + "/probe_trajectory.csv");
    os << "# schema: recap.probe.v1\n";
    os << "method,step,probe_kl,probe_inconsistent\n";
    os.precision(12);
    for (const MethodSetting& method : cfg.methods) {
        MetricsLog log;
        run_cell(prep, cfg, *scenario, method, seed, &log);
        for (const StepRecord& rec : log.steps) {
            if (rec.probe_kl < 0.0) continue;
            os << method.label() << ',' << rec.step << ',' << rec.probe_kl << ','
               << rec.probe_inconsistent << "\n";
        }
        std::cout << "probed " << method.label() << " on " << scenario->name << " ("
                  << log.steps.size() << " steps)\n";
    }
    std::cout << "wrote " << out_dir << "/probe_trajectory.csv\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& out_dir, std::uint64_t seed) {
    fs::create_directories(out_dir);
    const Prepared prep = prepare_source(cfg);

    // Timing batch: source features through the adapted pipeline.
    const Dataset sample = gen_source_dataset(prep.task, 64);
    Matrix features(sample.size(), cfg.model.feature_dim);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const ForwardResult fr = forward(sample.x.row_vec(i), prep.source.backbone,
                                         prep.source.head);
        for (std::size_t k = 0; k < cfg.model.feature_dim; ++k) features(i, k) = fr.z[k];
    }
    BenchReport report = bench_proxy_vs_mc(prep.source.head, prep.region, features, 128, 50);

    // Forward/backward accounting per method over a short stream.
    ScenarioSetting scenario = cfg.scenarios.front();
    scenario.length = std::min<std::size_t>(scenario.length, 20 * scenario.batch_size);
    for (const MethodSetting& method : cfg.methods) {
        MetricsLog log;
        run_cell(prep, cfg, scenario, method, seed, &log);
        MethodCounters c;
        c.method = method.label();
        const double nb = static_cast<double>(log.summary.batches);
        c.forwards_per_batch = static_cast<double>(log.summary.forward_batches) / nb;
        c.backwards_per_batch = static_cast<double>(log.summary.backward_batches) / nb;
        std::vector<std::uint64_t> times;
        for (const StepRecord& r : log.steps)
            if (times.empty() || r.batch_wall_ns != times.back()) times.push_back(r.batch_wall_ns);
        std::sort(times.begin(), times.end());
        c.median_step_ns = times.empty() ? 0 : times[times.size() / 2];
        report.counters.push_back(c);
    }

    std::ofstream os(out_dir + "/bench.csv");
    os << "# schema: recap.bench.v1\n";
    os << "method,forwards,backwards,median_step_ns\n";
    for (const MethodCounters& c : report.counters)
        os << c.method << ',' << c.forwards_per_batch << ',' << c.backwards_per_batch << ','
           << c.median_step_ns << "\n";

    std::ofstream os2(out_dir + "/proxy_vs_mc.csv");
    os2 << "# schema: recap.proxy_bench.v1\n";
    os2 << "batch_size,mc_samples,repeats,closed_form_ns,mc_ns,speedup\n";
    os2 << report.batch_size << ',' << report.mc_samples << ',' << report.repeats << ','
        << report.closed_form_ns << ',' << report.mc_ns << ',' << report.speedup << "\n";

    std::cout << "closed-form batch eval: " << report.closed_form_ns << " ns,  "
              << report.mc_samples << "-sample MC: " << report.mc_ns << " ns,  speedup "
              << std::fixed << std::setprecision(1) << report.speedup << "x\n";
    for (const MethodCounters& c : report.counters)
        std::cout << "  " << std::left << std::setw(16) << c.method
                  << " forwards/batch=" << c.forwards_per_batch
                  << " backwards/batch=" << c.backwards_per_batch
                  << " median_step_ns=" << c.median_step_ns << "\n";
    std::cout << "wrote " << out_dir << "/bench.csv and proxy_vs_mc.csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"region-confidence proxy for wild test-time adaptation"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "recap_out", suite_filter;
    std::uint64_t seed = 7060;
    unsigned threads = 2;
    double samples = 100.0;

    auto* verify = app.add_subcommand("verify", "run the inequality/invariance suites");
    verify->add_option("--suite", suite_filter, "run only the named suite");
    verify->add_option("--seed", seed, "suite base seed");
    verify->add_option("--samples", samples, "instance budget (100 = documented counts)");

    auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference suites");
    gradcheck->add_option("--suite", suite_filter, "run only the named suite");
    gradcheck->add_option("--seed", seed, "suite base seed");
    gradcheck->add_option("--samples", samples, "instance budget (100 = documented counts)");

    auto* pretrain = app.add_subcommand("pretrain", "pretrain the source model");
    pretrain->add_option("--config", config_path, "run config JSON");
    pretrain->add_option("--out", out_dir, "output directory");

    auto* run = app.add_subcommand("run", "run the full experiment grid");
    run->add_option("--config", config_path, "run config JSON");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--threads", threads, "worker threads for independent cells");

    auto* bench = app.add_subcommand("bench", "proxy-vs-MC timing and per-method counters");
    bench->add_option("--config", config_path, "run config JSON");
    bench->add_option("--out", out_dir, "output directory");
    bench->add_option("--seed", seed, "stream seed");

    auto* probe = app.add_subcommand("probe", "consistency trajectories during adaptation");
    probe->add_option("--config", config_path, "run config JSON");
    probe->add_option("--out", out_dir, "output directory");
    probe->add_option("--seed", seed, "stream seed");

    auto* report = app.add_subcommand("report", "aggregate run outputs into tables and plots");
    report->add_option("--out", out_dir, "directory holding run outputs")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed())
            return run_suites(verify_suite_names(), suite_filter, seed, samples / 100.0);
        if (gradcheck->parsed())
            return run_suites(gradcheck_suite_names(), suite_filter, seed, samples / 100.0);
        if (pretrain->parsed()) {
            const RunConfig cfg = config_or_default(config_path);
            fs::create_directories(out_dir);
            const Prepared prep = prepare_source(cfg);
            const std::string path = out_dir + "/source_checkpoint.bin";
            save_checkpoint(path, prep.source.backbone, prep.source.head);
            std::ofstream os(out_dir + "/pretrain.json");
            os << "{\n  \"source_accuracy\": " << prep.source.source_accuracy
               << ",\n  \"checkpoint\": \"" << path << "\"\n}\n";
            std::cout << "source accuracy " << std::fixed << std::setprecision(4)
                      << prep.source.source_accuracy << ", checkpoint at " << path << "\n";
            return 0;
        }
        if (run->parsed()) {
            const RunConfig cfg = config_or_default(config_path);
            const ExperimentResult result = run_experiment(cfg, out_dir, threads);
            const std::vector<CellRow> rows = read_cells_csv(out_dir + "/cells.csv");
            std::cout << "source accuracy " << std::fixed << std::setprecision(4)
                      << result.prep.source.source_accuracy << "\n";
            print_summary_table(rows);
            std::cout << "outputs under " << out_dir << "\n";
            return 0;
        }
        if (bench->parsed()) return cmd_bench(config_or_default(config_path), out_dir, seed);
        if (probe->parsed()) return cmd_probe(config_or_default(config_path), out_dir, seed);
        if (report->parsed()) return cmd_report(out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
