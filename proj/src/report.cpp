#include "recap/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace recap {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.precision(12);
    return os;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const MetricsLog& log) {
    std::ofstream os = open_out(path);
    os << "# schema: " << kMetricsSchema << "\n";
    os << "step,batch,domain,true_class,pred_class,entropy,l_re,l_ri,selected,alpha,"
          "probe_inconsistent,probe_kl,batch_loss,batch_wall_ns\n";
    for (const StepRecord& r : log.steps) {
        os << r.step << ',' << r.batch << ',' << r.domain << ',' << r.true_class << ','
           << r.pred_class << ',' << r.entropy << ',' << r.l_re << ',' << r.l_ri << ','
           << (r.selected ? 1 : 0) << ',' << r.alpha << ',' << r.probe_inconsistent << ','
           << r.probe_kl << ',' << r.batch_loss << ',' << r.batch_wall_ns << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open metrics csv (expected at " + path + ")");
    std::string line;
    std::getline(is, line);
    if (line.find(kMetricsSchema) == std::string::npos)
        throw std::runtime_error("metrics csv schema mismatch in " + path);
    std::getline(is, line);  // column header
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() < 14) throw std::runtime_error("short metrics row in " + path);
        MetricsRow row;
        row.step = std::stoull(f[0]);
        row.entropy = std::stod(f[5]);
        row.l_re = std::stod(f[6]);
        row.probe_inconsistent = std::stod(f[10]);
        row.probe_kl = std::stod(f[11]);
        rows.push_back(row);
    }
    return rows;
}

void write_summary_json(const std::string& path, const RunSummary& s,
                        const std::string& scenario, const std::string& method,
                        std::uint64_t seed) {
    nlohmann::json doc;
    doc["schema"] = "recap.summary.v1";
    doc["scenario"] = scenario;
    doc["method"] = method;
    doc["seed"] = seed;
    doc["samples"] = s.samples;
    doc["batches"] = s.batches;
    doc["online_accuracy"] = s.online_accuracy;
    doc["mean_entropy"] = s.mean_entropy;
    doc["mean_l_re"] = s.mean_l_re;
    doc["mean_probe_kl"] = s.mean_probe_kl;
    doc["mean_probe_kl_tail"] = s.mean_probe_kl_tail;
    doc["tail_window"] = s.tail_window;
    doc["mean_probe_inconsistent"] = s.mean_probe_inconsistent;
    doc["forward_batches"] = s.forward_batches;
    doc["forward_samples"] = s.forward_samples;
    doc["backward_batches"] = s.backward_batches;
    doc["selected_samples"] = s.selected_samples;
    doc["collapsed"] = s.collapsed;
    if (s.collapsed) {
        doc["collapse_step"] = s.collapse_step;
        doc["collapse_reason"] = s.collapse_reason;
    }
    nlohmann::json dom = nlohmann::json::object();
    for (const auto& [id, acc] : s.per_domain_accuracy) dom[std::to_string(id)] = acc;
    doc["per_domain_accuracy"] = dom;
    doc["total_wall_ns"] = s.total_wall_ns;
    std::ofstream os = open_out(path);
    os << doc.dump(2) << "\n";
}

void write_cells_csv(const std::string& path, const std::vector<CellRow>& rows) {
    std::ofstream os = open_out(path);
    os << "# schema: recap.cells.v1\n";
    os << "scenario,method,seed,accuracy,mean_entropy,mean_l_re,mean_probe_kl,"
          "mean_probe_kl_tail,backward_batches,selected_samples,collapsed,lambda,tau\n";
    for (const CellRow& r : rows) {
        os << r.scenario << ',' << r.method << ',' << r.seed << ',' << r.accuracy << ','
           << r.mean_entropy << ',' << r.mean_l_re << ',' << r.mean_probe_kl << ','
           << r.mean_probe_kl_tail << ',' << r.backward_batches << ',' << r.selected_samples
           << ',' << (r.collapsed ? 1 : 0) << ',' << r.lambda << ',' << r.tau << "\n";
    }
}

std::vector<CellRow> read_cells_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open cells csv (expected at " + path + ")");
    std::string line;
    std::getline(is, line);
    if (line.find("recap.cells.v1") == std::string::npos)
        throw std::runtime_error("cells csv schema mismatch in " + path);
    std::getline(is, line);
    std::vector<CellRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() < 13) throw std::runtime_error("short cells row in " + path);
        CellRow r;
        r.scenario = f[0];
        r.method = f[1];
        r.seed = std::stoull(f[2]);
        r.accuracy = std::stod(f[3]);
        r.mean_entropy = std::stod(f[4]);
        r.mean_l_re = std::stod(f[5]);
        r.mean_probe_kl = std::stod(f[6]);
        r.mean_probe_kl_tail = std::stod(f[7]);
        r.backward_batches = std::stoull(f[8]);
        r.selected_samples = std::stoull(f[9]);
        r.collapsed = f[10] == "1";
        r.lambda = std::stod(f[11]);
        r.tau = std::stod(f[12]);
        rows.push_back(r);
    }
    return rows;
}

void write_summary_table(const std::string& path, const std::vector<CellRow>& rows) {
    struct Agg {
        std::vector<double> acc, kl_tail;
        std::size_t collapsed = 0;
    };
    std::map<std::pair<std::string, std::string>, Agg> groups;
    for (const CellRow& r : rows) {
        Agg& g = groups[{r.scenario, r.method}];
        g.acc.push_back(r.accuracy);
        g.kl_tail.push_back(r.mean_probe_kl_tail);
        if (r.collapsed) ++g.collapsed;
    }
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean_of(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    std::ofstream os = open_out(path);
    os << "# schema: recap.summary_table.v1\n";
    os << "scenario,method,runs,accuracy_mean,accuracy_std,probe_kl_tail_mean,collapsed_runs\n";
    for (const auto& [key, g] : groups) {
        os << key.first << ',' << key.second << ',' << g.acc.size() << ',' << mean_of(g.acc)
           << ',' << std_of(g.acc) << ',' << mean_of(g.kl_tail) << ',' << g.collapsed << "\n";
    }
}

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series) {
    constexpr double W = 720, H = 480;
    constexpr double ML = 70, MR = 30, MT = 48, MB = 56;
    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmin > xmax) {  // no data at all
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + (std::abs(ymin) > 0 ? std::abs(ymin) * 0.1 : 1.0);
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

    std::ofstream os = open_out(path);
    os << std::setprecision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
          "font-family=\"sans-serif\">" << title << "</text>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
       << H - MB << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xmin + (xmax - xmin) * t / 4.0;
        const double fy = ymin + (ymax - ymin) * t / 4.0;
        os << "<text x=\"" << px(fx) << "\" y=\"" << H - MB + 18
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fx
           << "</text>\n";
        os << "<text x=\"" << ML - 8 << "\" y=\"" << py(fy) + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fy
           << "</text>\n";
        os << "<line x1=\"" << ML << "\" y1=\"" << py(fy) << "\" x2=\"" << W - MR << "\" y2=\""
           << py(fy) << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    os << "<text x=\"" << W / 2 << "\" y=\"" << H - 14
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"18\" y=\"" << H / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
          "transform=\"rotate(-90 18 " << H / 2 << ")\">" << y_label << "</text>\n";

    std::size_t ci = 0;
    double legend_y = MT + 4;
    for (const Series& s : series) {
        const char* color = kPalette[ci % 8];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (const auto& [x, y] : s.points) os << px(x) << ',' << py(y) << ' ';
        os << "\"/>\n";
        for (const auto& [x, y] : s.points)
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.5\" fill=\""
               << color << "\"/>\n";
        os << "<rect x=\"" << W - MR - 170 << "\" y=\"" << legend_y << "\" width=\"12\" "
           << "height=\"12\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << W - MR - 152 << "\" y=\"" << legend_y + 10
           << "\" font-size=\"12\" font-family=\"sans-serif\">" << s.name << "</text>\n";
        legend_y += 18;
        ++ci;
    }
    os << "</svg>\n";
}

}  // namespace recap
