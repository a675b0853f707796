#include "recap/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace recap {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                known = true;
                break;
            }
        if (!known)
            throw ConfigError("unknown key '" + it.key() + "' at " + path);
    }
}

template <typename T>
void read_field(const json& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for '" + std::string(key) + "' at " + path + ": " + e.what());
    }
}

double read_rho(const json& obj, const std::string& path) {
    if (!obj.contains("rho")) return kRhoInfinity;
    const json& v = obj.at("rho");
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return kRhoInfinity;
        throw ConfigError("bad value for 'rho' at " + path + ": expected number or \"inf\"");
    }
    if (v.is_number()) return v.get<double>();
    throw ConfigError("bad value for 'rho' at " + path + ": expected number or \"inf\"");
}

}  // namespace

MethodConfig MethodSetting::resolve(std::size_t classes) const {
    const double lnC = std::log(static_cast<double>(classes));
    MethodConfig cfg;
    cfg.kind = parse_method_kind(kind);
    cfg.hyper.lambda = lambda;
    cfg.hyper.tau_re = tau_re_factor * lnC;
    cfg.hyper.l0 = l0_factor * lnC;
    cfg.lr = lr;
    cfg.momentum = momentum;
    return cfg;
}

StreamScenario ScenarioSetting::resolve(Seed seed) const {
    StreamScenario sc;
    sc.name = name;
    sc.batch_size = batch_size;
    sc.length = length;
    for (const DomainSetting& dom : domains)
        sc.domains.push_back(
            DomainSpec{parse_corruption_kind(dom.kind), dom.severity, dom.weight});
    if (label_schedule == "iid") sc.schedule = LabelSchedule::iid;
    else if (label_schedule == "imbalanced") sc.schedule = LabelSchedule::imbalanced;
    else throw ConfigError("scenario '" + name + "': unknown label_schedule " + label_schedule);
    sc.rho = rho;
    sc.seed = seed;
    return sc;
}

ModelProfile RunConfig::profile() const {
    return ModelProfile{task.input_dim, model.hidden_dim, model.feature_dim, task.classes};
}

RunConfig default_run_config() {
    RunConfig cfg;
    // Step size 1e-4 for the small-network profile: the region losses keep
    // an order-of-magnitude larger gradient scale than near-saturated
    // entropy at C = 10, and larger steps measurably erode accuracy for
    // every adaptive method on this profile.
    cfg.methods = {
        MethodSetting{"none", "", 0.0, 0.8, 0.7, 1e-4, 0.9},
        MethodSetting{"entropy", "", 0.0, 0.8, 0.7, 1e-4, 0.9},
        MethodSetting{"entropy_select", "", 0.0, 0.8, 0.7, 1e-4, 0.9},
        MethodSetting{"recap", "", 0.5, 0.8, 0.7, 1e-4, 0.9},
    };
    ScenarioSetting bs1;
    bs1.name = "bs1_single";
    bs1.batch_size = 1;
    bs1.length = 10000;
    bs1.domains = {DomainSetting{"occlude", 5, 1.0}};
    bs1.label_schedule = "iid";

    ScenarioSetting mixed;
    mixed.name = "mixed_domains";
    mixed.batch_size = 64;
    mixed.length = 10000;
    for (const char* kind : {"rotate", "add_noise", "scale", "occlude"}) {
        mixed.domains.push_back(DomainSetting{kind, 5, 0.125});
        mixed.domains.push_back(DomainSetting{kind, 4, 0.125});
    }
    mixed.label_schedule = "iid";

    ScenarioSetting shift;
    shift.name = "label_shift";
    shift.batch_size = 64;
    shift.length = 10000;
    shift.domains = {DomainSetting{"occlude", 5, 1.0}};
    shift.label_schedule = "imbalanced";
    shift.rho = kRhoInfinity;  // sorted-by-class stream

    cfg.scenarios = {bs1, mixed, shift};
    cfg.seeds = {101, 102, 103, 104, 105};
    return cfg;
}

RunConfig parse_run_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config root must be an object");
    check_keys(doc, "$",
               {"version", "task", "model", "region", "probe", "methods", "scenarios", "seeds",
                "checkpoint"});

    RunConfig cfg = default_run_config();
    read_field(doc, "$", "version", cfg.version);
    if (cfg.version != 1)
        throw ConfigError("unsupported config version " + std::to_string(cfg.version));

    if (doc.contains("task")) {
        const json& t = doc.at("task");
        check_keys(t, "$.task", {"classes", "input_dim", "noise_scale", "prototype_scale", "seed"});
        read_field(t, "$.task", "classes", cfg.task.classes);
        read_field(t, "$.task", "input_dim", cfg.task.input_dim);
        read_field(t, "$.task", "noise_scale", cfg.task.noise_scale);
        read_field(t, "$.task", "prototype_scale", cfg.task.prototype_scale);
        read_field(t, "$.task", "seed", cfg.task.seed);
    }
    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_keys(m, "$.model",
                   {"hidden_dim", "feature_dim", "pretrain_epochs", "pretrain_lr",
                    "pretrain_momentum", "pretrain_batch", "pretrain_samples",
                    "label_smoothing", "seed"});
        read_field(m, "$.model", "hidden_dim", cfg.model.hidden_dim);
        read_field(m, "$.model", "feature_dim", cfg.model.feature_dim);
        read_field(m, "$.model", "pretrain_epochs", cfg.model.pretrain_epochs);
        read_field(m, "$.model", "pretrain_lr", cfg.model.pretrain_lr);
        read_field(m, "$.model", "pretrain_momentum", cfg.model.pretrain_momentum);
        read_field(m, "$.model", "pretrain_batch", cfg.model.pretrain_batch);
        read_field(m, "$.model", "pretrain_samples", cfg.model.pretrain_samples);
        read_field(m, "$.model", "label_smoothing", cfg.model.label_smoothing);
        read_field(m, "$.model", "seed", cfg.model.seed);
    }
    if (doc.contains("region")) {
        const json& r = doc.at("region");
        check_keys(r, "$.region", {"tau", "source_samples"});
        read_field(r, "$.region", "tau", cfg.region.tau);
        read_field(r, "$.region", "source_samples", cfg.region.source_samples);
    }
    if (doc.contains("probe")) {
        const json& p = doc.at("probe");
        check_keys(p, "$.probe", {"every", "samples"});
        read_field(p, "$.probe", "every", cfg.probe.every);
        read_field(p, "$.probe", "samples", cfg.probe.samples);
    }
    if (doc.contains("methods")) {
        if (!doc.at("methods").is_array()) throw ConfigError("$.methods must be an array");
        cfg.methods.clear();
        std::size_t idx = 0;
        for (const json& m : doc.at("methods")) {
            const std::string path = "$.methods[" + std::to_string(idx++) + "]";
            check_keys(m, path,
                       {"kind", "name", "lambda", "tau_re_factor", "l0_factor", "lr", "momentum"});
            MethodSetting ms;
            read_field(m, path, "kind", ms.kind);
            read_field(m, path, "name", ms.name);
            read_field(m, path, "lambda", ms.lambda);
            read_field(m, path, "tau_re_factor", ms.tau_re_factor);
            read_field(m, path, "l0_factor", ms.l0_factor);
            read_field(m, path, "lr", ms.lr);
            read_field(m, path, "momentum", ms.momentum);
            cfg.methods.push_back(ms);
        }
    }
    if (doc.contains("scenarios")) {
        if (!doc.at("scenarios").is_array()) throw ConfigError("$.scenarios must be an array");
        cfg.scenarios.clear();
        std::size_t idx = 0;
        for (const json& s : doc.at("scenarios")) {
            const std::string path = "$.scenarios[" + std::to_string(idx++) + "]";
            check_keys(s, path,
                       {"name", "batch_size", "length", "domains", "label_schedule", "rho"});
            ScenarioSetting sc;
            read_field(s, path, "name", sc.name);
            read_field(s, path, "batch_size", sc.batch_size);
            read_field(s, path, "length", sc.length);
            read_field(s, path, "label_schedule", sc.label_schedule);
            sc.rho = read_rho(s, path);
            if (s.contains("domains")) {
                if (!s.at("domains").is_array())
                    throw ConfigError(path + ".domains must be an array");
                sc.domains.clear();
                std::size_t didx = 0;
                for (const json& dj : s.at("domains")) {
                    const std::string dpath = path + ".domains[" + std::to_string(didx++) + "]";
                    check_keys(dj, dpath, {"kind", "severity", "weight"});
                    DomainSetting dom;
                    read_field(dj, dpath, "kind", dom.kind);
                    read_field(dj, dpath, "severity", dom.severity);
                    read_field(dj, dpath, "weight", dom.weight);
                    sc.domains.push_back(dom);
                }
            }
            if (sc.name.empty())
                throw ConfigError(path + ": scenario needs a non-empty name");
            cfg.scenarios.push_back(sc);
        }
    }
    if (doc.contains("seeds")) {
        try {
            cfg.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for '$.seeds': ") + e.what());
        }
    }
    read_field(doc, "$", "checkpoint", cfg.checkpoint);
    if (cfg.seeds.empty()) throw ConfigError("$.seeds must not be empty");
    if (cfg.methods.empty()) throw ConfigError("$.methods must not be empty");
    if (cfg.scenarios.empty()) throw ConfigError("$.scenarios must not be empty");
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_run_config(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json doc;
    doc["version"] = cfg.version;
    doc["task"] = {{"classes", cfg.task.classes},
                   {"input_dim", cfg.task.input_dim},
                   {"noise_scale", cfg.task.noise_scale},
                   {"prototype_scale", cfg.task.prototype_scale},
                   {"seed", cfg.task.seed}};
    doc["model"] = {{"hidden_dim", cfg.model.hidden_dim},
                    {"feature_dim", cfg.model.feature_dim},
                    {"pretrain_epochs", cfg.model.pretrain_epochs},
                    {"pretrain_lr", cfg.model.pretrain_lr},
                    {"pretrain_momentum", cfg.model.pretrain_momentum},
                    {"pretrain_batch", cfg.model.pretrain_batch},
                    {"pretrain_samples", cfg.model.pretrain_samples},
                    {"label_smoothing", cfg.model.label_smoothing},
                    {"seed", cfg.model.seed}};
    doc["region"] = {{"tau", cfg.region.tau}, {"source_samples", cfg.region.source_samples}};
    doc["probe"] = {{"every", cfg.probe.every}, {"samples", cfg.probe.samples}};
    doc["methods"] = json::array();
    for (const MethodSetting& m : cfg.methods)
        doc["methods"].push_back({{"kind", m.kind},
                                  {"name", m.label()},
                                  {"lambda", m.lambda},
                                  {"tau_re_factor", m.tau_re_factor},
                                  {"l0_factor", m.l0_factor},
                                  {"lr", m.lr},
                                  {"momentum", m.momentum}});
    doc["scenarios"] = json::array();
    for (const ScenarioSetting& s : cfg.scenarios) {
        json sj = {{"name", s.name},
                   {"batch_size", s.batch_size},
                   {"length", s.length},
                   {"label_schedule", s.label_schedule}};
        if (std::isinf(s.rho)) sj["rho"] = "inf";
        else sj["rho"] = s.rho;
        sj["domains"] = json::array();
        for (const DomainSetting& dom : s.domains)
            sj["domains"].push_back(
                {{"kind", dom.kind}, {"severity", dom.severity}, {"weight", dom.weight}});
        doc["scenarios"].push_back(sj);
    }
    doc["seeds"] = cfg.seeds;
    if (!cfg.checkpoint.empty()) doc["checkpoint"] = cfg.checkpoint;
    return doc.dump(2) + "\n";
}

}  // namespace recap
