#include "recap/stream.hpp"

#include <cmath>

namespace recap {

namespace {

// Fixed stream ids for deriving child generators from a scenario seed.
enum : std::uint64_t {
    kStreamLabels = 1,
    kStreamDomains = 2,
    kStreamInputs = 3,
    kStreamNoise = 4,
    kStreamDomainParams = 5,
};

constexpr double kDegree = 0.017453292519943295;

}  // namespace

SyntheticTask SyntheticTask::make(std::size_t classes, std::size_t input_dim, double noise_scale,
                                  double prototype_scale, Seed seed) {
    if (classes < 2 || input_dim < 2)
        throw std::invalid_argument("SyntheticTask: need >= 2 classes and input_dim >= 2");
    if (!(noise_scale >= 0.0) || !(prototype_scale > 0.0))
        throw std::invalid_argument("SyntheticTask: bad scales");
    SyntheticTask task;
    task.noise_scale = noise_scale;
    task.seed = seed;
    task.prototypes = Matrix(classes, input_dim);
    Rng rng = Rng(seed).split(0xA0);
    for (double& v : task.prototypes.data) v = prototype_scale * rng.next_gaussian();
    // Gaussian prototypes coincide with probability zero; check anyway.
    for (std::size_t a = 0; a < classes; ++a)
        for (std::size_t b = a + 1; b < classes; ++b) {
            double dist = 0.0;
            for (std::size_t k = 0; k < input_dim; ++k) {
                const double diff = task.prototypes(a, k) - task.prototypes(b, k);
                dist += diff * diff;
            }
            if (dist == 0.0) throw std::runtime_error("SyntheticTask: coincident prototypes");
        }
    return task;
}

Dataset gen_source_dataset(const SyntheticTask& task, std::size_t n) {
    if (n < task.num_classes())
        throw std::invalid_argument("gen_source_dataset: need n >= number of classes");
    const std::size_t D = task.input_dim();
    Dataset ds;
    ds.x = Matrix(n, D);
    ds.y.resize(n);
    Rng rng = Rng(task.seed).split(0xB0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % task.num_classes());
        ds.y[i] = label;
        const double* proto = task.prototypes.row(static_cast<std::size_t>(label));
        for (std::size_t k = 0; k < D; ++k)
            ds.x(i, k) = proto[k] + task.noise_scale * rng.next_gaussian();
    }
    return ds;
}

const char* to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::rotate: return "rotate";
        case CorruptionKind::add_noise: return "add_noise";
        case CorruptionKind::scale: return "scale";
        case CorruptionKind::occlude: return "occlude";
    }
    throw std::invalid_argument("unknown corruption kind");
}

CorruptionKind parse_corruption_kind(const std::string& name) {
    if (name == "rotate") return CorruptionKind::rotate;
    if (name == "add_noise") return CorruptionKind::add_noise;
    if (name == "scale") return CorruptionKind::scale;
    if (name == "occlude") return CorruptionKind::occlude;
    throw std::invalid_argument("unknown corruption kind: " + name);
}

Vec corrupt(const Vec& x, CorruptionKind kind, int severity, Seed seed) {
    if (severity < 1 || severity > 5)
        throw std::invalid_argument("corrupt: severity must be in 1..5");
    const std::size_t D = x.size();
    Rng rng(seed);
    Vec out = x;
    switch (kind) {
        case CorruptionKind::add_noise: {
            const double sigma = 0.1 * severity;
            for (std::size_t k = 0; k < D; ++k) out[k] += sigma * rng.next_gaussian();
            return out;
        }
        case CorruptionKind::rotate: {
            if (D < 2) throw std::invalid_argument("corrupt: rotate needs dimension >= 2");
            // Orthonormal basis (p, q) of a random 2-plane fixed by the seed.
            Vec p(D), q(D);
            for (double& v : p) v = rng.next_gaussian();
            for (double& v : q) v = rng.next_gaussian();
            const double pn = l2_norm(p);
            for (double& v : p) v /= pn;
            const double pq = dot(p, q);
            for (std::size_t k = 0; k < D; ++k) q[k] -= pq * p[k];
            const double qn = l2_norm(q);
            for (double& v : q) v /= qn;
            const double theta = 9.0 * severity * kDegree;
            const double xp = dot(x, p);
            const double xq = dot(x, q);
            const double c = std::cos(theta) - 1.0;
            const double s = std::sin(theta);
            for (std::size_t k = 0; k < D; ++k)
                out[k] += c * (xp * p[k] + xq * q[k]) + s * (xp * q[k] - xq * p[k]);
            return out;
        }
        case CorruptionKind::scale: {
            // Attenuation-style gain fade: coordinate gains drawn from
            // [1 - 0.18 s, 1], fixed by the seed.
            const double fade = 0.18 * severity;
            for (std::size_t k = 0; k < D; ++k)
                out[k] *= 1.0 - fade * rng.next_unit();
            return out;
        }
        case CorruptionKind::occlude: {
            const std::size_t m = static_cast<std::size_t>(
                std::ceil(0.1 * severity * static_cast<double>(D)));
            // Partial Fisher-Yates over coordinate indices.
            std::vector<std::size_t> idx(D);
            for (std::size_t k = 0; k < D; ++k) idx[k] = k;
            for (std::size_t k = 0; k < m && k < D; ++k) {
                const std::size_t j = k + static_cast<std::size_t>(rng.next_below(D - k));
                std::swap(idx[k], idx[j]);
                out[idx[k]] = 0.0;
            }
            return out;
        }
    }
    throw std::invalid_argument("corrupt: unknown kind");
}

void StreamScenario::validate(std::size_t num_classes) const {
    if (batch_size < 1) throw std::invalid_argument("scenario: batch_size must be >= 1");
    if (length < 1) throw std::invalid_argument("scenario: length must be >= 1");
    if (domains.empty()) throw std::invalid_argument("scenario: need at least one domain");
    double total = 0.0;
    for (const DomainSpec& dom : domains) {
        if (!(dom.weight >= 0.0)) throw std::invalid_argument("scenario: negative domain weight");
        if (dom.severity < 1 || dom.severity > 5)
            throw std::invalid_argument("scenario: severity must be in 1..5");
        total += dom.weight;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("scenario: domain weights must sum to 1");
    if (schedule == LabelSchedule::imbalanced && !(rho >= 1.0))
        throw std::invalid_argument("scenario: rho must be >= 1 (or infinity)");
    if (num_classes < 1) throw std::invalid_argument("scenario: task has no classes");
}

std::vector<StreamBatch> build_stream(const SyntheticTask& task, const StreamScenario& scenario) {
    const std::size_t C = task.num_classes();
    scenario.validate(C);
    const std::size_t D = task.input_dim();
    const std::size_t T = scenario.length;
    const std::size_t B = scenario.batch_size;

    Rng base(scenario.seed);
    Rng rng_label = base.split(kStreamLabels);
    Rng rng_domain = base.split(kStreamDomains);
    Rng rng_input = base.split(kStreamInputs);
    Rng rng_noise_base = base.split(kStreamNoise);

    // Fixed per-domain transform seeds; add_noise additionally gets a fresh
    // per-sample seed so its draws differ across the stream.
    std::vector<Seed> domain_seed(scenario.domains.size());
    for (std::size_t k = 0; k < scenario.domains.size(); ++k)
        domain_seed[k] = base.split(kStreamDomainParams).split(k).seed();

    std::vector<double> cum_weight(scenario.domains.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < scenario.domains.size(); ++k) {
        acc += scenario.domains[k].weight;
        cum_weight[k] = acc;
    }

    std::vector<StreamBatch> batches;
    const std::size_t num_batches = T / B;  // final partial batch dropped
    batches.reserve(num_batches);

    Vec x(D);
    std::size_t t = 0;
    for (std::size_t bi = 0; bi < num_batches; ++bi) {
        StreamBatch batch;
        batch.x = Matrix(B, D);
        batch.y.resize(B);
        batch.domain.resize(B);
        for (std::size_t s = 0; s < B; ++s, ++t) {
            // Label from the schedule Q_t.
            int label;
            if (scenario.schedule == LabelSchedule::iid) {
                label = static_cast<int>(rng_label.next_below(C));
            } else {
                const std::size_t segment =
                    std::min(t * C / T, C - 1);  // C equal segments over the stream
                if (std::isinf(scenario.rho)) {
                    label = static_cast<int>(segment);
                } else {
                    const double p_major = scenario.rho / (scenario.rho + static_cast<double>(C - 1));
                    const double roll = rng_label.next_unit();
                    if (roll < p_major) {
                        label = static_cast<int>(segment);
                    } else {
                        const double rest = (roll - p_major) / (1.0 - p_major);
                        std::size_t other = std::min(
                            static_cast<std::size_t>(rest * static_cast<double>(C - 1)), C - 2);
                        label = static_cast<int>(other >= segment ? other + 1 : other);
                    }
                }
            }

            // Domain from the mixing weights.
            const double roll = rng_domain.next_unit();
            std::size_t dom = 0;
            while (dom + 1 < cum_weight.size() && roll >= cum_weight[dom]) ++dom;

            const double* proto = task.prototypes.row(static_cast<std::size_t>(label));
            for (std::size_t k = 0; k < D; ++k)
                x[k] = proto[k] + task.noise_scale * rng_input.next_gaussian();

            const DomainSpec& spec = scenario.domains[dom];
            const Seed cseed = spec.kind == CorruptionKind::add_noise
                                   ? rng_noise_base.split(t).seed()
                                   : domain_seed[dom];
            const Vec corrupted = corrupt(x, spec.kind, spec.severity, cseed);

            for (std::size_t k = 0; k < D; ++k) batch.x(s, k) = corrupted[k];
            batch.y[s] = label;
            batch.domain[s] = static_cast<int>(dom);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace recap
