#include "recap/oracle.hpp"

#include <cmath>
#include <sstream>

namespace recap {

namespace {

// Streaming mean/variance (Welford). Exact for constant inputs: once the
// mean equals the sample, the update terms are identically zero.
struct Accumulator {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }

    McEstimate estimate() const {
        McEstimate e;
        e.n = n;
        e.mean = mean;
        const double var = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
        e.stderr_ = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
        return e;
    }
};

void logits_at(const AffineHead& head, const double* z, Vec& out) {
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    out.resize(C);
    for (std::size_t i = 0; i < C; ++i)
        out[i] = dot(head.A.row(i), z, d) + head.b[i];
}

double entropy_from_logits(const Vec& u) {
    const double lse = log_sum_exp(u);
    double h = 0.0;
    for (double ui : u) {
        const double logp = ui - lse;
        h -= std::exp(logp) * logp;
    }
    return h;
}

void check_mc_args(const Vec& z, const AffineHead& head, const RegionSpec& region,
                   std::size_t n) {
    if (n < 2) throw std::invalid_argument("mc estimate: need n >= 2");
    if (z.size() != head.feature_dim() || region.sigma_diag.size() != head.feature_dim())
        throw std::invalid_argument("mc estimate: dimension mismatch");
}

}  // namespace

double kl_divergence(const ProbVector& p, const ProbVector& q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] <= 0.0)
            throw std::invalid_argument("kl_divergence: q has zero mass where p > 0");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

McEstimate mc_bias_term(Seed seed, const Vec& z, const AffineHead& head,
                        const RegionSpec& region, std::size_t n) {
    check_mc_args(z, head, region, n);
    const std::size_t d = head.feature_dim();
    const Vec cov = region.effective_cov();
    Vec sd(d);
    for (std::size_t k = 0; k < d; ++k) sd[k] = std::sqrt(cov[k]);

    Rng rng(seed);
    Vec draw(d), u;
    Accumulator acc;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < d; ++k) draw[k] = z[k] + sd[k] * rng.next_gaussian();
        logits_at(head, draw.data(), u);
        acc.add(entropy_from_logits(u));
    }
    return acc.estimate();
}

McEstimate mc_variance_term(Seed seed, const Vec& z, const AffineHead& head,
                            const RegionSpec& region, std::size_t n) {
    check_mc_args(z, head, region, n);
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    const Vec cov = region.effective_cov();
    Vec sd(d);
    for (std::size_t k = 0; k < d; ++k) sd[k] = std::sqrt(cov[k]);

    // Center prediction in log space; KL stays finite even when the sampled
    // probabilities would underflow.
    Vec u0;
    logits_at(head, z.data(), u0);
    const double lse0 = log_sum_exp(u0);
    Vec logp0(C), p0(C);
    for (std::size_t i = 0; i < C; ++i) {
        logp0[i] = u0[i] - lse0;
        p0[i] = std::exp(logp0[i]);
    }

    Rng rng(seed);
    Vec draw(d), u;
    Accumulator acc;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < d; ++k) draw[k] = z[k] + sd[k] * rng.next_gaussian();
        logits_at(head, draw.data(), u);
        const double lse = log_sum_exp(u);
        double kl = 0.0;
        for (std::size_t i = 0; i < C; ++i) kl += p0[i] * (logp0[i] - (u[i] - lse));
        acc.add(kl);
    }
    return acc.estimate();
}

std::pair<double, double> lemma1_sides(const Matrix& features, const AffineHead& head) {
    if (features.rows < 1) throw std::invalid_argument("lemma1_sides: need N >= 1");
    if (features.cols != head.feature_dim())
        throw std::invalid_argument("lemma1_sides: dimension mismatch");
    const std::size_t N = features.rows;
    const std::size_t C = head.num_classes();

    Matrix logp(N, C);
    Vec u;
    for (std::size_t r = 0; r < N; ++r) {
        logits_at(head, features.row(r), u);
        const double lse = log_sum_exp(u);
        for (std::size_t i = 0; i < C; ++i) logp(r, i) = u[i] - lse;
    }

    double lhs = 0.0;
    for (std::size_t r = 0; r < N; ++r)
        for (std::size_t i = 0; i < C; ++i) lhs -= std::exp(logp(r, i)) * logp(r, i);

    double rhs = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
        double mean_p = 0.0;
        double sum_logp = 0.0;
        for (std::size_t r = 0; r < N; ++r) {
            mean_p += std::exp(logp(r, i));
            sum_logp += logp(r, i);
        }
        mean_p /= static_cast<double>(N);
        rhs -= mean_p * sum_logp;
    }
    return {lhs, rhs};
}

Lemma2Sides lemma2_sides(Seed seed, const Vec& mu, const AffineHead& head,
                         const RegionSpec& region, std::size_t class_index, std::size_t n) {
    check_mc_args(mu, head, region, n);
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    if (class_index >= C) throw std::invalid_argument("lemma2_sides: class index out of range");
    const Vec cov = region.effective_cov();
    Vec sd(d);
    for (std::size_t k = 0; k < d; ++k) sd[k] = std::sqrt(cov[k]);

    Rng rng(seed);
    Vec draw(d), u;
    Accumulator acc;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < d; ++k) draw[k] = mu[k] + sd[k] * rng.next_gaussian();
        logits_at(head, draw.data(), u);
        acc.add(log_sum_exp(u) - u[class_index]);
    }

    const double* ai = head.A.row(class_index);
    Vec u0;
    logits_at(head, mu.data(), u0);
    Vec arg(C);
    for (std::size_t j = 0; j < C; ++j) {
        const double* aj = head.A.row(j);
        double q = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = aj[k] - ai[k];
            q += cov[k] * diff * diff;
        }
        arg[j] = (u0[j] - u0[class_index]) + 0.5 * q;
    }

    Lemma2Sides out;
    out.mc_lhs = acc.estimate();
    out.closed_rhs = log_sum_exp(arg);
    return out;
}

RandomInstance draw_random_instance(Rng& rng) {
    const std::size_t C = 2 + static_cast<std::size_t>(rng.next_below(9));
    const std::size_t d = 2 + static_cast<std::size_t>(rng.next_below(15));
    RandomInstance inst;
    inst.head.A = Matrix(C, d);
    for (double& x : inst.head.A.data) x = rng.next_gaussian();
    inst.head.b.resize(C);
    for (double& x : inst.head.b) x = rng.next_gaussian();
    inst.z.resize(d);
    for (double& x : inst.z) x = rng.next_gaussian();
    inst.region.sigma_diag.resize(d);
    for (double& x : inst.region.sigma_diag) x = std::abs(rng.next_gaussian());
    static constexpr double kTaus[3] = {0.5, 1.2, 2.5};
    inst.region.tau = kTaus[rng.next_below(3)];
    return inst;
}

std::string describe_instance(const RandomInstance& inst) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"C\":" << inst.head.num_classes() << ",\"d\":" << inst.head.feature_dim()
       << ",\"tau\":" << inst.region.tau << ",\"A\":[";
    for (std::size_t i = 0; i < inst.head.A.data.size(); ++i)
        os << (i ? "," : "") << inst.head.A.data[i];
    os << "],\"b\":[";
    for (std::size_t i = 0; i < inst.head.b.size(); ++i)
        os << (i ? "," : "") << inst.head.b[i];
    os << "],\"z\":[";
    for (std::size_t i = 0; i < inst.z.size(); ++i) os << (i ? "," : "") << inst.z[i];
    os << "],\"sigma\":[";
    for (std::size_t i = 0; i < inst.region.sigma_diag.size(); ++i)
        os << (i ? "," : "") << inst.region.sigma_diag[i];
    os << "]}";
    return os.str();
}

}  // namespace recap
