#include "recap/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace recap {

namespace {

constexpr std::uint64_t kSplitmixGamma = 0x9E3779B97F4A7C15ULL;

// splitmix64 finalizer (Steele, Lea, Flood 2014).
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

Rng::Rng(Seed seed) : seed_(seed), state_(seed.value) {}

std::uint64_t Rng::next_u64() {
    state_ += kSplitmixGamma;
    return mix64(state_);
}

double Rng::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0, 1] so the log is finite; u2 in [0, 1).
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = kTwoPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
    return next_u64() % n;
}

Rng Rng::split(std::uint64_t stream) const {
    return Rng(Seed{mix64(seed_.value + kSplitmixGamma * (stream + 1))});
}

ProbVector ProbVector::from_probs(Vec p) {
    if (p.empty()) throw std::invalid_argument("ProbVector: empty");
    double sum = 0.0;
    for (double x : p) {
        if (!std::isfinite(x) || x < 0.0)
            throw std::invalid_argument("ProbVector: entries must be finite and >= 0");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("ProbVector: entries must sum to 1 within 1e-9");
    return ProbVector(std::move(p));
}

double log_sum_exp(const double* v, std::size_t n) {
    if (n == 0) throw std::invalid_argument("log_sum_exp: empty input");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(v[i])) throw std::invalid_argument("log_sum_exp: non-finite input");
        m = std::max(m, v[i]);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

double log_sum_exp(const Vec& v) { return log_sum_exp(v.data(), v.size()); }

ProbVector softmax(const Vec& logits) {
    const double lse = log_sum_exp(logits);
    Vec p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
    return ProbVector::unchecked(std::move(p));
}

Matrix sample_diag_gaussian(Seed seed, const Vec& mean, const Vec& diag_cov, std::size_t n) {
    if (n < 1) throw std::invalid_argument("sample_diag_gaussian: n must be >= 1");
    if (mean.size() != diag_cov.size())
        throw std::invalid_argument("sample_diag_gaussian: mean/diag_cov size mismatch");
    Vec sd(diag_cov.size());
    for (std::size_t k = 0; k < diag_cov.size(); ++k) {
        if (!(diag_cov[k] >= 0.0))
            throw std::invalid_argument("sample_diag_gaussian: negative variance");
        sd[k] = std::sqrt(diag_cov[k]);
    }
    Rng rng(seed);
    Matrix out(n, mean.size());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < mean.size(); ++k)
            out(r, k) = mean[k] + sd[k] * rng.next_gaussian();
    return out;
}

Vec central_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("central_diff_grad: h must be > 0");
    Vec g(x.size());
    Vec probe = x;
    for (std::size_t k = 0; k < x.size(); ++k) {
        probe[k] = x[k] + h;
        const double fp = f(probe);
        probe[k] = x[k] - h;
        const double fm = f(probe);
        probe[k] = x[k];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("central_diff_grad: non-finite function value");
        g[k] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double dot(const Vec& a, const Vec& b) { return dot(a.data(), b.data(), a.size()); }

double l2_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace recap
