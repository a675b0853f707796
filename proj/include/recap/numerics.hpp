#pragma once

// Deterministic scalar/vector kernels and seeded sampling shared by all
// higher-level modules. Everything here is pure: same inputs, same bits.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace recap {

using Vec = std::vector<double>;

// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    Vec row_vec(std::size_t i) const {
        return Vec(row(i), row(i) + cols);
    }
};

struct Seed {
    std::uint64_t value = 0;
};

// Counter-free splittable generator built on the splitmix64 finalizer.
// Gaussians come from the Box-Muller transform with a cached second draw.
// The algorithm is fixed so that a given Seed reproduces the same stream
// bit-for-bit on any run; child streams from split() are decorrelated by
// remixing the original seed with the stream id.
class Rng {
  public:
    explicit Rng(Seed seed);

    std::uint64_t next_u64();
    // Uniform in [0, 1), 53-bit resolution.
    double next_unit();
    // Standard normal.
    double next_gaussian();
    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n);

    // Independent child stream; depends only on the original seed and the
    // stream id, not on how much the parent has already drawn.
    Rng split(std::uint64_t stream) const;

    Seed seed() const { return seed_; }

  private:
    Seed seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Probability vector over C classes: entries nonnegative, sum within 1e-9 of 1.
class ProbVector {
  public:
    // Validates the invariants; throws std::invalid_argument on violation.
    static ProbVector from_probs(Vec p);

    const Vec& probs() const { return p_; }
    double operator[](std::size_t i) const { return p_[i]; }
    std::size_t size() const { return p_.size(); }

    // For outputs that satisfy the invariants by construction (softmax).
    static ProbVector unchecked(Vec p) { return ProbVector(std::move(p)); }

  private:
    explicit ProbVector(Vec p) : p_(std::move(p)) {}
    Vec p_;
};

// log(sum_i exp(v_i)) with the max subtracted before exponentiation.
// Result always lies in [max(v), max(v) + log(n)].
double log_sum_exp(const Vec& v);
double log_sum_exp(const double* v, std::size_t n);

ProbVector softmax(const Vec& logits);

// n i.i.d. rows from a diagonal Gaussian; row r, coordinate k is drawn
// in row-major order so the stream layout is part of the contract.
Matrix sample_diag_gaussian(Seed seed, const Vec& mean, const Vec& diag_cov, std::size_t n);

// Symmetric difference quotient per coordinate, step h.
Vec central_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h);

// Small dense helpers.
double dot(const double* a, const double* b, std::size_t n);
double dot(const Vec& a, const Vec& b);
double l2_norm(const Vec& v);
bool all_finite(const Vec& v);

}  // namespace recap
