#pragma once

// Monte-Carlo and brute-force estimators for the inequality targets of the
// closed-form losses. Deliberately naive: plain sampling, no shared code
// paths with the closed forms they check.

#include "recap/region.hpp"

#include <utility>

namespace recap {

struct McEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;  // sample std / sqrt(n)
    std::size_t n = 0;
};

// D_KL(p || q) in nats. Requires q_i > 0 wherever p_i > 0.
double kl_divergence(const ProbVector& p, const ProbVector& q);

// Mean and stderr of the entropy of softmax(A z~ + b) over n draws
// z~ ~ N(z, tau * diag(sigma)). Target of the regional-entropy bound.
McEstimate mc_bias_term(Seed seed, const Vec& z, const AffineHead& head,
                        const RegionSpec& region, std::size_t n);

// Same sampling with integrand KL(p(z) || p(z~)). Target of the
// regional-instability bound.
McEstimate mc_variance_term(Seed seed, const Vec& z, const AffineHead& head,
                            const RegionSpec& region, std::size_t n);

// Deterministic finite-sample inequality: for rows z_1..z_N,
//   lhs = sum_i entropy(p(z_i))
//   rhs = -sum_classes mean_k p(z_k)_i * sum_j log p(z_j)_i
// and lhs <= rhs holds for every sample set.
std::pair<double, double> lemma1_sides(const Matrix& features, const AffineHead& head);

// Negative-log-likelihood bound for one class: the MC side estimates
// -E[log p(z)_i] under N(mu, tau * diag(sigma)); the closed side is
// lse_j((a_j - a_i) . mu + (b_j - b_i) + 1/2 (a_j - a_i) S (a_j - a_i)^T).
struct Lemma2Sides {
    McEstimate mc_lhs;
    double closed_rhs = 0.0;
};
Lemma2Sides lemma2_sides(Seed seed, const Vec& mu, const AffineHead& head,
                         const RegionSpec& region, std::size_t class_index, std::size_t n);

// Random instance family used by the property and verification suites:
// C ~ U{2..10}, d ~ U{2..16}, A/b/z entries ~ N(0,1), sigma ~ |N(0,1)|,
// tau drawn from {0.5, 1.2, 2.5}.
struct RandomInstance {
    AffineHead head;
    RegionSpec region;
    Vec z;
};
RandomInstance draw_random_instance(Rng& rng);

// Serialized form for replaying a failing instance.
std::string describe_instance(const RandomInstance& inst);

}  // namespace recap
