#pragma once

// Gaussian region modeling over classifier features and the closed-form
// region-confidence losses with their analytic z-gradients.
//
// All exponent sums are evaluated in log space. With a C x d head (A, b),
// a feature z and effective covariance S = tau * diag(sigma):
//
//   logits      u_i = a_i . z + b_i
//   augmented   v_i = u_i + 1/2 a_i S a_i^T,  p_aug = softmax(v)
//   cross term  q_ij = 1/2 (a_i - a_j) S (a_i - a_j)^T   (q_ij >= 0, q_jj = 0)
//
//   regional_entropy     = sum_j p_aug_j * [ lse_i(u_i + q_ij) - u_j ]
//   regional_instability = sum_j p_j     * [ lse_i(u_i + q_ij) - lse(u) ]
//
// Both bracketed terms are >= 0 because the i = j summand contributes
// exp(0) = 1, so each loss is nonnegative, and both collapse as expected
// when sigma = 0.

#include "recap/numerics.hpp"

namespace recap {

// Frozen affine classifier: row a_i and bias b_i score class i.
struct AffineHead {
    Matrix A;  // C x d
    Vec b;     // C

    std::size_t num_classes() const { return A.rows; }
    std::size_t feature_dim() const { return A.cols; }

    // Enforces the full type invariant (finite entries, C >= 2, d >= 1).
    // Operations below only require consistent dimensions, so degenerate
    // single-class heads remain usable in tests.
    void validate() const;
};

// Local region shape: diagonal source-feature variances plus scale tau.
// The effective covariance used everywhere is diag(tau * sigma_diag).
struct RegionSpec {
    Vec sigma_diag;  // d, entries >= 0
    double tau = 1.0;

    Vec effective_cov() const;
    void validate() const;
};

struct RecapHyper {
    double lambda = 0.5;  // instability weight, >= 0
    double tau_re = 0.0;  // selection threshold in nats, >= 0
    double l0 = 0.0;      // weighting anchor in nats, > 0

    void validate() const;
};

struct SampleOutcome {
    double l_re = 0.0;
    double l_ri = 0.0;
    bool selected = false;
    double alpha = 0.0;  // exp(l0 - l_re)
};

struct ObjectiveOutcome {
    std::vector<SampleOutcome> samples;
    double batch_loss = 0.0;  // mean over selected samples; 0 if none selected
    std::size_t num_selected = 0;
};

// Per-column population variance (divide by n) of the feature matrix.
RegionSpec estimate_region(const Matrix& source_features, double tau);

// Shannon entropy in nats with the 0 log 0 = 0 convention.
double entropy_loss(const ProbVector& p);

// softmax of the variance-augmented logits v_i above.
ProbVector augmented_probability(const Vec& z, const AffineHead& head, const RegionSpec& region);

double regional_entropy(const Vec& z, const AffineHead& head, const RegionSpec& region);
double regional_instability(const Vec& z, const AffineHead& head, const RegionSpec& region);

// Both losses from one pass (shares the O(C^2 d) cross-term work).
struct RegionalTerms {
    double l_re = 0.0;
    double l_ri = 0.0;
};
RegionalTerms regional_terms(const Vec& z, const AffineHead& head, const RegionSpec& region);

// Selection, weighting and batch reduction over a feature batch.
// selected <=> l_re < tau_re; alpha = exp(l0 - l_re) for every sample;
// batch_loss = sum over selected of alpha * (l_re + lambda * l_ri),
// divided by max(1, #selected). Callers must skip the parameter update
// when num_selected == 0.
ObjectiveOutcome recap_objective(const std::vector<Vec>& zs, const AffineHead& head,
                                 const RegionSpec& region, const RecapHyper& hyper);

// d(l_re + lambda * l_ri)/dz. Selection indicators and alpha weights are
// the caller's concern and enter only as constant scale factors.
Vec grad_z_objective(const Vec& z, const AffineHead& head, const RegionSpec& region,
                     double lambda);

}  // namespace recap
