#include "recap/region.hpp"

#include <algorithm>
#include <cmath>

namespace recap {

namespace {

void check_dims(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    if (head.A.rows != head.b.size())
        throw std::invalid_argument("AffineHead: A rows and b size differ");
    if (z.size() != head.feature_dim())
        throw std::invalid_argument("region: feature dimension mismatch with head");
    if (region.sigma_diag.size() != head.feature_dim())
        throw std::invalid_argument("region: sigma_diag dimension mismatch with head");
}

// Everything the losses and their gradients need from one evaluation.
struct Core {
    std::size_t C = 0;
    Vec u;           // logits
    double lse_u = 0.0;
    Vec p;           // softmax(u)
    Vec p_aug;       // softmax(u + shift)
    Vec log_ratio;   // per class j: lse_i(u_i + q_ij) - u_j        (>= 0)
    Vec log_overlap; // per class j: lse_i(u_i + q_ij) - lse(u)     (>= 0)
    Matrix cross;    // q_ij
    Vec lse_col;     // per class j: lse_i(u_i + q_ij)
    double l_re = 0.0;
    double l_ri = 0.0;
};

Core evaluate_core(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    check_dims(z, head, region);
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    const Vec cov = region.effective_cov();

    Core core;
    core.C = C;
    core.u.resize(C);
    for (std::size_t i = 0; i < C; ++i)
        core.u[i] = dot(head.A.row(i), z.data(), d) + head.b[i];
    core.lse_u = log_sum_exp(core.u);

    core.p.resize(C);
    for (std::size_t i = 0; i < C; ++i) core.p[i] = std::exp(core.u[i] - core.lse_u);

    Vec shifted(C);
    for (std::size_t i = 0; i < C; ++i) {
        const double* ai = head.A.row(i);
        double q = 0.0;
        for (std::size_t k = 0; k < d; ++k) q += cov[k] * ai[k] * ai[k];
        shifted[i] = core.u[i] + 0.5 * q;
    }
    const double lse_shifted = log_sum_exp(shifted);
    core.p_aug.resize(C);
    for (std::size_t i = 0; i < C; ++i) core.p_aug[i] = std::exp(shifted[i] - lse_shifted);

    core.cross = Matrix(C, C);
    for (std::size_t i = 0; i < C; ++i) {
        const double* ai = head.A.row(i);
        for (std::size_t j = i + 1; j < C; ++j) {
            const double* aj = head.A.row(j);
            double q = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = ai[k] - aj[k];
                q += cov[k] * diff * diff;
            }
            core.cross(i, j) = 0.5 * q;
            core.cross(j, i) = 0.5 * q;
        }
    }

    core.lse_col.resize(C);
    core.log_ratio.resize(C);
    core.log_overlap.resize(C);
    Vec col(C);
    for (std::size_t j = 0; j < C; ++j) {
        for (std::size_t i = 0; i < C; ++i) col[i] = core.u[i] + core.cross(i, j);
        core.lse_col[j] = log_sum_exp(col);
        // Exact values are >= 0 (the i = j summand is exp(0) = 1); clamping
        // only strips round-off so the nonnegativity invariants hold exactly.
        core.log_ratio[j] = std::max(core.lse_col[j] - core.u[j], 0.0);
        core.log_overlap[j] = std::max(core.lse_col[j] - core.lse_u, 0.0);
    }

    for (std::size_t j = 0; j < C; ++j) {
        core.l_re += core.p_aug[j] * core.log_ratio[j];
        core.l_ri += core.p[j] * core.log_overlap[j];
    }
    return core;
}

}  // namespace

void AffineHead::validate() const {
    if (A.rows != b.size())
        throw std::invalid_argument("AffineHead: A rows and b size differ");
    if (A.rows < 2 || A.cols < 1)
        throw std::invalid_argument("AffineHead: need C >= 2 classes and d >= 1 features");
    if (!all_finite(A.data) || !all_finite(b))
        throw std::invalid_argument("AffineHead: non-finite entries");
}

Vec RegionSpec::effective_cov() const {
    Vec cov(sigma_diag.size());
    for (std::size_t k = 0; k < sigma_diag.size(); ++k) cov[k] = tau * sigma_diag[k];
    return cov;
}

void RegionSpec::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("RegionSpec: tau must be > 0");
    for (double s : sigma_diag)
        if (!(s >= 0.0)) throw std::invalid_argument("RegionSpec: sigma_diag entries must be >= 0");
}

void RecapHyper::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("RecapHyper: lambda must be >= 0");
    if (!(tau_re >= 0.0)) throw std::invalid_argument("RecapHyper: tau_re must be >= 0");
    if (!(l0 > 0.0)) throw std::invalid_argument("RecapHyper: l0 must be > 0");
}

RegionSpec estimate_region(const Matrix& source_features, double tau) {
    if (source_features.rows < 2)
        throw std::invalid_argument("estimate_region: need at least 2 feature rows");
    if (!(tau > 0.0)) throw std::invalid_argument("estimate_region: tau must be > 0");
    const std::size_t n = source_features.rows;
    const std::size_t d = source_features.cols;
    RegionSpec region;
    region.tau = tau;
    region.sigma_diag.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += source_features(r, k);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double dev = source_features(r, k) - mean;
            var += dev * dev;
        }
        region.sigma_diag[k] = var / static_cast<double>(n);
    }
    return region;
}

double entropy_loss(const ProbVector& p) {
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return std::max(h, 0.0);
}

ProbVector augmented_probability(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    check_dims(z, head, region);
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    const Vec cov = region.effective_cov();
    Vec shifted(C);
    for (std::size_t i = 0; i < C; ++i) {
        const double* ai = head.A.row(i);
        double q = 0.0;
        for (std::size_t k = 0; k < d; ++k) q += cov[k] * ai[k] * ai[k];
        shifted[i] = dot(ai, z.data(), d) + head.b[i] + 0.5 * q;
    }
    return softmax(shifted);
}

double regional_entropy(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    return evaluate_core(z, head, region).l_re;
}

double regional_instability(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    return evaluate_core(z, head, region).l_ri;
}

RegionalTerms regional_terms(const Vec& z, const AffineHead& head, const RegionSpec& region) {
    const Core core = evaluate_core(z, head, region);
    return RegionalTerms{core.l_re, core.l_ri};
}

ObjectiveOutcome recap_objective(const std::vector<Vec>& zs, const AffineHead& head,
                                 const RegionSpec& region, const RecapHyper& hyper) {
    if (zs.empty()) throw std::invalid_argument("recap_objective: empty batch");
    hyper.validate();
    ObjectiveOutcome out;
    out.samples.reserve(zs.size());
    double total = 0.0;
    for (const Vec& z : zs) {
        const RegionalTerms terms = regional_terms(z, head, region);
        SampleOutcome s;
        s.l_re = terms.l_re;
        s.l_ri = terms.l_ri;
        s.selected = terms.l_re < hyper.tau_re;
        s.alpha = std::exp(hyper.l0 - terms.l_re);
        if (s.selected) {
            total += s.alpha * (s.l_re + hyper.lambda * s.l_ri);
            ++out.num_selected;
        }
        out.samples.push_back(s);
    }
    out.batch_loss = out.num_selected == 0
                         ? 0.0
                         : total / static_cast<double>(out.num_selected);
    return out;
}

Vec grad_z_objective(const Vec& z, const AffineHead& head, const RegionSpec& region,
                     double lambda) {
    const Core core = evaluate_core(z, head, region);
    const std::size_t C = core.C;
    const std::size_t d = head.feature_dim();

    // Column-stochastic responsibilities w_ij = softmax_i(u_i + q_ij).
    Matrix w(C, C);
    for (std::size_t j = 0; j < C; ++j)
        for (std::size_t i = 0; i < C; ++i)
            w(i, j) = std::exp(core.u[i] + core.cross(i, j) - core.lse_col[j]);

    // Coefficients on the head rows: grad = A^T (g_re + lambda * g_ri), from
    // differentiating the weighted log-sum forms above through softmax and lse.
    Vec g(C, 0.0);
    for (std::size_t i = 0; i < C; ++i) {
        double wp_aug = 0.0;
        double wp = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            wp_aug += w(i, j) * core.p_aug[j];
            wp += w(i, j) * core.p[j];
        }
        const double g_re =
            core.p_aug[i] * (core.log_ratio[i] - core.l_re - 1.0) + wp_aug;
        const double g_ri =
            core.p[i] * (core.log_overlap[i] - core.l_ri - 1.0) + wp;
        g[i] = g_re + lambda * g_ri;
    }

    Vec grad(d, 0.0);
    for (std::size_t i = 0; i < C; ++i) {
        const double* ai = head.A.row(i);
        for (std::size_t k = 0; k < d; ++k) grad[k] += g[i] * ai[k];
    }
    return grad;
}

}  // namespace recap
