#include "recap/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace recap {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ns(Clock::time_point t0) {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
}

// d(entropy)/d(logits) for p = softmax(logits): -p_i (log p_i + H).
Vec entropy_logit_grad(const ProbVector& p) {
    const double h = entropy_loss(p);
    Vec g(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double logp = p[i] > 0.0 ? std::log(p[i]) : 0.0;
        g[i] = -p[i] * (logp + h);
    }
    return g;
}

Vec head_transpose_apply(const AffineHead& head, const Vec& dlogits) {
    Vec dz(head.feature_dim(), 0.0);
    for (std::size_t i = 0; i < head.num_classes(); ++i) {
        const double* ai = head.A.row(i);
        for (std::size_t k = 0; k < head.feature_dim(); ++k) dz[k] += dlogits[i] * ai[k];
    }
    return dz;
}

double param_norm(const Vec& v) { return l2_norm(v); }

std::uint64_t median_of(std::vector<std::uint64_t> xs) {
    std::sort(xs.begin(), xs.end());
    return xs[xs.size() / 2];
}

}  // namespace

const char* to_string(MethodKind kind) {
    switch (kind) {
        case MethodKind::none: return "none";
        case MethodKind::entropy: return "entropy";
        case MethodKind::entropy_select: return "entropy_select";
        case MethodKind::recap: return "recap";
    }
    throw std::invalid_argument("unknown method kind");
}

MethodKind parse_method_kind(const std::string& name) {
    if (name == "none") return MethodKind::none;
    if (name == "entropy") return MethodKind::entropy;
    if (name == "entropy_select") return MethodKind::entropy_select;
    if (name == "recap") return MethodKind::recap;
    throw std::invalid_argument("unknown method kind: " + name);
}

MetricsLog run_stream(TinyBackbone& model, const AffineHead& head,
                      const std::vector<StreamBatch>& stream, const MethodConfig& method,
                      const RegionSpec& region, const ProbeConfig& probe) {
    const std::size_t d = model.feature_dim();
    AdaptState opt = AdaptState::make(d, method.lr, method.momentum);

    MetricsLog log;
    RunSummary& sum = log.summary;
    const auto run_start = Clock::now();

    std::size_t correct = 0;
    std::map<int, std::size_t> domain_correct;
    double entropy_sum = 0.0, l_re_sum = 0.0;
    double probe_kl_sum = 0.0, probe_inc_sum = 0.0;
    std::size_t probed = 0;
    std::size_t global_step = 0;

    for (std::size_t bi = 0; bi < stream.size(); ++bi) {
        const StreamBatch& batch = stream[bi];
        const std::size_t B = batch.y.size();
        const auto batch_start = Clock::now();

        // One model forward per batch.
        std::vector<ForwardResult> fwd;
        fwd.reserve(B);
        for (std::size_t s = 0; s < B; ++s)
            fwd.push_back(forward(batch.x.row_vec(s), model, head));
        sum.forward_batches += 1;
        sum.forward_samples += B;

        std::vector<Vec> zs(B);
        for (std::size_t s = 0; s < B; ++s) zs[s] = fwd[s].z;

        // Per-sample loss gradients w.r.t. z. The label-free path: methods
        // see only features and their own confidence statistics. Regional
        // terms are logged for every method; only recap trains on them.
        std::vector<double> l_re(B, 0.0), l_ri(B, 0.0);
        std::vector<Vec> dz(B);
        std::vector<bool> selected(B, false);
        std::vector<double> alpha(B, 0.0);
        double batch_loss = 0.0;
        std::size_t nsel = 0;

        if (method.kind != MethodKind::recap) {
            for (std::size_t s = 0; s < B; ++s) {
                const RegionalTerms terms = regional_terms(zs[s], head, region);
                l_re[s] = terms.l_re;
                l_ri[s] = terms.l_ri;
            }
        }

        switch (method.kind) {
            case MethodKind::none:
                break;
            case MethodKind::entropy: {
                nsel = B;
                const double w = 1.0 / static_cast<double>(B);
                for (std::size_t s = 0; s < B; ++s) {
                    selected[s] = true;
                    alpha[s] = 1.0;
                    batch_loss += w * entropy_loss(fwd[s].p);
                    Vec dlogits = entropy_logit_grad(fwd[s].p);
                    for (double& g : dlogits) g *= w;
                    dz[s] = head_transpose_apply(head, dlogits);
                }
                break;
            }
            case MethodKind::entropy_select: {
                std::vector<double> ent(B);
                for (std::size_t s = 0; s < B; ++s) {
                    ent[s] = entropy_loss(fwd[s].p);
                    selected[s] = ent[s] < method.hyper.tau_re;
                    alpha[s] = std::exp(method.hyper.l0 - ent[s]);
                    if (selected[s]) ++nsel;
                }
                if (nsel > 0) {
                    const double inv_n = 1.0 / static_cast<double>(nsel);
                    for (std::size_t s = 0; s < B; ++s) {
                        if (!selected[s]) continue;
                        batch_loss += inv_n * alpha[s] * ent[s];
                        Vec dlogits = entropy_logit_grad(fwd[s].p);
                        for (double& g : dlogits) g *= inv_n * alpha[s];
                        dz[s] = head_transpose_apply(head, dlogits);
                    }
                }
                break;
            }
            case MethodKind::recap: {
                ObjectiveOutcome out = recap_objective(zs, head, region, method.hyper);
                nsel = out.num_selected;
                batch_loss = out.batch_loss;
                const double inv_n = nsel > 0 ? 1.0 / static_cast<double>(nsel) : 0.0;
                for (std::size_t s = 0; s < B; ++s) {
                    l_re[s] = out.samples[s].l_re;
                    l_ri[s] = out.samples[s].l_ri;
                    selected[s] = out.samples[s].selected;
                    alpha[s] = out.samples[s].alpha;
                    if (!selected[s]) continue;
                    dz[s] = grad_z_objective(zs[s], head, region, method.hyper.lambda);
                    for (double& g : dz[s]) g *= inv_n * alpha[s];
                }
                break;
            }
        }

        // Metrics rows, recorded before the update on this batch. The batch
        // wall time is back-filled once the update has been applied.
        const std::size_t first_row = log.steps.size();
        for (std::size_t s = 0; s < B; ++s, ++global_step) {
            StepRecord rec;
            rec.step = global_step;
            rec.batch = bi;
            rec.domain = batch.domain[s];
            rec.true_class = batch.y[s];
            rec.pred_class = argmax_class(fwd[s].logits);
            rec.entropy = entropy_loss(fwd[s].p);
            rec.l_re = l_re[s];
            rec.l_ri = l_ri[s];
            rec.selected = selected[s];
            rec.alpha = alpha[s];
            rec.batch_loss = batch_loss;
            if (probe.every > 0 && global_step % probe.every == 0) {
                const ProbeResult pr = consistency_probe(head, fwd[s].z, region, probe.samples,
                                                         Rng(probe.seed).split(global_step).seed());
                rec.probe_inconsistent = pr.inconsistent_fraction;
                rec.probe_kl = pr.mean_kl;
                probe_kl_sum += pr.mean_kl;
                probe_inc_sum += pr.inconsistent_fraction;
                ++probed;
            }
            if (rec.pred_class == rec.true_class) {
                ++correct;
                ++domain_correct[rec.domain];
            }
            sum.per_domain_count[rec.domain] += 1;
            entropy_sum += rec.entropy;
            l_re_sum += rec.l_re;
            log.steps.push_back(rec);
        }
        sum.selected_samples += nsel;

        // Divergence guard: a non-finite loss is a collapse, not an exception.
        if (!std::isfinite(batch_loss)) {
            sum.collapsed = true;
            sum.collapse_step = global_step;
            sum.collapse_reason = "non-finite loss (|gamma|=" +
                                  std::to_string(param_norm(model.gamma)) +
                                  ", |beta|=" + std::to_string(param_norm(model.beta)) + ")";
            break;
        }

        if (method.kind != MethodKind::none && nsel > 0) {
            Vec grad_gamma(d, 0.0), grad_beta(d, 0.0);
            for (std::size_t s = 0; s < B; ++s) {
                if (!selected[s]) continue;
                const NormAffineGrad g = backward_norm_affine(fwd[s], dz[s]);
                for (std::size_t k = 0; k < d; ++k) {
                    grad_gamma[k] += g.gamma[k];
                    grad_beta[k] += g.beta[k];
                }
            }
            sgd_step(model.gamma, grad_gamma, opt.v_gamma, opt.lr, opt.momentum);
            sgd_step(model.beta, grad_beta, opt.v_beta, opt.lr, opt.momentum);
            sum.backward_batches += 1;
        }

        const double gn = param_norm(model.gamma);
        const double bn = param_norm(model.beta);
        if (gn > 1e6 || bn > 1e6 || !std::isfinite(gn) || !std::isfinite(bn)) {
            sum.collapsed = true;
            sum.collapse_step = global_step;
            sum.collapse_reason = "parameter norm exceeded 1e6 (|gamma|=" + std::to_string(gn) +
                                  ", |beta|=" + std::to_string(bn) + ")";
        }

        const std::uint64_t batch_ns = elapsed_ns(batch_start);
        for (std::size_t r = first_row; r < log.steps.size(); ++r)
            log.steps[r].batch_wall_ns = batch_ns;
        sum.batches += 1;
        if (sum.collapsed) break;
    }

    sum.samples = log.steps.size();
    if (sum.samples > 0) {
        sum.online_accuracy = static_cast<double>(correct) / static_cast<double>(sum.samples);
        sum.mean_entropy = entropy_sum / static_cast<double>(sum.samples);
        sum.mean_l_re = l_re_sum / static_cast<double>(sum.samples);
    }
    for (const auto& [dom, count] : sum.per_domain_count)
        sum.per_domain_accuracy[dom] =
            static_cast<double>(domain_correct[dom]) / static_cast<double>(count);
    if (probed > 0) {
        sum.mean_probe_kl = probe_kl_sum / static_cast<double>(probed);
        sum.mean_probe_inconsistent = probe_inc_sum / static_cast<double>(probed);
    }
    // Tail mean over the final window of probed steps.
    double tail_sum = 0.0;
    std::size_t tail_n = 0;
    const std::size_t tail_start =
        log.steps.size() > sum.tail_window ? log.steps.size() - sum.tail_window : 0;
    for (std::size_t r = tail_start; r < log.steps.size(); ++r) {
        if (log.steps[r].probe_kl >= 0.0) {
            tail_sum += log.steps[r].probe_kl;
            ++tail_n;
        }
    }
    if (tail_n > 0) sum.mean_probe_kl_tail = tail_sum / static_cast<double>(tail_n);
    sum.total_wall_ns = elapsed_ns(run_start);
    return log;
}

ProbeResult consistency_probe(const AffineHead& head, const Vec& z, const RegionSpec& region,
                              std::size_t n, Seed seed) {
    if (n < 1) throw std::invalid_argument("consistency_probe: need n >= 1");
    const std::size_t C = head.num_classes();
    const std::size_t d = head.feature_dim();
    if (z.size() != d || region.sigma_diag.size() != d)
        throw std::invalid_argument("consistency_probe: dimension mismatch");

    const Vec cov = region.effective_cov();
    Vec sd(d);
    for (std::size_t k = 0; k < d; ++k) sd[k] = std::sqrt(cov[k]);

    Vec u0(C);
    for (std::size_t i = 0; i < C; ++i) u0[i] = dot(head.A.row(i), z.data(), d) + head.b[i];
    const double lse0 = log_sum_exp(u0);
    const int pred0 = argmax_class(u0);
    Vec logp0(C), p0(C);
    for (std::size_t i = 0; i < C; ++i) {
        logp0[i] = u0[i] - lse0;
        p0[i] = std::exp(logp0[i]);
    }

    Rng rng(seed);
    Vec draw(d), u(C);
    std::size_t inconsistent = 0;
    double kl_sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < d; ++k) draw[k] = z[k] + sd[k] * rng.next_gaussian();
        for (std::size_t i = 0; i < C; ++i)
            u[i] = dot(head.A.row(i), draw.data(), d) + head.b[i];
        if (argmax_class(u) != pred0) ++inconsistent;
        const double lse = log_sum_exp(u);
        for (std::size_t i = 0; i < C; ++i) kl_sum += p0[i] * (logp0[i] - (u[i] - lse));
    }
    return ProbeResult{static_cast<double>(inconsistent) / static_cast<double>(n),
                       kl_sum / static_cast<double>(n)};
}

BenchReport bench_proxy_vs_mc(const AffineHead& head, const RegionSpec& region,
                              const Matrix& features, std::size_t n_mc, std::size_t repeats) {
    if (repeats < 10) throw std::invalid_argument("bench_proxy_vs_mc: need repeats >= 10");
    if (features.rows < 1) throw std::invalid_argument("bench_proxy_vs_mc: empty feature batch");
    const std::size_t B = features.rows;
    const std::size_t d = features.cols;

    BenchReport report;
    report.batch_size = B;
    report.mc_samples = n_mc;
    report.repeats = repeats;

    volatile double sink = 0.0;
    std::vector<std::uint64_t> closed_times, mc_times;
    closed_times.reserve(repeats);
    mc_times.reserve(repeats);

    for (std::size_t rep = 0; rep < repeats; ++rep) {
        const auto t0 = Clock::now();
        double acc = 0.0;
        for (std::size_t s = 0; s < B; ++s) {
            const RegionalTerms terms = regional_terms(features.row_vec(s), head, region);
            acc += terms.l_re + terms.l_ri;
        }
        sink = sink + acc;
        closed_times.push_back(elapsed_ns(t0));
    }

    // The MC alternative gets its best case: one sampling pass per feature
    // serves both the entropy mean and the KL mean.
    const std::size_t C = head.num_classes();
    const Vec cov = region.effective_cov();
    Vec sd(d);
    for (std::size_t k = 0; k < d; ++k) sd[k] = std::sqrt(cov[k]);
    for (std::size_t rep = 0; rep < repeats; ++rep) {
        Rng rng(Seed{0xBE5C + rep});
        const auto t0 = Clock::now();
        double acc = 0.0;
        Vec z(d), draw(d), u(C), logp0(C), p0(C);
        for (std::size_t s = 0; s < B; ++s) {
            z = features.row_vec(s);
            for (std::size_t i = 0; i < C; ++i)
                u[i] = dot(head.A.row(i), z.data(), d) + head.b[i];
            const double lse0 = log_sum_exp(u);
            for (std::size_t i = 0; i < C; ++i) {
                logp0[i] = u[i] - lse0;
                p0[i] = std::exp(logp0[i]);
            }
            double ent_sum = 0.0, kl_sum = 0.0;
            for (std::size_t r = 0; r < n_mc; ++r) {
                for (std::size_t k = 0; k < d; ++k) draw[k] = z[k] + sd[k] * rng.next_gaussian();
                for (std::size_t i = 0; i < C; ++i)
                    u[i] = dot(head.A.row(i), draw.data(), d) + head.b[i];
                const double lse = log_sum_exp(u);
                for (std::size_t i = 0; i < C; ++i) {
                    const double logp = u[i] - lse;
                    ent_sum -= std::exp(logp) * logp;
                    kl_sum += p0[i] * (logp0[i] - logp);
                }
            }
            acc += ent_sum / static_cast<double>(n_mc) + kl_sum / static_cast<double>(n_mc);
        }
        sink = sink + acc;
        mc_times.push_back(elapsed_ns(t0));
    }
    (void)sink;

    report.closed_form_ns = median_of(closed_times);
    report.mc_ns = median_of(mc_times);
    report.speedup = report.closed_form_ns > 0
                         ? static_cast<double>(report.mc_ns) /
                               static_cast<double>(report.closed_form_ns)
                         : 0.0;
    return report;
}

}  // namespace recap
