#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracle_ref.hpp"
#include "recap/numerics.hpp"

#include <cmath>

using namespace recap;

TEST_CASE("log_sum_exp basics") {
    CHECK(log_sum_exp(Vec{0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    // Max shift keeps huge inputs finite.
    const double big = log_sum_exp(Vec{1000.0, 1000.0});
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
    // Value frozen from a 50-digit evaluation of log(e^0.3 + e^-1.2 + e^2).
    CHECK(log_sum_exp(Vec{0.3, -1.2, 2.0}) ==
          doctest::Approx(2.2016712449527905666).epsilon(1e-15));
    CHECK(static_cast<double>(oracle_ref::lse_ref({0.3, -1.2, 2.0})) ==
          doctest::Approx(2.2016712449527905666).epsilon(1e-15));
}

TEST_CASE("log_sum_exp errors and bounds") {
    CHECK_THROWS_AS(log_sum_exp(Vec{}), std::invalid_argument);
    CHECK_THROWS_AS(log_sum_exp(Vec{1.0, std::nan("")}), std::invalid_argument);
    CHECK_THROWS_AS(log_sum_exp(Vec{std::numeric_limits<double>::infinity()}),
                    std::invalid_argument);

    Rng rng(Seed{31});
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.next_below(12);
        Vec v(n);
        double mx = -1e300;
        for (double& x : v) {
            x = 50.0 * rng.next_gaussian();
            mx = std::max(mx, x);
        }
        const double lse = log_sum_exp(v);
        CHECK(lse >= mx);
        CHECK(lse <= mx + std::log(static_cast<double>(n)) + 1e-12);
    }
}

TEST_CASE("softmax uniform and frozen example") {
    const ProbVector u = softmax(Vec{0.0, 0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-15));

    // Frozen from a 50-digit evaluation of softmax([1,2,3]).
    const ProbVector p = softmax(Vec{1.0, 2.0, 3.0});
    CHECK(p[0] == doctest::Approx(0.090030573170380458).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(0.24472847105479765).epsilon(1e-14));
    CHECK(p[2] == doctest::Approx(0.66524095577482189).epsilon(1e-14));

    const auto ref = oracle_ref::softmax_ref({1.0, 2.0, 3.0});
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(p[i] == doctest::Approx(static_cast<double>(ref[i])).epsilon(1e-14));
}

TEST_CASE("softmax shift invariance over random pairs") {
    Rng rng(Seed{32});
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.next_below(9);
        Vec v(n);
        for (double& x : v) x = 3.0 * rng.next_gaussian();
        const double c = 200.0 * rng.next_unit() - 100.0;
        Vec shifted = v;
        for (double& x : shifted) x += c;
        const ProbVector a = softmax(v);
        const ProbVector b = softmax(shifted);
        double gap = 0.0;
        for (std::size_t i = 0; i < n; ++i) gap = std::max(gap, std::abs(a[i] - b[i]));
        CHECK(gap < 1e-12);
    }
}

TEST_CASE("ProbVector invariants") {
    CHECK_THROWS_AS(ProbVector::from_probs({0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(ProbVector::from_probs({-0.1, 1.1}), std::invalid_argument);
    CHECK_THROWS_AS(ProbVector::from_probs({}), std::invalid_argument);
    CHECK_NOTHROW(ProbVector::from_probs({0.25, 0.75}));
    // softmax output satisfies the invariants by construction.
    const ProbVector p = softmax(Vec{5.0, -3.0, 0.7});
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += p[i];
    CHECK(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("diag gaussian sampling: degenerate, moments, determinism") {
    const Vec mean{1.0, -2.0, 0.5};
    const Matrix constant = sample_diag_gaussian(Seed{5}, mean, Vec{0.0, 0.0, 0.0}, 7);
    for (std::size_t r = 0; r < 7; ++r)
        for (std::size_t k = 0; k < 3; ++k) CHECK(constant(r, k) == mean[k]);

    const std::size_t n = 100000;
    const Matrix draws = sample_diag_gaussian(Seed{6}, Vec{0.0, 0.0}, Vec{1.0, 1.0}, n);
    for (std::size_t k = 0; k < 2; ++k) {
        double m = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += draws(r, k);
        m /= static_cast<double>(n);
        CHECK(std::abs(m) <= 4.0 / std::sqrt(static_cast<double>(n)));
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) var += (draws(r, k) - m) * (draws(r, k) - m);
        var /= static_cast<double>(n);
        CHECK(std::abs(var - 1.0) <= 0.05);
    }

    const Matrix a = sample_diag_gaussian(Seed{7}, mean, Vec{1.0, 2.0, 3.0}, 50);
    const Matrix b = sample_diag_gaussian(Seed{7}, mean, Vec{1.0, 2.0, 3.0}, 50);
    CHECK(a.data == b.data);

    CHECK_THROWS_AS(sample_diag_gaussian(Seed{8}, mean, Vec{1.0, -0.5, 1.0}, 3),
                    std::invalid_argument);
}

TEST_CASE("rng: seed determinism and split decorrelation") {
    Rng a(Seed{123});
    Rng b(Seed{123});
    for (int t = 0; t < 10000; ++t) CHECK(a.next_u64() == b.next_u64());

    Rng parent(Seed{9});
    Rng c0 = parent.split(0);
    Rng c1 = parent.split(1);
    std::size_t equal = 0;
    for (int t = 0; t < 1000; ++t)
        if (c0.next_u64() == c1.next_u64()) ++equal;
    CHECK(equal == 0);

    // split depends on the seed, not the parent's position.
    Rng parent2(Seed{9});
    (void)parent2.next_u64();
    Rng c0_again = parent2.split(0);
    Rng c0_ref = Rng(Seed{9}).split(0);
    for (int t = 0; t < 100; ++t) CHECK(c0_again.next_u64() == c0_ref.next_u64());
}

TEST_CASE("central differences") {
    const auto quad = [](const Vec& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
    };
    const Vec g = central_diff_grad(quad, Vec{1.0, 2.0}, 1e-5);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-6));

    const auto constant = [](const Vec&) { return 3.5; };
    const Vec zero = central_diff_grad(constant, Vec{0.3, -0.7, 1.1}, 1e-5);
    for (double v : zero) CHECK(std::abs(v) <= 1e-10);

    // entropy(softmax(v)): finite differences vs the analytic logit gradient
    // -p_i (log p_i + H).
    Rng rng(Seed{33});
    Vec v(6);
    for (double& x : v) x = rng.next_gaussian();
    const auto ent = [](const Vec& logits) {
        const ProbVector p = softmax(logits);
        double h = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i)
            if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
        return h;
    };
    const Vec fd = central_diff_grad(ent, v, 1e-5);
    const ProbVector p = softmax(v);
    double h = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) h -= p[i] * std::log(p[i]);
    double norm = 0.0, worst = 0.0;
    Vec analytic(6);
    for (std::size_t i = 0; i < 6; ++i) analytic[i] = -p[i] * (std::log(p[i]) + h);
    for (double x : analytic) norm += x * x;
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(analytic[i] - fd[i]));
    CHECK(worst / (norm + 1e-8) <= 1e-5);

    CHECK_THROWS_AS(central_diff_grad(quad, Vec{1.0}, 0.0), std::invalid_argument);
    const auto bad = [](const Vec&) { return std::nan(""); };
    CHECK_THROWS_AS(central_diff_grad(bad, Vec{1.0}, 1e-5), std::runtime_error);
}
