#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <knpl/error.hpp>
#include <knpl/rng.hpp>
#include <knpl/stats.hpp>

#include <cmath>
#include <vector>

using namespace knpl;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::Config;
}

} // namespace

TEST_CASE("regularized incomplete beta matches closed forms") {
    // I_x(1,1) is the identity.
    for (double x : {0.0, 0.125, 0.3, 0.5, 0.77, 1.0})
        CHECK(stats::regularized_incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));

    // I_x(2,3) via the binomial tail identity: 1 - sum_{k<2} C(4,k) x^k (1-x)^(4-k).
    auto closed = [](double x) {
        double q = 1.0 - x;
        return 1.0 - (q * q * q * q + 4.0 * x * q * q * q);
    };
    CHECK(stats::regularized_incomplete_beta(2.0, 3.0, 0.25)
          == doctest::Approx(0.26171875).epsilon(1e-12));
    for (double x : {0.1, 0.33, 0.5, 0.9})
        CHECK(stats::regularized_incomplete_beta(2.0, 3.0, x)
              == doctest::Approx(closed(x)).epsilon(1e-12));

    // Endpoints are pinned exactly.
    CHECK(stats::regularized_incomplete_beta(3.5, 1.25, 0.0) == 0.0);
    CHECK(stats::regularized_incomplete_beta(3.5, 1.25, 1.0) == 1.0);
}

TEST_CASE("incomplete beta symmetry holds on random shapes") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        double a = rng.uniform(0.2, 8.0);
        double b = rng.uniform(0.2, 8.0);
        double x = rng.uniform01();
        double lhs = stats::regularized_incomplete_beta(a, b, x);
        double rhs = 1.0 - stats::regularized_incomplete_beta(b, a, 1.0 - x);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
        CHECK(lhs >= 0.0);
        CHECK(lhs <= 1.0);
    }
}

TEST_CASE("incomplete beta rejects bad arguments") {
    CHECK(kind_of([] { stats::regularized_incomplete_beta(1.0, 1.0, -0.1); }) == ErrorKind::Config);
    CHECK(kind_of([] { stats::regularized_incomplete_beta(1.0, 1.0, 1.1); }) == ErrorKind::Config);
    CHECK(kind_of([] { stats::regularized_incomplete_beta(0.0, 1.0, 0.5); }) == ErrorKind::Config);
    CHECK(kind_of([] { stats::regularized_incomplete_beta(1.0, -2.0, 0.5); }) == ErrorKind::Config);
}

TEST_CASE("student t cdf matches textbook values") {
    // One degree of freedom is the Cauchy distribution: F(t) = 1/2 + atan(t)/pi.
    CHECK(stats::student_t_cdf(1.0, 1) == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(stats::student_t_cdf(-1.0, 1) == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(stats::student_t_cdf(0.0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    // Two degrees of freedom has the closed form 1/2 + t / (2 sqrt(2 + t^2)).
    auto cdf2 = [](double t) { return 0.5 + t / (2.0 * std::sqrt(2.0 + t * t)); };
    for (double t : {-3.0, -1.0, -0.2, 0.4, 1.0, 2.5})
        CHECK(stats::student_t_cdf(t, 2) == doctest::Approx(cdf2(t)).epsilon(1e-10));
    CHECK(stats::student_t_cdf(1.0, 2) == doctest::Approx(0.78867513459481287).epsilon(1e-12));

    // Standard one-sided critical point: P(T <= 2.015048...) = 0.95 at five dof.
    CHECK(stats::student_t_cdf(2.0150483733330233, 5) == doctest::Approx(0.95).epsilon(1e-6));

    CHECK(kind_of([] { stats::student_t_cdf(0.0, 0); }) == ErrorKind::Config);
}

TEST_CASE("student t quantile inverts the cdf") {
    Rng rng(91);
    for (int trial = 0; trial < 40; ++trial) {
        int dof = 1 + static_cast<int>(rng.below(30));
        double p = rng.uniform(0.01, 0.99);
        double q = stats::student_t_quantile(p, dof);
        CHECK(stats::student_t_cdf(q, dof) == doctest::Approx(p).epsilon(1e-9));
    }
    // The 97.5% point at large dof approaches the normal 1.959964.
    CHECK(stats::student_t_quantile(0.975, 200) == doctest::Approx(1.9719).epsilon(1e-3));
    CHECK(kind_of([] { stats::student_t_quantile(0.0, 3); }) == ErrorKind::Config);
    CHECK(kind_of([] { stats::student_t_quantile(1.0, 3); }) == ErrorKind::Config);
}

TEST_CASE("paired t test matches an independent oracle") {
    // Expected t and p computed by numerical integration of the t density,
    // entirely outside this library.
    std::vector<double> a = {2.1, 1.9, 2.5, 2.3, 2.0, 2.7, 2.2, 1.8, 2.6, 2.4};
    std::vector<double> b = {1.8, 2.0, 2.1, 2.2, 1.7, 2.4, 2.3, 1.6, 2.2, 2.1};
    auto r = stats::paired_t_test_one_tailed(a, b, 0.05);
    CHECK(r.t == doctest::Approx(3.5839447811280185).epsilon(1e-6));
    CHECK(r.p == doctest::Approx(0.0029471461722498926).epsilon(1e-6));
    CHECK(r.reject);

    // Swapping the sides negates t and sends p to the other tail.
    auto flipped = stats::paired_t_test_one_tailed(b, a, 0.05);
    CHECK(flipped.t == doctest::Approx(-r.t).epsilon(1e-9));
    CHECK(flipped.p == doctest::Approx(1.0 - r.p).epsilon(1e-9));
    CHECK(!flipped.reject);
}

TEST_CASE("paired t test flags degenerate samples") {
    std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(a, a, 0.05); })
          == ErrorKind::DegenerateSample);

    // A constant shift also has zero variance in the differences.
    std::vector<double> shifted;
    for (double v : a) shifted.push_back(v + 0.5);
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(shifted, a, 0.05); })
          == ErrorKind::DegenerateSample);
}

TEST_CASE("paired t test validates its inputs") {
    std::vector<double> a = {1.0, 2.0, 3.0};
    std::vector<double> b = {1.0, 2.0};
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(a, b, 0.05); }) == ErrorKind::Config);
    std::vector<double> one = {1.0};
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(one, one, 0.05); }) == ErrorKind::Config);
    std::vector<double> c = {1.0, 2.5, 3.0};
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(a, c, 0.0); }) == ErrorKind::Config);
    CHECK(kind_of([&] { stats::paired_t_test_one_tailed(a, c, 1.0); }) == ErrorKind::Config);
}

TEST_CASE("paired t test detects a real shift in noisy data") {
    Rng rng(123);
    std::vector<double> base(30), lifted(30);
    for (int i = 0; i < 30; ++i) {
        base[i] = rng.gauss() * 0.3;
        lifted[i] = base[i] + 1.0 + rng.gauss() * 0.05;
    }
    auto r = stats::paired_t_test_one_tailed(lifted, base, 0.05);
    CHECK(r.reject);
    CHECK(r.p < 1e-6);

    // The reverse direction must not reject.
    auto rev = stats::paired_t_test_one_tailed(base, lifted, 0.05);
    CHECK(!rev.reject);
}

TEST_CASE("mean with interval covers hand-checked cases") {
    // n = 4, sd = sqrt(variance of {1,2,3,4}) = 1.29099..., t_{0.975,3} = 3.182446...
    std::vector<double> sample = {1.0, 2.0, 3.0, 4.0};
    auto mi = stats::mean_with_interval(sample);
    CHECK(mi.mean == doctest::Approx(2.5).epsilon(1e-12));
    double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0);
    double expect = stats::student_t_quantile(0.975, 3) * sd / 2.0;
    CHECK(mi.half_width == doctest::Approx(expect).epsilon(1e-9));

    // A constant sample has zero width.
    std::vector<double> flat = {5.0, 5.0, 5.0};
    auto fm = stats::mean_with_interval(flat);
    CHECK(fm.mean == 5.0);
    CHECK(fm.half_width == 0.0);

    std::vector<double> single = {1.0};
    CHECK(kind_of([&] { stats::mean_with_interval(single); }) == ErrorKind::Config);
}
