#include "knpl/stats.hpp"

#include <cmath>
#include <cstddef>
#include <string>

#include "knpl/error.hpp"

namespace knpl::stats {

namespace {

constexpr double kBetaTol = 1e-12; // converges well past the promised 1e-9
constexpr int kMaxIter = 500;

// Continued fraction for the incomplete beta, modified Lentz scheme.
double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double dm = static_cast<double>(m);
        // even step
        double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        // odd step
        num = -(a + dm) * (a + b + dm) * x / ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kBetaTol) return h;
    }
    raise(ErrorKind::NumericDomain, "incomplete beta continued fraction did not converge");
}

} // namespace

double log_gamma(double x) {
    if (!(x > 0.0)) raise(ErrorKind::NumericDomain, "log_gamma needs a positive argument");
    // Lanczos, g = 7, n = 9
    static const double coeff[9] = {
        0.99999999999980993,  676.5203681218851,   -1259.1392167224028,
        771.32342877765313,   -176.61502916214059, 12.507343278686905,
        -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};
    if (x < 0.5) {
        // reflection keeps small arguments accurate
        const double pi = 3.14159265358979323846;
        return std::log(pi / std::sin(pi * x)) - log_gamma(1.0 - x);
    }
    const double z = x - 1.0;
    double sum = coeff[0];
    for (int i = 1; i < 9; ++i) sum += coeff[i] / (z + static_cast<double>(i));
    const double t = z + 7.5;
    return 0.5 * std::log(2.0 * 3.14159265358979323846) + (z + 0.5) * std::log(t) - t +
           std::log(sum);
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0))
        raise(ErrorKind::Config, "incomplete beta needs positive shape parameters");
    if (x < 0.0 || x > 1.0)
        raise(ErrorKind::Config, "incomplete beta argument must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;

    const double front = std::exp(log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                                  a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - std::exp(log_gamma(a + b) - log_gamma(a) - log_gamma(b) +
                          b * std::log(1.0 - x) + a * std::log(x)) *
                     beta_cf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) raise(ErrorKind::Config, "degrees of freedom must be positive");
    if (t == 0.0) return 0.5;
    const double x = dof / (dof + t * t);
    const double half_tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
    return t > 0.0 ? 1.0 - half_tail : half_tail;
}

double student_t_quantile(double p, double dof) {
    if (!(p > 0.0) || !(p < 1.0))
        raise(ErrorKind::Config, "quantile probability must lie strictly inside (0, 1)");
    if (!(dof > 0.0)) raise(ErrorKind::Config, "degrees of freedom must be positive");
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, dof) > p) lo *= 2.0;
    while (student_t_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, dof) < p)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

TTestResult paired_t_test_one_tailed(const std::vector<double>& a,
                                     const std::vector<double>& b, double alpha) {
    if (a.size() != b.size())
        raise(ErrorKind::Config, "paired samples must have equal length");
    if (a.size() < 2) raise(ErrorKind::Config, "paired test needs at least two pairs");
    if (!(alpha > 0.0) || !(alpha < 1.0))
        raise(ErrorKind::Config, "significance level must lie strictly inside (0, 1)");

    const auto n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0)
        raise(ErrorKind::DegenerateSample, "pairwise differences have zero variance");

    TTestResult out;
    out.t = mean / (sd / std::sqrt(n));
    out.p = 1.0 - student_t_cdf(out.t, n - 1.0);
    out.reject = out.p < alpha;
    return out;
}

MeanInterval mean_with_interval(const std::vector<double>& sample) {
    if (sample.size() < 2)
        raise(ErrorKind::Config, "interval needs at least two observations");
    const auto n = static_cast<double>(sample.size());
    double mean = 0.0;
    for (double v : sample) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : sample) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    const double tq = student_t_quantile(0.975, n - 1.0);
    return {mean, tq * sd / std::sqrt(n)};
}

} // namespace knpl::stats
