#pragma once

#include <vector>

namespace knpl::stats {

// Lanczos approximation, accurate to ~1e-13 for positive arguments.
double log_gamma(double x);

// Regularized incomplete beta I_x(a, b), series plus continued fraction,
// converged to 1e-9 or better.
double regularized_incomplete_beta(double a, double b, double x);

// CDF of Student's t with dof degrees of freedom.
double student_t_cdf(double t, double dof);

// Upper quantile by bisection on the CDF: returns t with CDF(t) = p.
double student_t_quantile(double p, double dof);

struct TTestResult {
    double t = 0.0;
    double p = 0.0; // one-tailed, H1: mean(a - b) > 0
    bool reject = false;
};

// Paired one-tailed t-test on the differences a - b. Zero-variance
// differences are a degenerate sample, not a result.
TTestResult paired_t_test_one_tailed(const std::vector<double>& a,
                                     const std::vector<double>& b, double alpha);

// Mean with a symmetric two-sided 95% t-interval half-width; n must be >= 2.
struct MeanInterval {
    double mean = 0.0;
    double half_width = 0.0;
};

MeanInterval mean_with_interval(const std::vector<double>& sample);

} // namespace knpl::stats
