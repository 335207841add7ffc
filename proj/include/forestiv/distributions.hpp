#pragma once

namespace forestiv {

// Regularized incomplete gamma functions P(a,x) and Q(a,x) = 1 - P(a,x),
// series/continued-fraction evaluation, |err| < 1e-14.
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

// Upper tail P[X > x] for X ~ chi-square(dof).
double chi2_tail(double x, int dof);

// h such that P[X <= h] = prob, bisection to 1e-10.
double chi2_quantile(double prob, int dof);

// Regularized incomplete beta I_x(a, b).
double regularized_beta(double a, double b, double x);

// Two-sided p-value of a Student-t statistic with dof degrees of freedom.
double student_t_two_sided_p(double t, double dof);

}  // namespace forestiv
