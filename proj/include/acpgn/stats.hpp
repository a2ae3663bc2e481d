#pragma once

namespace acpgn::stats {

double normal_cdf(double x);
/// Inverse of normal_cdf on (0, 1).
double normal_quantile(double p);

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
double chi2_cdf(double x, double dof);
double chi2_quantile(double p, double dof);

/// Regularized incomplete beta I_x(a, b).
double beta_cdf(double x, double a, double b);
double beta_quantile(double p, double a, double b);

}  // namespace acpgn::stats
