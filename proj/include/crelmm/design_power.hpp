#pragma once

#include "crelmm/errors.hpp"

namespace crelmm {

// Standard normal CDF.
double normal_cdf(double x);

// N(0,1) quantile to 1e-9 absolute accuracy: rational approximation refined
// by one Newton step on the CDF. Throws on q outside (0, 1).
double normal_quantile(double q);

// Settings for the one-sided interaction test sample-size problem: detect a
// positive interaction slope of size Delta against error SD sigma0, with the
// binary predictor Bernoulli(p) and the continuous predictor having variance
// var_X, m' column-factor levels, n observations per cell, test level alpha
// and target power.
struct DesignSpec {
  double Delta;
  double sigma0;
  double p_bernoulli;
  double var_X;
  int m_prime;
  int n;
  double alpha;
  double power_target;

  void validate() const;
};

// Smallest m with power >= power_target:
//   ceil( {Phi^-1(alpha) + Phi^-1(1 - P)}^2 /
//         ((Delta/sigma0)^2 p (1-p) var_X m' n) ).
int sample_size(const DesignSpec& spec);

// Power of the one-sided level-alpha test at row-factor count m; the exact
// inverse of the sample_size formula, monotone increasing in m.
double power_at(const DesignSpec& spec, int m);

}  // namespace crelmm
