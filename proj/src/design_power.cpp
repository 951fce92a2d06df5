#include "crelmm/design_power.hpp"

#include <cmath>
#include <string>

namespace crelmm {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Acklam's rational approximation, |rel err| < 1.2e-9 before refinement.
double quantile_approx(double q) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (q < p_low) {
    const double r = std::sqrt(-2.0 * std::log(q));
    return (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r +
            c[5]) /
           ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  }
  if (q > 1.0 - p_low) {
    const double r = std::sqrt(-2.0 * std::log(1.0 - q));
    return -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r +
             c[5]) /
           ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0);
  }
  const double r = q - 0.5;
  const double t = r * r;
  return (((((a[0] * t + a[1]) * t + a[2]) * t + a[3]) * t + a[4]) * t +
          a[5]) *
         r /
         (((((b[0] * t + b[1]) * t + b[2]) * t + b[3]) * t + b[4]) * t + 1.0);
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

}  // namespace

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw Error("normal_quantile: q must lie strictly in (0, 1), got " +
                std::to_string(q));
  }
  double x = quantile_approx(q);
  x -= (normal_cdf(x) - q) / normal_pdf(x);  // one Newton refinement
  return x;
}

void DesignSpec::validate() const {
  if (!(Delta > 0.0)) throw Error("DesignSpec: Delta must be > 0");
  if (!(sigma0 > 0.0)) throw Error("DesignSpec: sigma0 must be > 0");
  if (!(p_bernoulli > 0.0 && p_bernoulli < 1.0)) {
    throw Error("DesignSpec: p must lie in (0, 1)");
  }
  if (!(var_X > 0.0)) throw Error("DesignSpec: var_X must be > 0");
  if (m_prime < 1 || n < 1) throw Error("DesignSpec: m' and n must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error("DesignSpec: alpha must lie in (0, 1)");
  }
  if (!(power_target > 0.0 && power_target < 1.0)) {
    throw Error("DesignSpec: power target must lie in (0, 1)");
  }
}

namespace {

// (Delta/sigma0)^2 p(1-p) var_X m' n, the per-m information of the
// interaction channel.
double per_m_denominator(const DesignSpec& s) {
  const double ratio = s.Delta / s.sigma0;
  return ratio * ratio * s.p_bernoulli * (1.0 - s.p_bernoulli) * s.var_X *
         s.m_prime * s.n;
}

}  // namespace

int sample_size(const DesignSpec& spec) {
  spec.validate();
  const double numer =
      std::pow(normal_quantile(spec.alpha) +
                   normal_quantile(1.0 - spec.power_target),
               2);
  // 1e-9 slack keeps the ceiling exact when the ratio lands on an integer
  // up to floating-point noise (matches the quantile accuracy target)
  return static_cast<int>(std::ceil(numer / per_m_denominator(spec) - 1e-9));
}

double power_at(const DesignSpec& spec, int m) {
  spec.validate();
  if (m < 1) throw Error("power_at: m must be >= 1");
  const double root = std::sqrt(m * per_m_denominator(spec));
  return normal_cdf(root - normal_quantile(1.0 - spec.alpha));
}

}  // namespace crelmm
