#pragma once

#include <vector>

#include "changediff/tensor.hpp"

namespace changediff {

// Linear beta schedule with cached derived quantities. alpha_bar(0) = 1 by
// convention; alpha_bar(t) is the cumulative product after t steps.
struct NoiseSchedule {
  int T = 0;
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> betas;       // size T, index t-1
  std::vector<double> alphas;      // 1 - beta
  std::vector<double> alpha_bars;  // size T+1, alpha_bars[0] = 1

  double beta(int t) const { return betas.at(t - 1); }
  double alpha(int t) const { return alphas.at(t - 1); }
  double alpha_bar(int t) const { return alpha_bars.at(t); }
  // Posterior variance of the reverse step at t.
  double posterior_variance(int t) const {
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * noise
Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& noise,
                       const NoiseSchedule& schedule);

}  // namespace changediff
