#include "changediff/schedule.hpp"

#include <cmath>

#include "changediff/errors.hpp"

namespace changediff {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) fail(ErrorKind::Config, "schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    fail(ErrorKind::Config, "schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T + 1);
  s.alpha_bars[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    double frac = (T == 1) ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[t - 1] = beta;
    s.alphas[t - 1] = 1.0 - beta;
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - beta);
  }
  return s;
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& noise,
                       const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    fail(ErrorKind::Config, "diffusion step " + std::to_string(t) + " outside 1.." +
                                std::to_string(schedule.T));
  if (!z0.same_shape(noise))
    fail(ErrorKind::Shape, "forward_diffuse: z0 " + z0.shape_str() + " vs noise " +
                               noise.shape_str());
  double ab = schedule.alpha_bar(t);
  double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(z0.shape);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = a * z0.data[i] + b * noise.data[i];
  return out;
}

}  // namespace changediff
