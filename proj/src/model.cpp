#include "changediff/model.hpp"

#include <cmath>

#include "changediff/errors.hpp"
#include "changediff/rng.hpp"

namespace changediff {

namespace {
constexpr uint64_t kStreamStep = 0x74737465;   // "tste"
constexpr uint64_t kStreamNoise = 0x6e6f6973;  // "nois"
}  // namespace

SamplerMode sampler_mode_from_name(const std::string& name) {
  if (name == "deterministic") return SamplerMode::Deterministic;
  if (name == "ancestral") return SamplerMode::Ancestral;
  fail(ErrorKind::Config, "unknown sampler mode: '" + name + "'");
}

const char* sampler_mode_name(SamplerMode mode) {
  return mode == SamplerMode::Deterministic ? "deterministic" : "ancestral";
}

LdmLossResult ldm_loss_with(ad::Tape& tape, const DenoiseFn& denoise,
                            const Tensor& z0, uint64_t rng_seed,
                            const NoiseSchedule& schedule) {
  Rng step_rng(derive_seed(rng_seed, kStreamStep));
  int t = 1 + static_cast<int>(step_rng.uniform_index(
                  static_cast<uint32_t>(schedule.T)));
  Rng noise_rng(derive_seed(rng_seed, kStreamNoise));
  Tensor noise(z0.shape);
  for (auto& v : noise.data) v = noise_rng.normal();

  Tensor z_t = forward_diffuse(z0, t, noise, schedule);
  DenoiseOutput out = denoise(tape, z_t, t);
  LdmLossResult res;
  res.loss = ad::mse(tape, out.eps, tape.input(std::move(noise)));
  res.attn = std::move(out.attn);
  res.t = t;
  return res;
}

Model::Model(const DenoiserConfig& config, const NoiseSchedule& schedule,
             std::vector<std::string> class_names, uint64_t init_seed)
    : schedule_(schedule),
      tokenizer_(std::move(class_names)),
      encoder_(tokenizer_, config.text_dim, config.context_len, init_seed),
      denoiser_(config, init_seed) {}

DenoiseOutput Model::denoise(ad::Tape& tape, const Tensor& z_t, int t,
                             const TextPrompt& prompt, const ColorMap* condition) {
  ad::Var text = encoder_.encode(tape, tokenizer_, prompt);
  return denoiser_.forward(tape, z_t, t, text, condition);
}

LdmLossResult Model::ldm_loss(ad::Tape& tape, const Tensor& z0,
                              const TextPrompt& prompt, uint64_t rng_seed,
                              const ColorMap* condition) {
  return ldm_loss_with(
      tape,
      [&](ad::Tape& tp, const Tensor& z_t, int t) {
        return denoise(tp, z_t, t, prompt, condition);
      },
      z0, rng_seed, schedule_);
}

Tensor Model::unit_noise(uint64_t seed) const {
  const DenoiserConfig& cfg = denoiser_.config();
  Tensor z({cfg.latent_channels, cfg.latent_h, cfg.latent_w});
  Rng rng(seed);
  for (auto& v : z.data) v = rng.normal();
  return z;
}

Tensor Model::sample(const TextPrompt& prompt, const Tensor& initial_noise,
                     SamplerMode mode, uint64_t noise_seed,
                     const ColorMap* condition) {
  const DenoiserConfig& cfg = denoiser_.config();
  if (initial_noise.shape !=
      std::vector<int>{cfg.latent_channels, cfg.latent_h, cfg.latent_w})
    fail(ErrorKind::Shape, "initial noise " + initial_noise.shape_str() +
                               " does not match the latent geometry");
  Tensor z = initial_noise;
  for (int t = schedule_.T; t >= 1; --t) {
    ad::Tape tape(/*grad_enabled=*/false);
    DenoiseOutput out = denoise(tape, z, t, prompt, condition);
    const Tensor& eps = out.eps->value;
    double inv_sqrt_alpha = 1.0 / std::sqrt(schedule_.alpha(t));
    double eps_coef =
        schedule_.beta(t) / std::sqrt(1.0 - schedule_.alpha_bar(t));
    for (size_t i = 0; i < z.data.size(); ++i)
      z.data[i] = inv_sqrt_alpha * (z.data[i] - eps_coef * eps.data[i]);
    if (mode == SamplerMode::Ancestral && t > 1) {
      double sigma = std::sqrt(schedule_.posterior_variance(t));
      Rng rng(derive_seed(noise_seed, kStreamNoise, static_cast<uint64_t>(t)));
      for (auto& v : z.data) v += sigma * rng.normal();
    }
  }
  return z;
}

std::vector<ad::Param*> Model::params() {
  std::vector<ad::Param*> ps = encoder_.params();
  auto dn = denoiser_.params();
  ps.insert(ps.end(), dn.begin(), dn.end());
  return ps;
}

}  // namespace changediff
