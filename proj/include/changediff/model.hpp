#pragma once

#include <string>
#include <vector>

#include "changediff/denoiser.hpp"
#include "changediff/schedule.hpp"
#include "changediff/text_encoder.hpp"

namespace changediff {

enum class SamplerMode { Deterministic, Ancestral };

SamplerMode sampler_mode_from_name(const std::string& name);
const char* sampler_mode_name(SamplerMode mode);

struct LdmLossResult {
  ad::Var loss = nullptr;  // scalar
  AttentionStack attn;
  int t = 0;
};

// Denoiser hook used by ldm_loss_with; the production path binds the model's
// denoiser, tests may rig an oracle.
using DenoiseFn =
    std::function<DenoiseOutput(ad::Tape&, const Tensor& z_t, int t)>;

// Samples t ~ U{1..T} and unit normal noise from rng_seed, forms z_t, and
// returns the mean squared error between true and predicted noise.
LdmLossResult ldm_loss_with(ad::Tape& tape, const DenoiseFn& denoise,
                            const Tensor& z0, uint64_t rng_seed,
                            const NoiseSchedule& schedule);

// One trainable diffusion model: text encoder + denoiser + schedule. The same
// class serves text-to-layout (no side network) and layout-to-image (side
// network present) modes.
class Model {
 public:
  Model(const DenoiserConfig& config, const NoiseSchedule& schedule,
        std::vector<std::string> class_names, uint64_t init_seed);

  DenoiseOutput denoise(ad::Tape& tape, const Tensor& z_t, int t,
                        const TextPrompt& prompt, const ColorMap* condition);

  LdmLossResult ldm_loss(ad::Tape& tape, const Tensor& z0, const TextPrompt& prompt,
                         uint64_t rng_seed, const ColorMap* condition);

  // Runs all T reverse steps from initial_noise. Deterministic mode applies
  // posterior-mean updates only, so the output is a pure function of
  // (parameters, prompt, initial_noise); ancestral mode draws per-step noise
  // from noise_seed.
  Tensor sample(const TextPrompt& prompt, const Tensor& initial_noise,
                SamplerMode mode, uint64_t noise_seed, const ColorMap* condition);

  Tensor unit_noise(uint64_t seed) const;  // latent-shaped standard normal

  const DenoiserConfig& config() const { return denoiser_.config(); }
  const NoiseSchedule& schedule() const { return schedule_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  TextEncoder& encoder() { return encoder_; }
  Denoiser& denoiser() { return denoiser_; }
  std::vector<ad::Param*> params();

 private:
  NoiseSchedule schedule_;
  Tokenizer tokenizer_;
  TextEncoder encoder_;
  Denoiser denoiser_;
};

}  // namespace changediff
