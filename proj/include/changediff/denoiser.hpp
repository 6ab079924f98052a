#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "changediff/autodiff.hpp"
#include "changediff/layout.hpp"

namespace changediff {

struct DenoiserConfig {
  int latent_channels = 3;
  int latent_h = 32;
  int latent_w = 32;
  int base_channels = 16;
  std::vector<int> channel_mult = {1, 2, 2};  // one entry per resolution level
  std::vector<int> attention_resolutions = {16, 8};
  int heads = 2;
  int text_dim = 48;
  int context_len = 77;
  int time_dim = 64;
  int norm_groups = 8;
  bool coord_features = true;  // append row/col coordinate planes to inputs
  bool side_network = false;   // layout-conditioned (L2I) mode

  int levels() const { return static_cast<int>(channel_mult.size()); }
  int resolution_at(int level) const { return latent_h >> level; }
  int channels_at(int level) const { return base_channels * channel_mult[level]; }
  void validate() const;
};

// Head-averaged cross-attention maps captured during one denoise pass, in
// network order. Rows are query pixels, columns prompt tokens; each row is a
// probability vector.
struct AttentionRecord {
  int layer_id = 0;
  int h = 0, w = 0;
  ad::Var map = nullptr;  // [(h*w) x n_tokens]
};

struct AttentionStack {
  std::vector<AttentionRecord> layers;
};

struct DenoiseOutput {
  ad::Var eps = nullptr;  // same shape as z_t
  AttentionStack attn;
};

namespace detail {
struct DenoiserImpl;
}

// Encoder-decoder noise predictor with residual blocks, skip connections and
// cross-attention at the configured resolutions. In side-network mode a
// trainable copy of the encoder path consumes the conditioning color map and
// feeds the decoder skips through zero-initialized projections, so a fresh
// side network leaves the output unchanged.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, uint64_t init_seed);
  ~Denoiser();
  Denoiser(Denoiser&&) noexcept;
  Denoiser& operator=(Denoiser&&) noexcept;

  // text: [n_tokens x text_dim]. condition must be null unless the model was
  // built with a side network, and is mandatory when it was.
  DenoiseOutput forward(ad::Tape& tape, const Tensor& z_t, int t, ad::Var text,
                        const ColorMap* condition);

  const DenoiserConfig& config() const;
  std::vector<ad::Param*> params();

 private:
  std::unique_ptr<detail::DenoiserImpl> impl_;
};

// Maps 8-bit RGB onto the symmetric unit range used by the latent space.
Tensor colormap_to_latent(const ColorMap& map);
ColorMap latent_to_colormap(const Tensor& latent);

}  // namespace changediff
