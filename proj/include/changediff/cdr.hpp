#pragma once

#include <string>
#include <vector>

#include "changediff/autodiff.hpp"
#include "changediff/codec.hpp"
#include "changediff/denoiser.hpp"
#include "changediff/prompt.hpp"

namespace changediff {

// Per-class attention grids at one cross-attention layer. Grids are stored
// flattened as [h*w] nodes; a_com = a_class * a_ratio elementwise.
struct ClassGrids {
  std::string class_name;
  ad::Var a_class = nullptr;
  ad::Var a_ratio = nullptr;
  ad::Var a_com = nullptr;
};

struct LayerView {
  int layer_id = 0;
  int h = 0, w = 0;
  std::vector<ClassGrids> classes;
};

struct ClassAttentionView {
  std::vector<LayerView> layers;
};

// Column-slices each attention map at the prompt's name and ratio spans
// (mean over the span's tokens) and forms the combined grids.
ClassAttentionView extract_class_views(ad::Tape& tape, const AttentionStack& attn,
                                       const TextPrompt& prompt);

// Per-class binary masks from the layout plus their bilinear downsamples,
// binarized at 0.5, for each supervised layer size.
struct MaskPyramid {
  struct Level {
    int h = 0, w = 0;
    std::vector<Tensor> masks;  // [h*w], entries in {0,1}, one per class
  };
  std::vector<std::string> class_names;
  std::vector<Tensor> full;  // [H*W] binary, one per class
  int full_h = 0, full_w = 0;
  std::vector<Level> levels;

  int class_index(const std::string& name) const;
};

MaskPyramid build_mask_pyramid(const SemanticLayout& layout,
                               const ClassPalette& palette,
                               const std::vector<std::string>& class_names,
                               const std::vector<std::pair<int, int>>& level_sizes);

// Bilinear resize of a binary grid followed by thresholding; values >= 0.5
// map to 1. Exposed for the mask pyramid and its tests.
Tensor bilinear_resize(const Tensor& src, int src_h, int src_w, int dst_h, int dst_w);

// Ratio alignment at one layer: mean over classes of
// |activated(A_com restricted to the GT mask) / (h*w) - R_j|.
// Hard mode counts A_com > tau * max(A_com); evaluation only.
double ratio_loss_hard(const LayerView& layer, const ClassDistribution& target,
                       const MaskPyramid& gt, int level, double tau, bool masked);

// Training surrogate: logistic((A_com - tau*max) / temperature) in place of
// the indicator, gradients flow through the threshold's max as well.
ad::Var ratio_loss_soft(ad::Tape& tape, const LayerView& layer,
                        const ClassDistribution& target, const MaskPyramid& gt,
                        int level, double tau, double temperature, bool masked);

// Mean squared deviation between A_class and the layer's GT masks:
// (1/(J*h*w)) * sum_j sum_hw (A_class - M_j)^2.
ad::Var spatial_loss(ad::Tape& tape, const LayerView& layer, const MaskPyramid& gt,
                     int level);
double spatial_loss_value(const LayerView& layer, const MaskPyramid& gt, int level);

// l_ldm + lambda_cdr * sum over supervised layers.
ad::Var total_loss(ad::Tape& tape, ad::Var l_ldm,
                   const std::vector<ad::Var>& per_layer_cdr, double lambda_cdr);
double total_loss_value(double l_ldm, const std::vector<double>& per_layer_cdr,
                        double lambda_cdr);

}  // namespace changediff
