#include "changediff/cdr.hpp"

#include <algorithm>
#include <cmath>

#include "changediff/errors.hpp"

namespace changediff {

ClassAttentionView extract_class_views(ad::Tape& tape, const AttentionStack& attn,
                                       const TextPrompt& prompt) {
  ClassAttentionView view;
  for (const AttentionRecord& rec : attn.layers) {
    int n_tokens = rec.map->value.shape[1];
    LayerView layer;
    layer.layer_id = rec.layer_id;
    layer.h = rec.h;
    layer.w = rec.w;
    for (const PhraseSpan& span : prompt.spans) {
      if (span.name_begin < 0 || span.name_end > n_tokens ||
          span.ratio_begin < 0 || span.ratio_end > n_tokens ||
          span.name_begin >= span.name_end || span.ratio_begin >= span.ratio_end)
        fail(ErrorKind::Registry, "span for class '" + span.class_name +
                                      "' outside token range 0.." +
                                      std::to_string(n_tokens));
      ClassGrids grids;
      grids.class_name = span.class_name;
      grids.a_class = ad::mean_cols(tape, rec.map, span.name_begin, span.name_end);
      grids.a_ratio = ad::mean_cols(tape, rec.map, span.ratio_begin, span.ratio_end);
      grids.a_com = ad::mul(tape, grids.a_class, grids.a_ratio);
      layer.classes.push_back(std::move(grids));
    }
    view.layers.push_back(std::move(layer));
  }
  return view;
}

Tensor bilinear_resize(const Tensor& src, int src_h, int src_w, int dst_h, int dst_w) {
  Tensor dst({dst_h * dst_w});
  double sy = static_cast<double>(src_h) / dst_h;
  double sx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src_h - 1);
    int y1c = std::clamp(y0 + 1, 0, src_h - 1);
    for (int x = 0; x < dst_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src_w - 1);
      int x1c = std::clamp(x0 + 1, 0, src_w - 1);
      double v00 = src.data[y0c * src_w + x0c];
      double v01 = src.data[y0c * src_w + x1c];
      double v10 = src.data[y1c * src_w + x0c];
      double v11 = src.data[y1c * src_w + x1c];
      dst.data[y * dst_w + x] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  return dst;
}

int MaskPyramid::class_index(const std::string& name) const {
  for (size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return static_cast<int>(i);
  return -1;
}

MaskPyramid build_mask_pyramid(const SemanticLayout& layout,
                               const ClassPalette& palette,
                               const std::vector<std::string>& class_names,
                               const std::vector<std::pair<int, int>>& level_sizes) {
  MaskPyramid pyr;
  pyr.class_names = class_names;
  pyr.full_h = layout.height;
  pyr.full_w = layout.width;
  size_t n = layout.pixels();
  for (const std::string& name : class_names) {
    int id = palette.by_name(name).id;
    Tensor mask({layout.height * layout.width});
    for (size_t i = 0; i < n; ++i)
      mask.data[i] = (layout.ids[i] == id) ? 1.0 : 0.0;
    pyr.full.push_back(std::move(mask));
  }
  for (auto [h, w] : level_sizes) {
    MaskPyramid::Level level;
    level.h = h;
    level.w = w;
    for (const Tensor& full : pyr.full) {
      Tensor small = bilinear_resize(full, layout.height, layout.width, h, w);
      for (auto& v : small.data) v = (v >= 0.5) ? 1.0 : 0.0;
      level.masks.push_back(std::move(small));
    }
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

namespace {

// Classes must correspond one-to-one among view, target and GT pyramid.
void check_alignment(const LayerView& layer, const ClassDistribution& target,
                     const MaskPyramid& gt, int level) {
  if (level < 0 || level >= static_cast<int>(gt.levels.size()))
    fail(ErrorKind::Alignment, "mask pyramid has no level " + std::to_string(level));
  const auto& lv = gt.levels[level];
  if (lv.h != layer.h || lv.w != layer.w)
    fail(ErrorKind::Alignment, "mask level size " + std::to_string(lv.h) + "x" +
                                   std::to_string(lv.w) + " vs attention " +
                                   std::to_string(layer.h) + "x" +
                                   std::to_string(layer.w));
  if (layer.classes.size() != target.phrases.size() ||
      layer.classes.size() != gt.class_names.size())
    fail(ErrorKind::Alignment, "class count mismatch between view, target and GT");
  for (const auto& grids : layer.classes) {
    if (!target.contains(grids.class_name) ||
        gt.class_index(grids.class_name) < 0)
      fail(ErrorKind::Alignment,
           "class '" + grids.class_name + "' missing from target or GT");
  }
}

double target_ratio(const ClassDistribution& target, const std::string& name) {
  for (const auto& p : target.phrases)
    if (p.class_name == name) return p.ratio;
  fail(ErrorKind::Alignment, "class '" + name + "' missing from target");
}

}  // namespace

double ratio_loss_hard(const LayerView& layer, const ClassDistribution& target,
                       const MaskPyramid& gt, int level, double tau, bool masked) {
  check_alignment(layer, target, gt, level);
  int hw = layer.h * layer.w;
  double acc = 0.0;
  for (const auto& grids : layer.classes) {
    const Tensor& com = grids.a_com->value;
    const Tensor& mask = gt.levels[level].masks[gt.class_index(grids.class_name)];
    double mx = *std::max_element(com.data.begin(), com.data.end());
    double thr = tau * mx;
    int count = 0;
    for (int i = 0; i < hw; ++i) {
      if (com.data[i] > thr && (!masked || mask.data[i] > 0.5)) ++count;
    }
    acc += std::abs(static_cast<double>(count) / hw -
                    target_ratio(target, grids.class_name));
  }
  return acc / static_cast<double>(layer.classes.size());
}

ad::Var ratio_loss_soft(ad::Tape& tape, const LayerView& layer,
                        const ClassDistribution& target, const MaskPyramid& gt,
                        int level, double tau, double temperature, bool masked) {
  check_alignment(layer, target, gt, level);
  int hw = layer.h * layer.w;
  ad::Var acc = nullptr;
  for (const auto& grids : layer.classes) {
    ad::Var thr = ad::scale(tape, ad::max_all(tape, grids.a_com), tau);
    ad::Var logits = ad::scale(tape, ad::sub_bcast(tape, grids.a_com, thr),
                               1.0 / temperature);
    ad::Var act = ad::sigmoid(tape, logits);
    if (masked) {
      const Tensor& mask = gt.levels[level].masks[gt.class_index(grids.class_name)];
      act = ad::mul(tape, act, tape.input(mask));
    }
    ad::Var frac = ad::scale(tape, ad::sum_all(tape, act), 1.0 / hw);
    ad::Var term = ad::abs_val(
        tape, ad::add_const(tape, frac, -target_ratio(target, grids.class_name)));
    acc = acc ? ad::add(tape, acc, term) : term;
  }
  return ad::scale(tape, acc, 1.0 / static_cast<double>(layer.classes.size()));
}

ad::Var spatial_loss(ad::Tape& tape, const LayerView& layer, const MaskPyramid& gt,
                     int level) {
  if (layer.classes.empty())
    fail(ErrorKind::Alignment, "spatial loss needs at least one class");
  if (level < 0 || level >= static_cast<int>(gt.levels.size()))
    fail(ErrorKind::Alignment, "mask pyramid has no level " + std::to_string(level));
  const auto& lv = gt.levels[level];
  if (lv.h != layer.h || lv.w != layer.w)
    fail(ErrorKind::Alignment, "mask level size mismatch");
  int hw = layer.h * layer.w;
  ad::Var acc = nullptr;
  for (const auto& grids : layer.classes) {
    int idx = gt.class_index(grids.class_name);
    if (idx < 0)
      fail(ErrorKind::Alignment, "class '" + grids.class_name + "' missing from GT");
    ad::Var diff = ad::sub(tape, grids.a_class, tape.input(lv.masks[idx]));
    ad::Var sq = ad::sum_all(tape, ad::mul(tape, diff, diff));
    acc = acc ? ad::add(tape, acc, sq) : sq;
  }
  return ad::scale(tape, acc,
                   1.0 / (static_cast<double>(layer.classes.size()) * hw));
}

double spatial_loss_value(const LayerView& layer, const MaskPyramid& gt, int level) {
  ad::Tape tape(/*grad_enabled=*/false);
  return spatial_loss(tape, layer, gt, level)->value.item();
}

ad::Var total_loss(ad::Tape& tape, ad::Var l_ldm,
                   const std::vector<ad::Var>& per_layer_cdr, double lambda_cdr) {
  if (lambda_cdr != 0.0 && per_layer_cdr.empty())
    fail(ErrorKind::Config, "refinement weight is nonzero but no layers are supervised");
  ad::Var total = l_ldm;
  if (lambda_cdr != 0.0) {
    ad::Var sum = nullptr;
    for (ad::Var v : per_layer_cdr) sum = sum ? ad::add(tape, sum, v) : v;
    total = ad::add(tape, total, ad::scale(tape, sum, lambda_cdr));
  }
  return total;
}

double total_loss_value(double l_ldm, const std::vector<double>& per_layer_cdr,
                        double lambda_cdr) {
  if (lambda_cdr != 0.0 && per_layer_cdr.empty())
    fail(ErrorKind::Config, "refinement weight is nonzero but no layers are supervised");
  double s = 0.0;
  for (double v : per_layer_cdr) s += v;
  return l_ldm + lambda_cdr * s;
}

}  // namespace changediff
