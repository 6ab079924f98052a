#pragma once

#include <string>
#include <vector>

#include "changediff/layout.hpp"
#include "changediff/palette.hpp"

namespace changediff {

// One (class name, area ratio) phrase. Ratios are exact rationals of pixel
// counts internally; rounding happens only at prompt serialization.
struct Phrase {
  std::string class_name;
  double ratio = 0.0;

  bool operator==(const Phrase&) const = default;
};

struct ClassDistribution {
  std::vector<Phrase> phrases;

  double total() const {
    double s = 0.0;
    for (const auto& p : phrases) s += p.ratio;
    return s;
  }
  bool contains(const std::string& name) const {
    for (const auto& p : phrases)
      if (p.class_name == name) return true;
    return false;
  }
  bool operator==(const ClassDistribution&) const = default;
};

// Per-class pixel ratios, ascending class id, unlabeled excluded.
ClassDistribution compute_class_ratios(const SemanticLayout& layout,
                                       const ClassPalette& palette);

// Pixelwise palette lookup; the unlabeled sentinel maps to the unlabeled color.
ColorMap layout_to_colormap(const SemanticLayout& layout, const ClassPalette& palette);

// Exact color match wins; otherwise nearest palette color in RGB Euclidean
// distance. Ties break to the lowest class id; unlabeled loses ties to any
// class. With include_unlabeled=false the unlabeled color is not a candidate,
// so every pixel resolves to a class.
SemanticLayout colormap_to_layout(const ColorMap& map, const ClassPalette& palette,
                                  bool include_unlabeled = true);

}  // namespace changediff
