#include "changediff/codec.hpp"

#include <array>
#include <map>
#include <unordered_map>

#include "changediff/errors.hpp"

namespace changediff {

ClassDistribution compute_class_ratios(const SemanticLayout& layout,
                                       const ClassPalette& palette) {
  if (layout.height < 1 || layout.width < 1)
    fail(ErrorKind::Shape, "layout must be at least 1x1");
  std::map<int, size_t> counts;  // ordered -> ascending class id
  for (uint8_t id : layout.ids) {
    if (id == palette.unlabeled_id()) continue;
    ++counts[id];
  }
  ClassDistribution dist;
  const double total = static_cast<double>(layout.pixels());
  for (const auto& [id, count] : counts) {
    if (!palette.has_id(id))
      fail(ErrorKind::Palette,
           "layout contains id " + std::to_string(id) + " absent from palette");
    dist.phrases.push_back({palette.by_id(id).name, static_cast<double>(count) / total});
  }
  return dist;
}

ColorMap layout_to_colormap(const SemanticLayout& layout, const ClassPalette& palette) {
  if (layout.height < 1 || layout.width < 1)
    fail(ErrorKind::Shape, "layout must be at least 1x1");
  // Dense lookup: 256 slots, validity checked per distinct id.
  std::array<Rgb, 256> lut;
  std::array<bool, 256> known{};
  ColorMap map(layout.height, layout.width);
  size_t n = layout.pixels();
  for (size_t i = 0; i < n; ++i) {
    uint8_t id = layout.ids[i];
    if (!known[id]) {
      if (id == palette.unlabeled_id()) {
        lut[id] = palette.unlabeled_color();
      } else if (palette.has_id(id)) {
        lut[id] = palette.by_id(id).color;
      } else {
        fail(ErrorKind::Palette,
             "layout contains id " + std::to_string(id) + " absent from palette");
      }
      known[id] = true;
    }
    const Rgb& c = lut[id];
    map.rgb[i * 3 + 0] = c[0];
    map.rgb[i * 3 + 1] = c[1];
    map.rgb[i * 3 + 2] = c[2];
  }
  return map;
}

namespace {

inline int64_t dist2(const uint8_t* px, const Rgb& c) {
  int64_t dr = int(px[0]) - int(c[0]);
  int64_t dg = int(px[1]) - int(c[1]);
  int64_t db = int(px[2]) - int(c[2]);
  return dr * dr + dg * dg + db * db;
}

inline uint32_t pack_rgb(const uint8_t* px) {
  return (uint32_t(px[0]) << 16) | (uint32_t(px[1]) << 8) | uint32_t(px[2]);
}

}  // namespace

SemanticLayout colormap_to_layout(const ColorMap& map, const ClassPalette& palette,
                                  bool include_unlabeled) {
  if (map.height < 1 || map.width < 1)
    fail(ErrorKind::Shape, "color map must be at least 1x1");
  if (!include_unlabeled && palette.entries().empty())
    fail(ErrorKind::Palette, "cannot decode against an empty class set");

  std::unordered_map<uint32_t, uint8_t> exact;
  for (const auto& e : palette.entries()) {
    uint32_t key = (uint32_t(e.color[0]) << 16) | (uint32_t(e.color[1]) << 8) |
                   uint32_t(e.color[2]);
    exact.emplace(key, static_cast<uint8_t>(e.id));
  }
  if (include_unlabeled) {
    const Rgb& u = palette.unlabeled_color();
    exact.emplace((uint32_t(u[0]) << 16) | (uint32_t(u[1]) << 8) | uint32_t(u[2]),
                  static_cast<uint8_t>(palette.unlabeled_id()));
  }

  SemanticLayout layout(map.height, map.width);
  size_t n = map.pixels();
  for (size_t i = 0; i < n; ++i) {
    const uint8_t* px = &map.rgb[i * 3];
    if (auto it = exact.find(pack_rgb(px)); it != exact.end()) {
      layout.ids[i] = it->second;
      continue;
    }
    // Entries are sorted by id; strict < keeps the lowest id on ties and the
    // unlabeled candidate, checked last, loses ties to every class.
    int64_t best = -1;
    uint8_t best_id = 0;
    for (const auto& e : palette.entries()) {
      int64_t d = dist2(px, e.color);
      if (best < 0 || d < best) {
        best = d;
        best_id = static_cast<uint8_t>(e.id);
      }
    }
    if (include_unlabeled) {
      int64_t d = dist2(px, palette.unlabeled_color());
      if (best < 0 || d < best) {
        best = d;
        best_id = static_cast<uint8_t>(palette.unlabeled_id());
      }
    }
    layout.ids[i] = best_id;
  }
  return layout;
}

}  // namespace changediff
