#pragma once

#include <cstdint>
#include <vector>

namespace changediff {

// H x W grid of class ids (palette entries or the unlabeled sentinel).
struct SemanticLayout {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> ids;  // row-major

  SemanticLayout() = default;
  SemanticLayout(int h, int w, uint8_t fill = 0)
      : height(h), width(w), ids(static_cast<size_t>(h) * w, fill) {}

  uint8_t& at(int r, int c) { return ids[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return ids[static_cast<size_t>(r) * width + c]; }
  size_t pixels() const { return static_cast<size_t>(height) * width; }

  bool operator==(const SemanticLayout&) const = default;
};

// H x W x 3 grid of 8-bit RGB values.
struct ColorMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> rgb;  // row-major, interleaved

  ColorMap() = default;
  ColorMap(int h, int w) : height(h), width(w), rgb(static_cast<size_t>(h) * w * 3, 0) {}

  uint8_t* pixel(int r, int c) { return &rgb[(static_cast<size_t>(r) * width + c) * 3]; }
  const uint8_t* pixel(int r, int c) const {
    return &rgb[(static_cast<size_t>(r) * width + c) * 3];
  }
  size_t pixels() const { return static_cast<size_t>(height) * width; }

  bool operator==(const ColorMap&) const = default;
};

}  // namespace changediff
