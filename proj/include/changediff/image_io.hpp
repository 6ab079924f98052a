#pragma once

#include <string>

#include "changediff/layout.hpp"

namespace changediff {

// Layouts persist as binary PGM (P5, single channel); color maps as binary
// PPM (P6). Both are lossless and byte-exact across runs.
void write_pgm(const std::string& path, const SemanticLayout& layout);
SemanticLayout read_pgm(const std::string& path);

void write_ppm(const std::string& path, const ColorMap& map);
ColorMap read_ppm(const std::string& path);

}  // namespace changediff
