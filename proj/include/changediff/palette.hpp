#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace changediff {

using Rgb = std::array<uint8_t, 3>;

struct PaletteEntry {
  int id = 0;
  std::string name;
  Rgb color{0, 0, 0};
};

// Bidirectional map among class id, class name, and RGB color. Entries are
// kept sorted by id. The unlabeled sentinel is not an entry; it defaults to
// id 255 with white color.
class ClassPalette {
 public:
  static constexpr int kDefaultUnlabeledId = 255;
  static constexpr Rgb kDefaultUnlabeledColor{255, 255, 255};

  ClassPalette(std::vector<PaletteEntry> entries,
               int unlabeled_id = kDefaultUnlabeledId,
               Rgb unlabeled_color = kDefaultUnlabeledColor);

  // Line-oriented text: header `unlabeled <id> <r> <g> <b>`, then one
  // `<id> <name> <r> <g> <b>` per line. `#` starts a comment.
  static ClassPalette load(const std::string& path);
  void save(const std::string& path) const;

  const std::vector<PaletteEntry>& entries() const { return entries_; }
  int unlabeled_id() const { return unlabeled_id_; }
  Rgb unlabeled_color() const { return unlabeled_color_; }

  bool has_id(int id) const { return by_id_.count(id) != 0; }
  bool has_name(const std::string& name) const { return by_name_.count(name) != 0; }
  const PaletteEntry& by_id(int id) const;
  const PaletteEntry& by_name(const std::string& name) const;

  std::vector<std::string> class_names() const;

 private:
  std::vector<PaletteEntry> entries_;
  int unlabeled_id_;
  Rgb unlabeled_color_;
  std::unordered_map<int, size_t> by_id_;
  std::unordered_map<std::string, size_t> by_name_;
};

// Class names double as prompt tokens: identifier-shaped, no whitespace.
bool valid_class_name(const std::string& name);

}  // namespace changediff
