#include "changediff/palette.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "changediff/errors.hpp"

namespace changediff {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Palette: return "palette";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Event: return "event";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Mode: return "mode";
    case ErrorKind::Registry: return "registry";
    case ErrorKind::Alignment: return "alignment";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Io: return "io";
    case ErrorKind::Internal: return "internal";
  }
  return "unknown";
}

bool valid_class_name(const std::string& name) {
  if (name.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_')) return false;
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

ClassPalette::ClassPalette(std::vector<PaletteEntry> entries, int unlabeled_id,
                           Rgb unlabeled_color)
    : entries_(std::move(entries)),
      unlabeled_id_(unlabeled_id),
      unlabeled_color_(unlabeled_color) {
  std::sort(entries_.begin(), entries_.end(),
            [](const PaletteEntry& a, const PaletteEntry& b) { return a.id < b.id; });
  std::set<Rgb> colors;
  colors.insert(unlabeled_color_);
  for (size_t i = 0; i < entries_.size(); ++i) {
    const PaletteEntry& e = entries_[i];
    if (e.id < 0 || e.id > 255)
      fail(ErrorKind::Palette, "class id out of 8-bit range: " + std::to_string(e.id));
    if (e.id == unlabeled_id_)
      fail(ErrorKind::Palette, "class id collides with the unlabeled sentinel: " +
                                   std::to_string(e.id));
    if (!valid_class_name(e.name))
      fail(ErrorKind::Palette, "invalid class name: '" + e.name + "'");
    if (!by_id_.emplace(e.id, i).second)
      fail(ErrorKind::Palette, "duplicate class id: " + std::to_string(e.id));
    if (!by_name_.emplace(e.name, i).second)
      fail(ErrorKind::Palette, "duplicate class name: '" + e.name + "'");
    if (!colors.insert(e.color).second)
      fail(ErrorKind::Palette, "duplicate color for class '" + e.name + "'");
  }
}

const PaletteEntry& ClassPalette::by_id(int id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end())
    fail(ErrorKind::Palette, "class id not in palette: " + std::to_string(id));
  return entries_[it->second];
}

const PaletteEntry& ClassPalette::by_name(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    fail(ErrorKind::Palette, "class name not in palette: '" + name + "'");
  return entries_[it->second];
}

std::vector<std::string> ClassPalette::class_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.name);
  return names;
}

namespace {

int parse_channel(const std::string& tok, const std::string& path, int line_no) {
  int v;
  try {
    size_t pos = 0;
    v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                               ": expected integer, got '" + tok + "'");
  }
  if (v < 0 || v > 255)
    fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                               ": channel out of [0,255]: " + tok);
  return v;
}

}  // namespace

ClassPalette ClassPalette::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open palette file: " + path);

  std::vector<PaletteEntry> entries;
  bool have_header = false;
  int unlabeled_id = kDefaultUnlabeledId;
  Rgb unlabeled_color = kDefaultUnlabeledColor;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first == "unlabeled") {
      std::string id_s, r, g, b;
      if (!(ss >> id_s >> r >> g >> b))
        fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                                   ": malformed unlabeled header");
      unlabeled_id = parse_channel(id_s, path, line_no);
      unlabeled_color = {static_cast<uint8_t>(parse_channel(r, path, line_no)),
                         static_cast<uint8_t>(parse_channel(g, path, line_no)),
                         static_cast<uint8_t>(parse_channel(b, path, line_no))};
      have_header = true;
      continue;
    }
    PaletteEntry e;
    std::string r, g, b;
    e.id = parse_channel(first, path, line_no);
    if (!(ss >> e.name >> r >> g >> b))
      fail(ErrorKind::Parse,
           path + ":" + std::to_string(line_no) + ": malformed palette entry");
    std::string extra;
    if (ss >> extra)
      fail(ErrorKind::Parse, path + ":" + std::to_string(line_no) +
                                 ": trailing tokens after entry");
    e.color = {static_cast<uint8_t>(parse_channel(r, path, line_no)),
               static_cast<uint8_t>(parse_channel(g, path, line_no)),
               static_cast<uint8_t>(parse_channel(b, path, line_no))};
    entries.push_back(std::move(e));
  }
  if (!have_header)
    fail(ErrorKind::Parse, path + ": missing `unlabeled <id> <r> <g> <b>` header");
  return ClassPalette(std::move(entries), unlabeled_id, unlabeled_color);
}

void ClassPalette::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write palette file: " + path);
  out << "unlabeled " << unlabeled_id_ << ' ' << int(unlabeled_color_[0]) << ' '
      << int(unlabeled_color_[1]) << ' ' << int(unlabeled_color_[2]) << '\n';
  for (const auto& e : entries_) {
    out << e.id << ' ' << e.name << ' ' << int(e.color[0]) << ' ' << int(e.color[1])
        << ' ' << int(e.color[2]) << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

}  // namespace changediff
