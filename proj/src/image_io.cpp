#include "changediff/image_io.hpp"

#include <fstream>

#include "changediff/errors.hpp"

namespace changediff {

namespace {

struct PnmHeader {
  int width = 0;
  int height = 0;
};

// Reads magic, dimensions and maxval, skipping whitespace and `#` comments.
PnmHeader read_header(std::istream& in, const std::string& path, const char* magic) {
  std::string m;
  in >> m;
  if (m != magic)
    fail(ErrorKind::Parse, path + ": expected " + magic + " header, got '" + m + "'");
  int fields[3];
  for (int& f : fields) {
    // skip whitespace/comments
    int c;
    while ((c = in.peek()) != EOF) {
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    if (!(in >> f)) fail(ErrorKind::Parse, path + ": truncated header");
  }
  if (fields[0] < 1 || fields[1] < 1)
    fail(ErrorKind::Parse, path + ": non-positive dimensions");
  if (fields[2] != 255) fail(ErrorKind::Parse, path + ": maxval must be 255");
  in.get();  // single whitespace before raster
  return {fields[0], fields[1]};
}

}  // namespace

void write_pgm(const std::string& path, const SemanticLayout& layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "P5\n" << layout.width << ' ' << layout.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(layout.ids.data()),
            static_cast<std::streamsize>(layout.ids.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

SemanticLayout read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  PnmHeader h = read_header(in, path, "P5");
  SemanticLayout layout(h.height, h.width);
  in.read(reinterpret_cast<char*>(layout.ids.data()),
          static_cast<std::streamsize>(layout.ids.size()));
  if (in.gcount() != static_cast<std::streamsize>(layout.ids.size()))
    fail(ErrorKind::Parse, path + ": truncated raster");
  return layout;
}

void write_ppm(const std::string& path, const ColorMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << "P6\n" << map.width << ' ' << map.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.rgb.data()),
            static_cast<std::streamsize>(map.rgb.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

ColorMap read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  PnmHeader h = read_header(in, path, "P6");
  ColorMap map(h.height, h.width);
  in.read(reinterpret_cast<char*>(map.rgb.data()),
          static_cast<std::streamsize>(map.rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(map.rgb.size()))
    fail(ErrorKind::Parse, path + ": truncated raster");
  return map;
}

}  // namespace changediff
