#include "mpnn/netpbm.hpp"

#include <cctype>
#include <fstream>

namespace mpnn::netpbm {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.peek()) != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(in.get()));
      }
      return tok;
    }
  }
  return tok;
}

struct Header {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
};

Header read_header(std::istream& in, const std::filesystem::path& path,
                   const char* expected_magic) {
  Header hd;
  hd.magic = next_token(in);
  MPNN_CHECK(hd.magic == expected_magic, path.string(), ": expected ", expected_magic,
             " raster, got magic '", hd.magic, "'");
  try {
    hd.w = std::stoi(next_token(in));
    hd.h = std::stoi(next_token(in));
    hd.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    MPNN_CHECK(false, path.string(), ": malformed netpbm header");
  }
  MPNN_CHECK(hd.w > 0 && hd.h > 0, path.string(), ": bad raster size ", hd.w, "x", hd.h);
  MPNN_CHECK(hd.maxval == 255, path.string(), ": only maxval 255 supported, got ", hd.maxval);
  // single whitespace byte separates header from pixel data
  in.get();
  return hd;
}

}  // namespace

LabelMask read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  MPNN_CHECK(in.good(), "cannot open ", path.string());
  const Header hd = read_header(in, path, "P5");
  LabelMask m(hd.h, hd.w);
  in.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size()));
  MPNN_CHECK(in.gcount() == static_cast<std::streamsize>(m.v.size()),
             path.string(), ": truncated pixel data");
  return m;
}

void write_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write ", path.string());
  out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.v.data()),
            static_cast<std::streamsize>(mask.v.size()));
  MPNN_CHECK(out.good(), "write failed for ", path.string());
}

RawImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  MPNN_CHECK(in.good(), "cannot open ", path.string());
  const Header hd = read_header(in, path, "P6");
  RawImage img(hd.h, hd.w);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  MPNN_CHECK(in.gcount() == static_cast<std::streamsize>(img.rgb.size()),
             path.string(), ": truncated pixel data");
  return img;
}

void write_ppm(const std::filesystem::path& path, const RawImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  MPNN_CHECK(out.good(), "cannot write ", path.string());
  out << "P6\n" << image.w << " " << image.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
  MPNN_CHECK(out.good(), "write failed for ", path.string());
}

}  // namespace mpnn::netpbm
