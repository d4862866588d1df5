#pragma once

#include <filesystem>

#include "mpnn/types.hpp"

namespace mpnn::netpbm {

// Binary netpbm rasters (P5 grayscale, P6 RGB), maxval 255. Lossless and
// byte-stable, so rewrites of identical content are bit-identical.

LabelMask read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMask& mask);

RawImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RawImage& image);

}  // namespace mpnn::netpbm
