#pragma once

// Thin PNG codec layer (libpng) for the three image kinds the dataset uses:
// 8-bit RGB (painted previews), 8-bit indexed (segment maps with their class
// palette), and 16-bit grayscale with text chunks (quantized depth plus its
// scale factor). Readers throw IoError carrying the byte offset reached in the
// stream when a file is malformed or truncated.

#include <cstdint>
#include <map>
#include <string>

#include "titan/common.hpp"
#include "titan/synthdata.hpp"

namespace titan::io {

using TextChunks = std::map<std::string, std::string>;

void write_png_rgb8(const std::string& path, const synth::RgbImage& img);
synth::RgbImage read_png_rgb8(const std::string& path);

// Indexed (paletted) 8-bit image; every index must be a valid palette entry.
void write_png_indexed8(const std::string& path, const ArrayXXi& idx, const synth::Palette& palette);

struct IndexedPng {
  ArrayXXi idx;
  synth::Palette palette;
};
IndexedPng read_png_indexed8(const std::string& path);

// 16-bit grayscale with optional tEXt metadata (written before the image data).
void write_png_gray16(const std::string& path, const ArrayXX<std::uint16_t>& img,
                      const TextChunks& text = {});

struct Gray16Png {
  ArrayXX<std::uint16_t> img;
  TextChunks text;
};
Gray16Png read_png_gray16(const std::string& path);

}  // namespace titan::io
