#include "titan/io/png.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace titan::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// Shared state for libpng callbacks. `offset` tracks how many bytes have been
// consumed (read) or produced (write) so errors can report where they struck.
struct PngIo {
  std::FILE* f = nullptr;
  std::size_t offset = 0;
  std::string error;
};

extern "C" {

void titan_png_error(png_structp png, png_const_charp msg) {
  auto* io = static_cast<PngIo*>(png_get_error_ptr(png));
  if (io && io->error.empty()) io->error = msg ? msg : "libpng error";
  png_longjmp(png, 1);
}

void titan_png_warn(png_structp, png_const_charp) {}

void titan_png_read(png_structp png, png_bytep out, png_size_t n) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  const std::size_t got = std::fread(out, 1, n, io->f);
  io->offset += got;
  if (got != n) png_error(png, "unexpected end of file");
}

void titan_png_write(png_structp png, png_bytep data, png_size_t n) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  const std::size_t put = std::fwrite(data, 1, n, io->f);
  io->offset += put;
  if (put != n) png_error(png, "short write");
}

void titan_png_flush(png_structp png) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  std::fflush(io->f);
}

}  // extern "C"

struct WriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~WriteGuard() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
  }
};

struct ReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~ReadGuard() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
  }
};

// Prepares a write session; returns false from setjmp-land on failure.
bool begin_write(WriteGuard& g, PngIo& io) {
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &io, titan_png_error, titan_png_warn);
  if (!g.png) return false;
  g.info = png_create_info_struct(g.png);
  if (!g.info) return false;
  png_set_write_fn(g.png, &io, titan_png_write, titan_png_flush);
  return true;
}

bool begin_read(ReadGuard& g, PngIo& io) {
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &io, titan_png_error, titan_png_warn);
  if (!g.png) return false;
  g.info = png_create_info_struct(g.png);
  if (!g.info) return false;
  png_set_read_fn(g.png, &io, titan_png_read);
  return true;
}

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f)
    throw IoError(path + ": cannot open (" +
                  (std::strcmp(mode, "rb") == 0 ? "for reading" : "for writing") + ")");
  return f;
}

void set_text_chunks(png_structp png, png_infop info, const TextChunks& text,
                     std::vector<png_text>& storage, std::vector<std::string>& keys) {
  if (text.empty()) return;
  storage.clear();
  keys.clear();
  for (const auto& [k, v] : text) {
    keys.push_back(k);
    keys.push_back(v);
  }
  for (std::size_t i = 0; i < keys.size(); i += 2) {
    png_text t;
    std::memset(&t, 0, sizeof(t));
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = keys[i].data();
    t.text = keys[i + 1].data();
    t.text_length = keys[i + 1].size();
    storage.push_back(t);
  }
  png_set_text(png, info, storage.data(), static_cast<int>(storage.size()));
}

TextChunks collect_text_chunks(png_structp png, png_infop info) {
  TextChunks out;
  png_textp texts = nullptr;
  int n = 0;
  png_get_text(png, info, &texts, &n);
  for (int i = 0; i < n; ++i)
    if (texts[i].key) out[texts[i].key] = texts[i].text ? texts[i].text : "";
  return out;
}

}  // namespace

void write_png_rgb8(const std::string& path, const synth::RgbImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.rgb.size() != static_cast<std::size_t>(3) * img.width * img.height)
    throw InvalidInput("write_png_rgb8: image dimensions do not match the pixel buffer");
  FilePtr f = open_file(path, "wb");
  PngIo io{f.get()};
  WriteGuard g;
  if (!begin_write(g, io)) throw IoError(path + ": libpng initialisation failed");
  std::vector<png_bytep> rows(img.height);
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_set_IHDR(g.png, g.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(3) * img.width * y);
  png_write_image(g.png, rows.data());
  png_write_end(g.png, nullptr);
}

synth::RgbImage read_png_rgb8(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngIo io{f.get()};
  ReadGuard g;
  if (!begin_read(g, io)) throw IoError(path + ": libpng initialisation failed");
  synth::RgbImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_read_info(g.png, g.info);
  // Normalize any input variant (palette, gray, 16-bit, alpha) to 8-bit RGB.
  png_set_palette_to_rgb(g.png);
  png_set_expand_gray_1_2_4_to_8(g.png);
  png_set_gray_to_rgb(g.png);
  png_set_strip_16(g.png);
  png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);
  img.width = static_cast<int>(png_get_image_width(g.png, g.info));
  img.height = static_cast<int>(png_get_image_height(g.png, g.info));
  if (png_get_rowbytes(g.png, g.info) != static_cast<std::size_t>(3) * img.width)
    throw IoError(path + ": unexpected row size after RGB normalisation",
                  static_cast<std::int64_t>(io.offset));
  img.rgb.assign(static_cast<std::size_t>(3) * img.width * img.height, 0);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.rgb.data() + static_cast<std::size_t>(3) * img.width * y;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  return img;
}

void write_png_indexed8(const std::string& path, const ArrayXXi& idx,
                        const synth::Palette& palette) {
  if (idx.size() == 0) throw InvalidInput("write_png_indexed8: empty index image");
  if (palette.empty() || palette.size() > 256)
    throw InvalidInput("write_png_indexed8: palette must hold 1..256 entries");
  if ((idx < 0).any() || (idx >= static_cast<int>(palette.size())).any())
    throw InvalidInput("write_png_indexed8: index outside the palette");
  const int w = static_cast<int>(idx.cols()), h = static_cast<int>(idx.rows());
  FilePtr f = open_file(path, "wb");
  PngIo io{f.get()};
  WriteGuard g;
  if (!begin_write(g, io)) throw IoError(path + ": libpng initialisation failed");
  std::vector<png_color> plte(palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i)
    plte[i] = {palette[i][0], palette[i][1], palette[i][2]};
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) buf[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(idx(y, x));
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w;
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_set_IHDR(g.png, g.info, w, h, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(g.png, g.info, plte.data(), static_cast<int>(plte.size()));
  png_write_info(g.png, g.info);
  png_write_image(g.png, rows.data());
  png_write_end(g.png, nullptr);
}

IndexedPng read_png_indexed8(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngIo io{f.get()};
  ReadGuard g;
  if (!begin_read(g, io)) throw IoError(path + ": libpng initialisation failed");
  IndexedPng out;
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_read_info(g.png, g.info);
  if (png_get_color_type(g.png, g.info) != PNG_COLOR_TYPE_PALETTE)
    throw IoError(path + ": expected a paletted image", static_cast<std::int64_t>(io.offset));
  png_set_packing(g.png);  // expand 1/2/4-bit indices to one byte each
  png_read_update_info(g.png, g.info);
  const int w = static_cast<int>(png_get_image_width(g.png, g.info));
  const int h = static_cast<int>(png_get_image_height(g.png, g.info));
  png_colorp plte = nullptr;
  int n_plte = 0;
  if (!png_get_PLTE(g.png, g.info, &plte, &n_plte) || n_plte <= 0)
    throw IoError(path + ": paletted image without a PLTE chunk",
                  static_cast<std::int64_t>(io.offset));
  out.palette.resize(n_plte);
  for (int i = 0; i < n_plte; ++i) out.palette[i] = {plte[i].red, plte[i].green, plte[i].blue};
  buf.assign(static_cast<std::size_t>(w) * h, 0);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * w;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);
  out.idx.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.idx(y, x) = buf[static_cast<std::size_t>(y) * w + x];
  return out;
}

void write_png_gray16(const std::string& path, const ArrayXX<std::uint16_t>& img,
                      const TextChunks& text) {
  if (img.size() == 0) throw InvalidInput("write_png_gray16: empty image");
  const int w = static_cast<int>(img.cols()), h = static_cast<int>(img.rows());
  FilePtr f = open_file(path, "wb");
  PngIo io{f.get()};
  WriteGuard g;
  if (!begin_write(g, io)) throw IoError(path + ": libpng initialisation failed");
  // PNG stores 16-bit samples big-endian; pack explicitly for portability.
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(2) * w * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint16_t v = img(y, x);
      buf[2 * (static_cast<std::size_t>(y) * w + x)] = static_cast<std::uint8_t>(v >> 8);
      buf[2 * (static_cast<std::size_t>(y) * w + x) + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(2) * w * y;
  std::vector<png_text> texts;
  std::vector<std::string> text_storage;
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_set_IHDR(g.png, g.info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  set_text_chunks(g.png, g.info, text, texts, text_storage);
  png_write_info(g.png, g.info);
  png_write_image(g.png, rows.data());
  png_write_end(g.png, nullptr);
}

Gray16Png read_png_gray16(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  PngIo io{f.get()};
  ReadGuard g;
  if (!begin_read(g, io)) throw IoError(path + ": libpng initialisation failed");
  Gray16Png out;
  std::vector<std::uint8_t> buf;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(g.png)))
    throw IoError(path + ": " + io.error, static_cast<std::int64_t>(io.offset));
  png_read_info(g.png, g.info);
  if (png_get_color_type(g.png, g.info) != PNG_COLOR_TYPE_GRAY ||
      png_get_bit_depth(g.png, g.info) != 16)
    throw IoError(path + ": expected 16-bit grayscale", static_cast<std::int64_t>(io.offset));
  out.text = collect_text_chunks(g.png, g.info);
  const int w = static_cast<int>(png_get_image_width(g.png, g.info));
  const int h = static_cast<int>(png_get_image_height(g.png, g.info));
  buf.assign(static_cast<std::size_t>(2) * w * h, 0);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<std::size_t>(2) * w * y;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, g.info);
  for (const auto& [k, v] : collect_text_chunks(g.png, g.info)) out.text.emplace(k, v);
  out.img.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = 2 * (static_cast<std::size_t>(y) * w + x);
      out.img(y, x) = static_cast<std::uint16_t>((buf[i] << 8) | buf[i + 1]);
    }
  return out;
}

}  // namespace titan::io
