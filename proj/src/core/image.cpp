// Copyright 2026 The retinavl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "retinavl/core/image.hpp"

#include "retinavl/core/error.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <memory>

namespace retinavl {

Plane Image::max_channel() const {
  if (planes.empty()) return Plane();
  Plane m = planes[0];
  for (std::size_t c = 1; c < planes.size(); ++c) m = m.max(planes[c]);
  return m;
}

bool Image::operator==(const Image& other) const {
  if (channels() != other.channels() || height() != other.height() || width() != other.width())
    return false;
  for (int c = 0; c < channels(); ++c)
    if (!((*this)[c] == other[c]).all()) return false;
  return true;
}

Image crop(const Image& img, const Box& box) {
  RVL_CHECK(box.top >= 0 && box.left >= 0 && box.height > 0 && box.width > 0 &&
                box.top + box.height <= img.height() && box.left + box.width <= img.width(),
            ShapeError, "crop box outside image");
  Image out;
  out.planes.reserve(img.planes.size());
  for (const auto& p : img.planes)
    out.planes.emplace_back(p.block(box.top, box.left, box.height, box.width));
  return out;
}

Image pad_to_square(const Image& img, double fill) {
  const int h = img.height();
  const int w = img.width();
  const int side = std::max(h, w);
  Image out(img.channels(), side, side, fill);
  const int top = (side - h) / 2;
  const int left = (side - w) / 2;
  for (int c = 0; c < img.channels(); ++c) out[c].block(top, left, h, w) = img[c];
  return out;
}

namespace {

// Source coordinate and clamped neighbours for one output index.
struct Tap {
  int i0;
  int i1;
  double frac;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {i0, i1, s - i0};
  }
  return t;
}

}  // namespace

Plane resize_bilinear(const Plane& src, int height, int width) {
  RVL_CHECK(height > 0 && width > 0, ShapeError, "resize target must be positive");
  if (src.rows() == height && src.cols() == width) return src;
  const auto ty = taps(static_cast<int>(src.rows()), height);
  const auto tx = taps(static_cast<int>(src.cols()), width);
  Plane out(height, width);
  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const double top = (1 - b.frac) * src(a.i0, b.i0) + b.frac * src(a.i0, b.i1);
      const double bot = (1 - b.frac) * src(a.i1, b.i0) + b.frac * src(a.i1, b.i1);
      out(y, x) = (1 - a.frac) * top + a.frac * bot;
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  Image out;
  out.planes.reserve(img.planes.size());
  for (const auto& p : img.planes) out.planes.push_back(resize_bilinear(p, height, width));
  return out;
}

Image hflip(const Image& img) {
  Image out = img;
  for (auto& p : out.planes) p = p.rowwise().reverse().eval();
  return out;
}

namespace {

bool has_suffix(std::string s, const std::string& suffix) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image from_interleaved(const std::vector<unsigned char>& buf, int h, int w, int channels) {
  Image img(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img[c](y, x) = buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return img;
}

Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  return from_interleaved(buf, static_cast<int>(image.height), static_cast<int>(image.width),
                          gray ? 1 : 3);
}

struct JpegErrorJump {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorJump*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegErrorJump err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<unsigned char> buf;
  int h = 0, w = 0, channels = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  channels = cinfo.output_components;
  buf.resize(static_cast<std::size_t>(h) * w * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_interleaved(buf, h, w, channels);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string name = path.string();
  if (has_suffix(name, ".png")) return read_png(path);
  if (has_suffix(name, ".jpg") || has_suffix(name, ".jpeg")) return read_jpeg(path);
  throw IoError("unsupported image format: " + name);
}

void write_png(const Image& img, const std::filesystem::path& path) {
  RVL_CHECK(img.channels() == 1 || img.channels() == 3, ShapeError,
            "PNG output needs 1 or 3 channels");
  const int h = img.height();
  const int w = img.width();
  const int channels = img.channels();
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = std::clamp(img[c](y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * channels + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace retinavl
