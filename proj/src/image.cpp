#include "a2n/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "a2n/errors.hpp"

namespace a2n {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

double u8_to_real(int v) { return static_cast<double>(v) / 255.0; }

uint8_t real_to_u8(double v) {
  const double c = std::min(std::max(v, 0.0), 1.0);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Image load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("load_png: cannot open " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("load_png: libpng init failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("load_png: libpng init failed for " + path);
  }
  std::vector<std::vector<uint8_t>> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("load_png: malformed image " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const int bit_depth = png_get_bit_depth(png, info);
  if (bit_depth > 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("load_png: unsupported bit depth " +
                  std::to_string(bit_depth) + " in " + path);
  }
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA ||
      png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("load_png: unsupported channel count " +
                  std::to_string(channels) + " in " + path);
  }

  rows.assign(static_cast<size_t>(height),
              std::vector<uint8_t>(static_cast<size_t>(width) * channels));
  std::vector<png_bytep> row_ptrs(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) row_ptrs[y] = rows[y].data();
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img{width, height, channels, {}};
  img.data.resize(static_cast<size_t>(width) * height * channels);
  for (int y = 0; y < height; ++y)
    for (size_t i = 0; i < rows[y].size(); ++i)
      img.data[static_cast<size_t>(y) * width * channels + i] =
          u8_to_real(rows[y][i]);
  return img;
}

void save_png(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("save_png: unsupported channel count " +
                  std::to_string(img.channels));
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("save_png: cannot write " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("save_png: libpng init failed for " + path);
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("save_png: libpng init failed for " + path);
  }
  std::vector<std::vector<uint8_t>> rows(
      static_cast<size_t>(img.height),
      std::vector<uint8_t>(static_cast<size_t>(img.width) * img.channels));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("save_png: write failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  for (int y = 0; y < img.height; ++y)
    for (size_t i = 0; i < rows[y].size(); ++i)
      rows[y][i] =
          real_to_u8(img.data[static_cast<size_t>(y) * img.width * img.channels +
                              i]);
  std::vector<png_bytep> row_ptrs(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y) row_ptrs[y] = rows[y].data();
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image rgb_to_y(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw IoError("rgb_to_y: expected 1 or 3 channels, got " +
                  std::to_string(img.channels));
  Image out{img.width, img.height, 1, {}};
  out.data.resize(static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x, 0) = (16.0 + 65.481 * img.at(y, x, 0) +
                         128.553 * img.at(y, x, 1) + 24.966 * img.at(y, x, 2)) /
                        255.0;
  return out;
}

Image expand_to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  if (img.channels != 1)
    throw IoError("expand_to_rgb: expected 1 or 3 channels, got " +
                  std::to_string(img.channels));
  Image out{img.width, img.height, 3, {}};
  out.data.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, 0);
  return out;
}

namespace {

// Cubic convolution kernel, a = -0.5 (Keys).
double cubic(double t) {
  const double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0;
  if (x < 2.0) return a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a;
  return 0.0;
}

struct TapSet {
  std::vector<int> first;          // leftmost source index per output index
  std::vector<double> weights;     // taps_per x outputs, normalized
  int taps = 0;
};

// Half-pixel-center mapping. When shrinking, the kernel is stretched by the
// inverse scale so it covers the source footprint (antialias prefilter), and
// every tap row is renormalized to sum to 1.
TapSet make_taps(int in_n, int out_n) {
  const double scale = static_cast<double>(in_n) / out_n;
  const double kscale = out_n >= in_n ? 1.0 : static_cast<double>(out_n) / in_n;
  const double support = 2.0 / kscale;

  TapSet ts;
  ts.taps = static_cast<int>(std::ceil(support)) * 2 + 1;
  ts.first.resize(static_cast<size_t>(out_n));
  ts.weights.assign(static_cast<size_t>(out_n) * ts.taps, 0.0);
  for (int o = 0; o < out_n; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int left = static_cast<int>(std::floor(src - support)) + 1;
    ts.first[o] = left;
    double sum = 0.0;
    for (int t = 0; t < ts.taps; ++t) {
      const double w = cubic((src - (left + t)) * kscale);
      ts.weights[static_cast<size_t>(o) * ts.taps + t] = w;
      sum += w;
    }
    for (int t = 0; t < ts.taps; ++t)
      ts.weights[static_cast<size_t>(o) * ts.taps + t] /= sum;
  }
  return ts;
}

}  // namespace

Image bicubic_resize(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    throw std::invalid_argument("bicubic_resize: target size must be >= 1");

  const TapSet tx = make_taps(img.width, out_w);
  const TapSet ty = make_taps(img.height, out_h);

  // Horizontal pass.
  Image mid{out_w, img.height, img.channels, {}};
  mid.data.resize(static_cast<size_t>(out_w) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int o = 0; o < out_w; ++o)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = 0; t < tx.taps; ++t) {
          const int sx =
              std::min(std::max(tx.first[o] + t, 0), img.width - 1);
          acc += tx.weights[static_cast<size_t>(o) * tx.taps + t] *
                 img.at(y, sx, c);
        }
        mid.at(y, o, c) = acc;
      }

  // Vertical pass.
  Image out{out_w, out_h, img.channels, {}};
  out.data.resize(static_cast<size_t>(out_w) * out_h * img.channels);
  for (int o = 0; o < out_h; ++o)
    for (int x = 0; x < out_w; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int t = 0; t < ty.taps; ++t) {
          const int sy =
              std::min(std::max(ty.first[o] + t, 0), mid.height - 1);
          acc += ty.weights[static_cast<size_t>(o) * ty.taps + t] *
                 mid.at(sy, x, c);
        }
        out.at(o, x, c) = std::min(std::max(acc, 0.0), 1.0);
      }
  return out;
}

Image center_crop_to_multiple(const Image& img, int multiple) {
  if (multiple < 1)
    throw std::invalid_argument("center_crop_to_multiple: multiple < 1");
  const int w = img.width - img.width % multiple;
  const int h = img.height - img.height % multiple;
  if (w < 1 || h < 1)
    throw std::invalid_argument("center_crop_to_multiple: image too small");
  const int x0 = (img.width - w) / 2;
  const int y0 = (img.height - h) / 2;
  Image out{w, h, img.channels, {}};
  out.data.resize(static_cast<size_t>(w) * h * img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c)
        out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

std::vector<PatchPair> extract_patches(const Image& hr, const Image& lr,
                                       int scale, int lr_patch, int count,
                                       uint64_t rng_seed) {
  if (hr.width != lr.width * scale || hr.height != lr.height * scale)
    throw ShapeError("extract_patches: hr is not scale x lr (" +
                     std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                     " vs " + std::to_string(lr.width) + "x" +
                     std::to_string(lr.height) + ", scale " +
                     std::to_string(scale) + ")");
  if (lr.width < lr_patch || lr.height < lr_patch) {
    std::cerr << "extract_patches: image " << lr.width << "x" << lr.height
              << " smaller than patch " << lr_patch << ", skipping\n";
    return {};
  }

  auto crop = [](const Image& src, int y0, int x0, int side) {
    Image out{side, side, src.channels, {}};
    out.data.resize(static_cast<size_t>(side) * side * src.channels);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        for (int c = 0; c < src.channels; ++c)
          out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
    return out;
  };

  Rng rng(rng_seed);
  std::vector<PatchPair> pairs;
  pairs.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int y0 =
        static_cast<int>(rng.uniform_int(lr.height - lr_patch + 1));
    const int x0 = static_cast<int>(rng.uniform_int(lr.width - lr_patch + 1));
    PatchPair p;
    p.scale = scale;
    p.lr = crop(lr, y0, x0, lr_patch);
    p.hr = crop(hr, y0 * scale, x0 * scale, lr_patch * scale);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Image rotate90(const Image& img) {
  Image out{img.height, img.width, img.channels, {}};
  out.data.resize(img.data.size());
  // (i, j) -> (j, H-1-i)
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c)
        out.at(j, img.height - 1 - i, c) = img.at(i, j, c);
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out{img.width, img.height, img.channels, {}};
  out.data.resize(img.data.size());
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c)
        out.at(i, img.width - 1 - j, c) = img.at(i, j, c);
  return out;
}

PatchPair augment(const PatchPair& pair, int code) {
  if (code < 0 || code > 7)
    throw std::invalid_argument("augment: code " + std::to_string(code) +
                                " outside 0..7");
  const int quarter_turns = code & 3;
  const bool flip = (code >> 2) != 0;
  PatchPair out = pair;
  for (int r = 0; r < quarter_turns; ++r) {
    out.lr = rotate90(out.lr);
    out.hr = rotate90(out.hr);
  }
  if (flip) {
    out.lr = flip_horizontal(out.lr);
    out.hr = flip_horizontal(out.hr);
  }
  return out;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(Shape{1, img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at(0, c, y, x) = img.at(y, x, c);
  return t;
}

Image tensor_to_image(const Tensor& t, int64_t batch_index) {
  if (t.shape.c != 1 && t.shape.c != 3)
    throw ShapeError("tensor_to_image: channel count " +
                     std::to_string(t.shape.c));
  if (batch_index < 0 || batch_index >= t.shape.b)
    throw ShapeError("tensor_to_image: batch index out of range");
  Image img{static_cast<int>(t.shape.w), static_cast<int>(t.shape.h),
            static_cast<int>(t.shape.c), {}};
  img.data.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        img.at(y, x, c) =
            std::min(std::max(t.at(batch_index, c, y, x), 0.0), 1.0);
  return img;
}

std::vector<std::string> list_png_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.push_back(entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace a2n
