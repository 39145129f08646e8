#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "a2n/rng.hpp"
#include "a2n/tensor.hpp"

namespace a2n {

// 8-bit image on disk, real-valued in [0,1] in memory. Pixels are row-major
// and interleaved: data[(y * width + x) * channels + c].
struct Image {
  int width = 0, height = 0, channels = 0;  // channels is 1 or 3
  std::vector<double> data;

  double& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// Spatially aligned training pair: hr covers exactly scale x the lr region.
struct PatchPair {
  Image lr, hr;
  int scale = 1;
};

// 8-bit PNG I/O. Grayscale loads as 1 channel, color as 3 (alpha stripped,
// palettes expanded). 16-bit files are rejected.
Image load_png(const std::string& path);
void save_png(const Image& img, const std::string& path);

// BT.601 studio-swing luma: Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255.
// 1-channel input passes through unchanged.
Image rgb_to_y(const Image& img);

// Grayscale replicated onto three channels; 3-channel input passes through.
Image expand_to_rgb(const Image& img);

// Separable cubic-convolution resampling, a = -0.5, half-pixel centers,
// edge clamp. Downsampling widens the kernel by the scale factor and
// renormalizes the taps (antialias prefilter).
Image bicubic_resize(const Image& img, int out_w, int out_h);

// Largest centered crop whose sides are divisible by `multiple`.
Image center_crop_to_multiple(const Image& img, int multiple);

// `count` aligned patch pairs at seeded uniform positions. Images smaller
// than the patch yield a warning on stderr and an empty list.
std::vector<PatchPair> extract_patches(const Image& hr, const Image& lr,
                                       int scale, int lr_patch, int count,
                                       uint64_t rng_seed);

// Dihedral-group augmentation, code 0..7 = (quarter-turns) | (h-flip << 2).
// Rotation sends pixel (i, j) of an HxW image to (j, H-1-i).
Image rotate90(const Image& img);
Image flip_horizontal(const Image& img);
PatchPair augment(const PatchPair& pair, int code);

// Layout conversion. image_to_tensor yields (1, C, H, W); tensor_to_image
// takes one batch entry and clamps values into [0,1] for export.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t, int64_t batch_index = 0);

// Sorted *.png paths directly inside dir.
std::vector<std::string> list_png_files(const std::string& dir);

}  // namespace a2n
