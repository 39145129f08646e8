#pragma once

#include <string>
#include <vector>

#include "a2n/image.hpp"
#include "a2n/model.hpp"

namespace a2n {

// Peak signal-to-noise ratio on the luma channel, in dB: 10*log10(255^2 /
// MSE) with Y scaled to the 8-bit range. `border` pixels are cropped from
// every side before comparison. Identical crops give +infinity.
double psnr_y(const Image& sr, const Image& hr, int border);

// Mean local structural similarity on the luma channel: 11x11 Gaussian
// window (sigma 1.5), C1=(0.01*255)^2, C2=(0.03*255)^2, valid-region
// windowing (no padding). The cropped images must be at least 11x11.
double ssim_y(const Image& sr, const Image& hr, int border);

struct ImageScore {
  std::string file;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string dataset;
  int scale = 0;
  int border = 0;
  std::vector<ImageScore> rows;      // sorted by file name
  std::vector<std::string> missing;  // unpaired files, excluded from means
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

// Runs the model over every LR image of <dataset_dir>/{HR,LRx<scale>},
// clamps the outputs to [0,1], and scores them against the HR originals
// with border = scale.
EvalReport evaluate(Model& model, const std::string& dataset_dir, int scale);

// Scores a plain upsampling baseline (bicubic resize of each LR image)
// over the same layout — the no-model reference row.
EvalReport evaluate_bicubic(const std::string& dataset_dir, int scale);

void write_eval_csv(const EvalReport& report, const std::string& path);
std::string format_eval_table(const EvalReport& report);

}  // namespace a2n
