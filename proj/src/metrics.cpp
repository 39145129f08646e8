#include "a2n/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <locale>
#include <sstream>

#include "a2n/errors.hpp"
#include "a2n/train.hpp"

namespace a2n {

namespace {

// Luma plane scaled to the 8-bit range, with `border` pixels dropped from
// every side.
struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane luma_crop(const Image& img, int border, const char* who) {
  if (border < 0) throw ShapeError(std::string(who) + ": negative border");
  const Image y = rgb_to_y(img);
  const int w = y.width - 2 * border;
  const int h = y.height - 2 * border;
  if (w < 1 || h < 1)
    throw ShapeError(std::string(who) + ": border " + std::to_string(border) +
                     " leaves no pixels of a " + std::to_string(y.width) +
                     "x" + std::to_string(y.height) + " image");
  Plane p;
  p.w = w;
  p.h = h;
  p.v.resize(static_cast<size_t>(w) * h);
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx)
      p.v[static_cast<size_t>(yy) * w + xx] =
          y.at(yy + border, xx + border, 0) * 255.0;
  return p;
}

void check_same_size(const Image& a, const Image& b, const char* who) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError(std::string(who) + ": size mismatch " +
                     std::to_string(a.width) + "x" + std::to_string(a.height) +
                     " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
}

}  // namespace

double psnr_y(const Image& sr, const Image& hr, int border) {
  check_same_size(sr, hr, "psnr_y");
  const Plane a = luma_crop(sr, border, "psnr_y");
  const Plane b = luma_crop(hr, border, "psnr_y");
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = a.v[i] - b.v[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.v.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim_y(const Image& sr, const Image& hr, int border) {
  check_same_size(sr, hr, "ssim_y");
  const Plane a = luma_crop(sr, border, "ssim_y");
  const Plane b = luma_crop(hr, border, "ssim_y");
  constexpr int kWin = 11;
  if (a.w < kWin || a.h < kWin)
    throw ShapeError("ssim_y: cropped image " + std::to_string(a.w) + "x" +
                     std::to_string(a.h) + " is smaller than the " +
                     std::to_string(kWin) + "px window");

  // Normalized 11x11 Gaussian, sigma 1.5.
  double win[kWin][kWin];
  double wsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - 5.0, dx = j - 5.0;
      win[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += win[i][j];
    }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) win[i][j] /= wsum;

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);

  double total = 0.0;
  int64_t count = 0;
  for (int y0 = 0; y0 + kWin <= a.h; ++y0)
    for (int x0 = 0; x0 + kWin <= a.w; ++x0) {
      double mu_a = 0.0, mu_b = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          mu_a += win[i][j] * a.at(y0 + i, x0 + j);
          mu_b += win[i][j] * b.at(y0 + i, x0 + j);
        }
      double var_a = 0.0, var_b = 0.0, cov = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double da = a.at(y0 + i, x0 + j) - mu_a;
          const double db = b.at(y0 + i, x0 + j) - mu_b;
          var_a += win[i][j] * da * da;
          var_b += win[i][j] * db * db;
          cov += win[i][j] * da * db;
        }
      const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
      const double den =
          (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
      total += num / den;
      ++count;
    }
  return total / static_cast<double>(count);
}

EvalReport evaluate(Model& model, const std::string& dataset_dir, int scale) {
  if (scale != model.config().scale)
    throw ConfigError("evaluate: dataset scale " + std::to_string(scale) +
                      " does not match model scale " +
                      std::to_string(model.config().scale));
  const Dataset ds = load_dataset(dataset_dir, scale);

  EvalReport report;
  report.dataset = dataset_dir;
  report.scale = scale;
  report.border = scale;
  report.missing = ds.unpaired;

  NoGradGuard guard;
  for (const SamplePair& pair : ds.pairs) {
    const Tensor input = image_to_tensor(pair.lr);
    const Tensor output = model.forward(input);
    const Image sr = tensor_to_image(output, 0);  // clamps to [0,1]
    ImageScore row;
    row.file = pair.name;
    row.psnr_db = psnr_y(sr, pair.hr, scale);
    row.ssim = ssim_y(sr, pair.hr, scale);
    report.rows.push_back(std::move(row));
  }

  double psum = 0.0, ssum = 0.0;
  for (const ImageScore& r : report.rows) {
    psum += r.psnr_db;
    ssum += r.ssim;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_psnr = psum / n;
  report.mean_ssim = ssum / n;
  return report;
}

EvalReport evaluate_bicubic(const std::string& dataset_dir, int scale) {
  const Dataset ds = load_dataset(dataset_dir, scale);
  EvalReport report;
  report.dataset = dataset_dir;
  report.scale = scale;
  report.border = scale;
  report.missing = ds.unpaired;
  for (const SamplePair& pair : ds.pairs) {
    const Image sr = bicubic_resize(pair.lr, pair.hr.width, pair.hr.height);
    ImageScore row;
    row.file = pair.name;
    row.psnr_db = psnr_y(sr, pair.hr, scale);
    row.ssim = ssim_y(sr, pair.hr, scale);
    report.rows.push_back(std::move(row));
  }
  double psum = 0.0, ssum = 0.0;
  for (const ImageScore& r : report.rows) {
    psum += r.psnr_db;
    ssum += r.ssim;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_psnr = psum / n;
  report.mean_ssim = ssum / n;
  return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.imbue(std::locale::classic());
  out << "file,psnr_db,ssim\n";
  out << std::fixed;
  for (const ImageScore& r : report.rows)
    out << r.file << ',' << std::setprecision(4) << r.psnr_db << ','
        << std::setprecision(6) << r.ssim << '\n';
  if (!out) throw IoError("failed while writing " + path);
}

std::string format_eval_table(const EvalReport& report) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  size_t name_w = 4;
  for (const ImageScore& r : report.rows)
    name_w = std::max(name_w, r.file.size());

  out << report.dataset << "  (x" << report.scale << ", border "
      << report.border << ")\n";
  out << std::left << std::setw(static_cast<int>(name_w) + 2) << "file"
      << std::right << std::setw(10) << "psnr_db" << std::setw(10) << "ssim"
      << '\n';
  out << std::fixed;
  for (const ImageScore& r : report.rows)
    out << std::left << std::setw(static_cast<int>(name_w) + 2) << r.file
        << std::right << std::setw(10) << std::setprecision(4) << r.psnr_db
        << std::setw(10) << std::setprecision(6) << r.ssim << '\n';
  out << std::left << std::setw(static_cast<int>(name_w) + 2) << "mean"
      << std::right << std::setw(10) << std::setprecision(4)
      << report.mean_psnr << std::setw(10) << std::setprecision(6)
      << report.mean_ssim << '\n';
  for (const std::string& m : report.missing)
    out << "missing pair: " << m << " (excluded)\n";
  return out.str();
}

}  // namespace a2n
