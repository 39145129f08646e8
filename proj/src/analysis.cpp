#include "a2n/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "a2n/errors.hpp"

namespace a2n {

// ---- high-pass filters -----------------------------------------------------

std::string to_string(HighpassFilter f) {
  switch (f) {
    case HighpassFilter::Laplace: return "laplace";
    case HighpassFilter::Scharr: return "scharr";
    case HighpassFilter::Sobel: return "sobel";
  }
  return "laplace";
}

HighpassFilter highpass_filter_from_string(const std::string& s) {
  if (s == "laplace") return HighpassFilter::Laplace;
  if (s == "scharr") return HighpassFilter::Scharr;
  if (s == "sobel") return HighpassFilter::Sobel;
  throw ConfigError("unknown high-pass filter: " + s);
}

const std::vector<HighpassFilter>& all_highpass_filters() {
  static const std::vector<HighpassFilter> kAll = {
      HighpassFilter::Laplace, HighpassFilter::Scharr, HighpassFilter::Sobel};
  return kAll;
}

namespace {

constexpr double kLaplace[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
constexpr double kScharrX[3][3] = {{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}};
constexpr double kScharrY[3][3] = {{-3, -10, -3}, {0, 0, 0}, {3, 10, 3}};

double tap3(const Image& m, int y, int x, const double k[3][3]) {
  double acc = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    const int yy = std::clamp(y + dy, 0, m.height - 1);
    for (int dx = -1; dx <= 1; ++dx) {
      const int xx = std::clamp(x + dx, 0, m.width - 1);
      acc += k[dy + 1][dx + 1] * m.at(yy, xx, 0);
    }
  }
  return acc;
}

}  // namespace

Image highpass(const Image& map, HighpassFilter filter, bool signed_output) {
  if (map.channels != 1)
    throw ShapeError("highpass: expected a single-channel map, got " +
                     std::to_string(map.channels) + " channels");
  if (map.width < 3 || map.height < 3)
    throw ShapeError("highpass: map must be at least 3x3, got " +
                     std::to_string(map.width) + "x" +
                     std::to_string(map.height));
  Image out{map.width, map.height, 1, {}};
  out.data.resize(static_cast<size_t>(map.width) * map.height);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      double v = 0.0;
      switch (filter) {
        case HighpassFilter::Laplace: {
          const double l = tap3(map, y, x, kLaplace);
          v = signed_output ? l : std::abs(l);
          break;
        }
        case HighpassFilter::Scharr: {
          const double gx = tap3(map, y, x, kScharrX);
          const double gy = tap3(map, y, x, kScharrY);
          v = std::sqrt(gx * gx + gy * gy);
          break;
        }
        case HighpassFilter::Sobel: {
          const double gx = tap3(map, y, x, kSobelX);
          const double gy = tap3(map, y, x, kSobelY);
          v = std::sqrt(gx * gx + gy * gy);
          break;
        }
      }
      out.at(y, x, 0) = v;
    }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ShapeError("pearson: length mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2)
    throw ShapeError("pearson: need at least 2 values, got " +
                     std::to_string(a.size()));
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw NumericError("pearson: zero-variance input, correlation undefined");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---- per-block attention statistics ------------------------------------------

Image channel_mean_map(const Tensor& t, int64_t batch_index) {
  const Shape& s = t.shape;
  if (t.numel() == 0 || batch_index < 0 || batch_index >= s.b)
    throw ShapeError("channel_mean_map: batch entry " +
                     std::to_string(batch_index) + " out of range");
  Image out{static_cast<int>(s.w), static_cast<int>(s.h), 1, {}};
  out.data.resize(static_cast<size_t>(s.h * s.w));
  const std::vector<double>& v = *t.data;
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      double acc = 0.0;
      for (int64_t c = 0; c < s.c; ++c)
        acc += v[((batch_index * s.c + c) * s.h + y) * s.w + x];
      out.at(static_cast<int>(y), static_cast<int>(x), 0) =
          acc / static_cast<double>(s.c);
    }
  return out;
}

namespace {

void map_mean_std(const Image& m, double* mean, double* std_dev) {
  const size_t n = m.data.size();
  double acc = 0.0;
  for (double v : m.data) acc += v;
  const double mu = acc / static_cast<double>(n);
  double var = 0.0;
  for (double v : m.data) var += (v - mu) * (v - mu);
  *mean = mu;
  *std_dev = std::sqrt(var / static_cast<double>(n));
}

}  // namespace

std::vector<AttentionRecord> attention_stats(
    Model& model, const std::vector<Image>& images) {
  if (images.empty())
    throw ConfigError("attention_stats: empty image list");

  struct Acc {
    int images_seen = 0;
    double mean_sum = 0.0, std_sum = 0.0;
    std::map<std::string, double> r_sum;
    std::map<std::string, int> r_count;
    Image attention_map, feat_in, feat_out;  // first image's maps
  };
  std::map<int, Acc> blocks;  // key: 0-based block index

  NoGradGuard no_grad;
  for (const Image& img : images) {
    std::vector<BlockTrace> traces;
    model.forward_with_trace(image_to_tensor(expand_to_rgb(img)), &traces);
    for (const BlockTrace& t : traces) {
      if (t.attention_map.numel() == 0) continue;
      Acc& acc = blocks[t.block_index];
      const Image att = channel_mean_map(t.attention_map);
      const Image fin = channel_mean_map(t.feat_in);
      if (acc.images_seen == 0) {
        acc.attention_map = att;
        acc.feat_in = fin;
        acc.feat_out = channel_mean_map(t.feat_out);
      }
      double mu = 0.0, sd = 0.0;
      map_mean_std(att, &mu, &sd);
      acc.mean_sum += mu;
      acc.std_sum += sd;
      for (HighpassFilter f : all_highpass_filters()) {
        const std::string name = to_string(f);
        try {
          const double r = pearson(att.data, highpass(fin, f).data);
          acc.r_sum[name] += r;
          acc.r_count[name] += 1;
        } catch (const NumericError&) {
          // Constant map on this image: contributes no defined correlation.
        }
      }
      acc.images_seen += 1;
    }
  }

  if (blocks.empty()) {
    std::cerr << "attention_stats: model has no attention gates, "
                 "nothing to report\n";
    return {};
  }

  std::vector<AttentionRecord> records;
  for (auto& [index, acc] : blocks) {
    AttentionRecord rec;
    rec.block_index = index + 1;
    rec.mean = acc.mean_sum / acc.images_seen;
    rec.std_dev = acc.std_sum / acc.images_seen;
    for (HighpassFilter f : all_highpass_filters()) {
      const std::string name = to_string(f);
      const int count = acc.r_count.count(name) ? acc.r_count[name] : 0;
      rec.corr[name] = count > 0
                           ? acc.r_sum[name] / count
                           : std::numeric_limits<double>::quiet_NaN();
    }
    rec.attention_map = std::move(acc.attention_map);
    rec.feat_in = std::move(acc.feat_in);
    rec.feat_out = std::move(acc.feat_out);
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

std::string format_fixed(double v, int digits) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.imbue(std::locale::classic());
  return out;
}

}  // namespace

void write_attention_csv(const std::vector<AttentionRecord>& records,
                         const std::string& path) {
  std::ofstream out = open_out(path);
  out << "metric";
  for (const AttentionRecord& r : records) {
    char col[16];
    std::snprintf(col, sizeof(col), "block_%02d", r.block_index);
    out << ',' << col;
  }
  out << '\n';
  for (HighpassFilter f : all_highpass_filters()) {
    const std::string name = to_string(f);
    out << "corr_" << name;
    for (const AttentionRecord& r : records) {
      const double v = r.corr.count(name) ? r.corr.at(name)
                                          : std::numeric_limits<double>::quiet_NaN();
      out << ',' << (std::isfinite(v) ? format_fixed(v, 6) : "undefined");
    }
    out << '\n';
  }
  out << "attention_mean";
  for (const AttentionRecord& r : records) out << ',' << format_fixed(r.mean, 6);
  out << '\n';
  out << "attention_std";
  for (const AttentionRecord& r : records)
    out << ',' << format_fixed(r.std_dev, 6);
  out << '\n';
  if (!out) throw IoError("failed writing " + path);
}

nlohmann::json attention_records_to_json(
    const std::vector<AttentionRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const AttentionRecord& r : records) {
    nlohmann::json corr;
    for (const auto& [name, v] : r.corr)
      corr[name] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json();
    arr.push_back({{"block", r.block_index},
                   {"mean", r.mean},
                   {"std", r.std_dev},
                   {"correlation", corr}});
  }
  return arr;
}

void write_attention_json(const std::vector<AttentionRecord>& records,
                          const std::string& path) {
  std::ofstream out = open_out(path);
  out << attention_records_to_json(records).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

// ---- heatmap export ------------------------------------------------------------

namespace {

// [0,1] brightness ramp as a 1-channel image; save_png quantises with
// round(255 * v).
Image brightness_map(const Image& map) {
  Image out = map;
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// Diverging ramp: white at zero, toward red for positive, blue for
// negative, scaled by the max |value| of the map.
Image diverging_map(const Image& map) {
  double peak = 0.0;
  for (double v : map.data) peak = std::max(peak, std::abs(v));
  Image out{map.width, map.height, 3, {}};
  out.data.resize(static_cast<size_t>(map.width) * map.height * 3);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      const double t = peak == 0.0 ? 0.0 : map.at(y, x, 0) / peak;
      const double fade = 1.0 - std::abs(t);
      if (t >= 0.0) {
        out.at(y, x, 0) = 1.0;
        out.at(y, x, 1) = fade;
        out.at(y, x, 2) = fade;
      } else {
        out.at(y, x, 0) = fade;
        out.at(y, x, 1) = fade;
        out.at(y, x, 2) = 1.0;
      }
    }
  return out;
}

std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p))
    throw IoError("cannot create directory: " + dir);
  return p;
}

}  // namespace

void export_heatmaps(const std::vector<AttentionRecord>& records,
                     const std::string& out_dir) {
  if (records.empty())
    throw ConfigError("export_heatmaps: no records to export");
  const std::filesystem::path dir = ensure_dir(out_dir);
  for (const AttentionRecord& r : records) {
    char stem[16];
    std::snprintf(stem, sizeof(stem), "block%02d", r.block_index);
    save_png(brightness_map(r.attention_map),
             (dir / (std::string(stem) + "_attn.png")).string());
    save_png(diverging_map(r.feat_in),
             (dir / (std::string(stem) + "_feat_in.png")).string());
    save_png(diverging_map(r.feat_out),
             (dir / (std::string(stem) + "_feat_out.png")).string());
  }
}

// ---- branch-weight ranking ---------------------------------------------------

WeightRanking rank_branch_weights(Model& model,
                                  const std::vector<Image>& images, int k) {
  if (k < 1) throw ConfigError("rank_branch_weights: k must be >= 1");
  if (images.empty())
    throw ConfigError("rank_branch_weights: empty image list");

  std::vector<RankedWeight> captures;
  NoGradGuard no_grad;
  for (size_t i = 0; i < images.size(); ++i) {
    std::vector<BlockTrace> traces;
    model.forward_with_trace(image_to_tensor(expand_to_rgb(images[i])),
                             &traces);
    for (const BlockTrace& t : traces) {
      if (t.weights.pi_attn.empty() || t.attention_map.numel() == 0) continue;
      RankedWeight rw;
      rw.block_index = t.block_index + 1;
      rw.image_index = static_cast<int>(i);
      rw.pi_attn = t.weights.pi_attn.front();
      rw.attention_map = channel_mean_map(t.attention_map);
      captures.push_back(std::move(rw));
    }
  }

  if (k > static_cast<int>(captures.size())) {
    std::cerr << "rank_branch_weights: k=" << k << " clamped to "
              << captures.size() << " captures\n";
    k = static_cast<int>(captures.size());
  }

  const auto ascending = [](const RankedWeight& a, const RankedWeight& b) {
    if (a.pi_attn != b.pi_attn) return a.pi_attn < b.pi_attn;
    if (a.block_index != b.block_index) return a.block_index < b.block_index;
    return a.image_index < b.image_index;
  };
  const auto descending = [](const RankedWeight& a, const RankedWeight& b) {
    if (a.pi_attn != b.pi_attn) return a.pi_attn > b.pi_attn;
    if (a.block_index != b.block_index) return a.block_index < b.block_index;
    return a.image_index < b.image_index;
  };

  WeightRanking ranking;
  std::vector<RankedWeight> sorted = captures;
  std::sort(sorted.begin(), sorted.end(), ascending);
  ranking.lowest.assign(sorted.begin(), sorted.begin() + k);
  std::sort(sorted.begin(), sorted.end(), descending);
  ranking.highest.assign(sorted.begin(), sorted.begin() + k);
  return ranking;
}

void export_ranked_maps(const WeightRanking& ranking,
                        const std::string& out_dir) {
  const std::filesystem::path dir = ensure_dir(out_dir);
  std::ofstream csv = open_out((dir / "ranked_weights.csv").string());
  csv << "kind,rank,block,image,pi_attn\n";
  const auto dump = [&](const std::vector<RankedWeight>& list,
                        const std::string& kind) {
    for (size_t i = 0; i < list.size(); ++i) {
      const RankedWeight& rw = list[i];
      char name[48];
      std::snprintf(name, sizeof(name), "%s_%02zu_block%02d_img%03d.png",
                    kind.c_str(), i + 1, rw.block_index, rw.image_index);
      save_png(brightness_map(rw.attention_map), (dir / name).string());
      csv << kind << ',' << (i + 1) << ',' << rw.block_index << ','
          << rw.image_index << ',' << format_fixed(rw.pi_attn, 3) << '\n';
    }
  };
  dump(ranking.highest, "enhanced");
  dump(ranking.lowest, "suppressed");
  if (!csv) throw IoError("failed writing ranked_weights.csv");
}

// ---- ablation studies ----------------------------------------------------------

namespace {

struct RowPlan {
  std::string label;
  std::string detail;
  double reference_psnr;
  std::function<void(ModelConfig&)> tweak;
};

std::vector<RowPlan> plan_rows(AblationSpec::Study study) {
  using Study = AblationSpec::Study;
  if (study == Study::AttentionLocation) {
    const auto probe = [](uint32_t mask) {
      return [mask](ModelConfig& c) {
        c.kind = "probe";
        c.n_blocks = 10;
        c.attention_mask = mask;
      };
    };
    return {
        {"All", "mask=0x3ff", 28.65, probe(0x3FFu)},
        {"None", "mask=0x000", 28.60, probe(0u)},
        {"{1,2,3,4,5}", "mask=0x01f", 28.60, probe(0x01Fu)},
        {"{6,7,8,9,10}", "mask=0x3e0", 28.65, probe(0x3E0u)},
        {"{2,4,6,8,10}", "mask=0x2aa", 28.63, probe(0x2AAu)},
    };
  }
  const auto variant = [](Fusion f, int na_kernel) {
    return [f, na_kernel](ModelConfig& c) {
      c.kind = "a2n";
      c.fusion = f;
      c.non_attn_kernel = na_kernel;
      c.attention_mask = kAllBlocksMask;
    };
  };
  const auto detail = [](Fusion f, int na_kernel) {
    return "fusion=" + to_string(f) +
           " na_kernel=" + std::to_string(na_kernel);
  };
  std::vector<RowPlan> rows;
  const auto add = [&](const std::string& label, Fusion f, int na_kernel,
                       double ref) {
    rows.push_back({label, detail(f, na_kernel), ref, variant(f, na_kernel)});
  };
  add("non-attn-only", Fusion::NonAttnOnly, 3, 28.515);
  add("attn-only", Fusion::AttnOnly, 3, 28.646);
  add("addition", Fusion::Addition, 3, 28.651);
  add("concatenation", Fusion::Concatenation, 3, 28.642);
  add("adaptive-weights", Fusion::AdaptiveWeights, 3, 28.648);
  add("dynamic-1x1", Fusion::A2, 1, 28.695);
  add("dynamic-3x3", Fusion::A2, 3, 28.707);
  return rows;
}

}  // namespace

AblationTable run_ablation(const AblationSpec& spec, const Dataset& train_data,
                           const std::string& val_dir) {
  AblationTable table;
  table.title = spec.study == AblationSpec::Study::AttentionLocation
                    ? "attention_location"
                    : "fusion";
  for (const RowPlan& plan : plan_rows(spec.study)) {
    AblationRow row;
    row.label = plan.label;
    row.detail = plan.detail;
    row.reference_psnr_db = plan.reference_psnr;
    try {
      ModelConfig cfg = spec.model;
      plan.tweak(cfg);
      cfg.validate();
      row.params = param_count(cfg);
      std::unique_ptr<Model> model = build_model(cfg, spec.train.seed);
      train(*model, train_data, spec.train);
      row.psnr_db = evaluate(*model, val_dir, cfg.scale).mean_psnr;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      std::cerr << "ablation row '" << row.label << "' failed: " << e.what()
                << '\n';
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

void write_ablation_csv(const AblationTable& table, const std::string& path) {
  std::ofstream out = open_out(path);
  out << "config,detail,params,psnr_db,reference_psnr_db,status\n";
  for (const AblationRow& r : table.rows) {
    out << csv_field(r.label) << ',' << csv_field(r.detail) << ',' << r.params
        << ',' << (r.failed ? "" : format_fixed(r.psnr_db, 4)) << ','
        << format_fixed(r.reference_psnr_db, 3) << ','
        << (r.failed ? csv_field("failed: " + r.error) : "ok") << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::string format_ablation_table(const AblationTable& table) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << "ablation study: " << table.title << '\n';
  os << std::left << std::setw(18) << "config" << std::setw(34) << "detail"
     << std::right << std::setw(10) << "params" << std::setw(10) << "psnr"
     << std::setw(12) << "reference" << "  status\n";
  for (const AblationRow& r : table.rows) {
    os << std::left << std::setw(18) << r.label << std::setw(34) << r.detail
       << std::right << std::setw(10) << r.params << std::setw(10)
       << (r.failed ? std::string("-") : format_fixed(r.psnr_db, 3))
       << std::setw(12) << format_fixed(r.reference_psnr_db, 3) << "  "
       << (r.failed ? "failed: " + r.error : "ok") << '\n';
  }
  return os.str();
}

}  // namespace a2n
