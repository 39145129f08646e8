#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "a2n/image.hpp"
#include "a2n/metrics.hpp"
#include "a2n/model.hpp"
#include "a2n/train.hpp"
#include "json.hpp"

namespace a2n {

// ---- high-pass filters -----------------------------------------------------

// Classic 3x3 edge detectors used to characterise what the attention maps
// respond to. Every kernel has zero DC response (coefficients sum to 0).
enum class HighpassFilter { Laplace, Scharr, Sobel };

std::string to_string(HighpassFilter f);
HighpassFilter highpass_filter_from_string(const std::string& s);
const std::vector<HighpassFilter>& all_highpass_filters();

// High-pass response of a single-channel map, same size as the input,
// boundaries handled by edge clamping. Laplace is |convolution with
// [[0,1,0],[1,-4,1],[0,1,0]]| unless signed_output is set; Sobel and Scharr
// are the gradient magnitude sqrt(Gx^2 + Gy^2) of the canonical horizontal
// kernels ([[-1,0,1],[-2,0,2],[-1,0,1]] resp. [[-3,0,3],[-10,0,10],[-3,0,3]])
// and their transposes, so signed_output has no effect on them.
Image highpass(const Image& map, HighpassFilter filter,
               bool signed_output = false);

// Sample Pearson correlation of two equal-length (>= 2) value lists,
// clamped into [-1, 1]. A constant argument has no defined correlation and
// raises NumericError; table writers report that case as "undefined".
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// ---- per-block attention statistics ------------------------------------------

// Aggregated view of one block's attention behaviour over an image set.
// Correlations with no defined value on any image are NaN ("undefined").
// The retained maps come from the first image of the set.
struct AttentionRecord {
  int block_index = 0;   // 1-based, as displayed in tables and file names
  double mean = 0.0;     // attention coefficient mean, averaged over images
  double std_dev = 0.0;  // within-map population std, averaged over images
  // filter name -> Pearson r between the channel-averaged attention map and
  // the high-pass of the channel-averaged block input, averaged over the
  // images where it is defined.
  std::map<std::string, double> corr;
  Image attention_map;  // channel-averaged gate, values in [0, 1]
  Image feat_in;        // channel-averaged block input
  Image feat_out;       // channel-averaged block output
};

// Mean over channels of one batch entry, as a single-channel map.
Image channel_mean_map(const Tensor& t, int64_t batch_index = 0);

// Runs a traced forward pass per image and gathers per-block statistics for
// every block that owns an attention gate. Grayscale images are expanded to
// RGB. A model with no attention anywhere yields an empty list and a
// warning on stderr; an empty image list is a ConfigError.
std::vector<AttentionRecord> attention_stats(Model& model,
                                             const std::vector<Image>& images);

// One CSV in the correlation-table layout: metric rows (corr_<filter>,
// attention_mean, attention_std) by block columns; undefined correlations
// print as "undefined".
void write_attention_csv(const std::vector<AttentionRecord>& records,
                         const std::string& path);

// Scalar fields of the records (maps are exported separately as PNGs);
// undefined correlations become JSON null.
nlohmann::json attention_records_to_json(
    const std::vector<AttentionRecord>& records);
void write_attention_json(const std::vector<AttentionRecord>& records,
                          const std::string& path);

// One PNG per (block, kind) into out_dir, named
// block{index:02}_{attn|feat_in|feat_out}.png. Attention maps use a
// brightness ramp: gray level round(255 * v) after clamping into [0, 1], so
// 0 is black, 0.5 is gray 128, and 1 is full white. Feature maps use a
// diverging ramp normalised by the map's max |value|: zero is white,
// positive values shade toward pure red, negative toward pure blue; an
// all-zero map is pure white. Empty record lists are a ConfigError;
// unwritable directories an IoError.
void export_heatmaps(const std::vector<AttentionRecord>& records,
                     const std::string& out_dir);

// ---- branch-weight ranking ---------------------------------------------------

// One traced (image, block) capture of the dynamic branch weighting.
struct RankedWeight {
  int block_index = 0;  // 1-based
  int image_index = 0;  // position in the input image list
  double pi_attn = 0.0;
  Image attention_map;  // channel-averaged gate for this capture
};

struct WeightRanking {
  // k largest pi_attn, descending, then k smallest, ascending. Ties are
  // broken by (block_index, image_index) ascending in both lists.
  std::vector<RankedWeight> highest;
  std::vector<RankedWeight> lowest;
};

// Collects every (image, block) pair that produced both dynamic weights and
// an attention gate, totally orders the captures by pi_attn, and returns
// the k extremes on each end. k < 1 is a ConfigError; k larger than the
// number of captures is clamped with a warning on stderr.
WeightRanking rank_branch_weights(Model& model,
                                  const std::vector<Image>& images, int k);

// PNGs {enhanced|suppressed}_{rank:02}_block{index:02}_img{image:03}.png on
// the brightness ramp, plus ranked_weights.csv listing kind, rank, block,
// image, and the weight printed to 3 decimals.
void export_ranked_maps(const WeightRanking& ranking,
                        const std::string& out_dir);

// ---- ablation studies ----------------------------------------------------------

// Which sweep to run: attention placed in a subset of the 10 probe blocks,
// or the branch/fusion variants of the main network.
struct AblationSpec {
  enum class Study { AttentionLocation, Fusion };
  Study study = Study::Fusion;
  ModelConfig model;  // base configuration; each row overrides its own axis
  TrainConfig train;  // shared across rows (one seed for the whole sweep)
};

struct AblationRow {
  std::string label;   // display name of the configuration
  std::string detail;  // the overridden axis, e.g. "fusion=A2 na_kernel=3"
  int64_t params = 0;  // trainable scalar count
  double psnr_db = std::numeric_limits<double>::quiet_NaN();
  // Result originally reported for this configuration at full scale
  // (x4, Set14-style evaluation); displayed for context, never a target
  // for the reduced-scale runs this harness performs.
  double reference_psnr_db = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  std::string error;  // failure reason when failed
};

struct AblationTable {
  std::string title;  // "attention_location" | "fusion"
  std::vector<AblationRow> rows;
};

// Builds, trains, and evaluates one model per row of the chosen study:
// attention-location masks {All, None, {1..5}, {6..10}, {2,4,6,8,10}} over
// a 10-block probe, or the fusion variants {non-attention-only,
// attention-only, Addition, Concatenation, AdaptiveWeights, and the dynamic
// two-branch network with 3x3 and 1x1 non-attention kernels}. Every row
// shares train's seed for init and sampling. A failing row is marked
// failed (message retained, NaN score) and the sweep continues.
AblationTable run_ablation(const AblationSpec& spec, const Dataset& train_data,
                           const std::string& val_dir);

// CSV columns: config, detail, params, psnr_db, reference_psnr_db, status.
// Fields containing commas or quotes are double-quoted.
void write_ablation_csv(const AblationTable& table, const std::string& path);

// Fixed-width text rendering of the same table for terminal output.
std::string format_ablation_table(const AblationTable& table);

}  // namespace a2n
