#pragma once

#include <string>
#include <vector>

#include "a2n/model.hpp"
#include "a2n/train.hpp"
#include "json.hpp"

namespace a2n::cli {

// Everything a run needs, merged from defaults, the --config file, and
// dotted command-line overrides. Unknown keys anywhere are a config error.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  // paths
  std::string train_dir;         // <dir>/HR + <dir>/LRx<scale>
  std::string val_dir;           // same layout, held-out pairs
  std::string out_dir = "out";   // artifacts land here

  // prepare
  std::string prepare_hr_dir;    // source high-resolution PNGs
  int prepare_scale = 0;         // 0 -> model.scale
  std::string prepare_out_dir;   // "" -> paths.out_dir

  // eval
  std::string eval_checkpoint;   // "" -> freshly initialized model

  // analyze
  std::string analyze_checkpoint;  // "" -> freshly initialized model
  std::string analyze_images_dir;  // "" -> <paths.val_dir>/LRx<scale>
  int analyze_top_k = 3;

  // ablate
  std::string ablate_study = "fusion";  // "fusion" | "attention_location"

  // gradcheck
  double gradcheck_epsilon = 1e-5;
  double gradcheck_tolerance = 1e-5;
  int gradcheck_coords = 4;  // finite-difference coordinates per parameter
};

// Parses the layered JSON ({model, train, paths, prepare, eval, analyze,
// ablate, gradcheck}, all sections optional) and validates the result.
RunConfig run_config_from_json(const nlohmann::json& j);

// Full echo of every effective value, sections ordered alphabetically.
nlohmann::json to_json(const RunConfig& rc);

// Entry point behind the `a2n` binary. args excludes the program name,
// e.g. {"train", "--config", "run.json", "--train.steps", "100"}.
// Exit codes: 0 success, 2 configuration or usage errors, 3 checkpoint
// integrity failures and gradient checks over tolerance, 1 anything else.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace a2n::cli
