#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "a2n/image.hpp"
#include "a2n/model.hpp"
#include "json.hpp"

namespace a2n {

struct TrainConfig {
  double lr = 5e-4;
  // Steps between halvings of the learning rate; 0 means steps / 4
  // (i.e. halve at each quarter of the run).
  int64_t lr_halve_every = 0;
  int batch = 16;
  int lr_patch = 48;  // square patch side, low-resolution pixels
  int64_t steps = 5000;
  uint64_t seed = 1;
  int precision = 64;       // checkpoint storage width: 32 or 64 bits
  std::string loss = "L1";  // "L1" | "L2"

  void validate() const;  // throws ConfigError
  bool operator==(const TrainConfig&) const = default;

  int64_t halve_period() const {
    return lr_halve_every > 0 ? lr_halve_every
                              : (steps >= 4 ? steps / 4 : steps + 1);
  }
  // Learning rate in effect at a 1-based step.
  double lr_at(int64_t step) const;
};

// JSON (de)serialization for the two config types. Readers start from the
// defaults, apply the given keys, and reject unknown keys.
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

// ---- data --------------------------------------------------------------------

struct SamplePair {
  std::string name;  // shared file name of the pair
  Image hr, lr;
};

struct Dataset {
  int scale = 2;
  std::vector<SamplePair> pairs;
  std::vector<std::string> unpaired;  // files present on only one side
};

// Loads <root>/HR/*.png paired by file name with <root>/LRx<scale>/*.png.
// Unpaired files are reported to stderr and skipped; an empty result is a
// config error.
Dataset load_dataset(const std::string& root, int scale);

// ---- optimizer ----------------------------------------------------------------

struct AdamState {
  struct Slot {
    std::vector<double> m, v;
    int64_t t = 0;
  };
  std::vector<Slot> slots;  // parallel to the parameter list
};

// One Adam update with bias correction over every trainable parameter.
// Gradients must be populated (backward() has run); missing gradient
// buffers are an error.
void adam_step(std::vector<Parameter>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---- training loop -------------------------------------------------------------

struct StepInfo {
  int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

// Deterministic training: patch sampling, augmentation, and every update
// derive from cfg.seed alone. `on_period`, when given, fires every `period`
// steps (and after the final step). A non-finite loss aborts with a
// diagnostic carrying step, learning rate, and max |grad|.
std::vector<StepInfo> train(
    Model& model, const Dataset& data, const TrainConfig& cfg,
    const std::function<void(int64_t step)>& on_period = nullptr,
    int64_t period = 0);

void write_loss_csv(const std::vector<StepInfo>& curve,
                    const std::string& path);

// ---- checkpoints ----------------------------------------------------------------

// Binary layout: the magic "A2N1", then a 32-bit little-endian length and
// that many bytes of UTF-8 JSON holding both configs, a 64-bit
// little-endian step counter, every trainable array in lexicographic name
// order as little-endian IEEE-754 of the configured width, and a trailing
// CRC-32 of all preceding bytes.
void save_checkpoint(const Model& model, const TrainConfig& tc, int64_t step,
                     const std::string& path);

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  int64_t step = 0;
  std::unique_ptr<Model> net;  // rebuilt from the config, weights loaded
};

// Verifies magic and CRC, reconstructs the model, and loads the weights.
Checkpoint load_checkpoint(const std::string& path);

// Loads weights into an existing model; the stored model config must equal
// the model's, otherwise the error lists the differing fields.
TrainConfig load_checkpoint_into(Model& model, const std::string& path,
                                 int64_t* step = nullptr);

}  // namespace a2n
