#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "a2n/tensor.hpp"

namespace a2n {

// How the two branch outputs of a block are combined.
//   A2              input-dependent sum-to-one weights from the dynamic
//                   attention module, then a 1x1 conv
//   Addition        plain sum, then a 1x1 conv
//   Concatenation   channel concat, then a 1x1 conv (2C -> C)
//   AdaptiveWeights two free trainable scalars (no softmax, no input
//                   dependence), then a 1x1 conv
//   AttnOnly        attention branch alone
//   NonAttnOnly     non-attention branch alone
enum class Fusion { A2, Addition, Concatenation, AdaptiveWeights, AttnOnly,
                    NonAttnOnly };

std::string to_string(Fusion f);
Fusion fusion_from_string(const std::string& s);

inline constexpr uint32_t kAllBlocksMask = 0xFFFFFFFFu;

struct ModelConfig {
  std::string kind = "a2n";  // "a2n" | "probe"
  int n_blocks = 16;
  int channels = 40;           // trunk width C
  int upsample_channels = 24;  // reconstruction width
  int scale = 4;               // in {2, 3, 4}
  int non_attn_kernel = 3;     // 3 (standard) or 1 (the mobile variant)
  Fusion fusion = Fusion::A2;
  // Probe model only: bit i keeps block i's attention generator.
  uint32_t attention_mask = kAllBlocksMask;
  int reduction = 4;  // bottleneck ratio of the dynamic attention module
  // Added to the attention logit before the softmax; -40 starves the
  // attention branch to numerically nothing.
  double attn_logit_bias = 0.0;
  std::string global_skip = "bilinear";  // or "nearest"

  void validate() const;  // throws ConfigError
  bool enabled(int block) const {
    return (attention_mask >> block) & 1u;
  }
  bool operator==(const ModelConfig&) const = default;
};

// Per-sample branch mixing weights. Empty vectors mean the block has no
// dynamic weighting (every fusion mode except A2 / AdaptiveWeights).
struct DynamicWeights {
  std::vector<double> pi_na, pi_attn;
};

// Captured per-block state from a traced forward pass. Tensors are detached
// copies; attention_map has numel 0 for blocks without a gate.
struct BlockTrace {
  int block_index = 0;
  DynamicWeights weights;
  Tensor attention_map;  // post-sigmoid gate, (B, C, H, W)
  Tensor feat_in;        // block input
  Tensor feat_out;       // block output
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~Model() = default;

  // Input is (B, 3, H, W) in [0, 1]; output is (B, 3, H*s, W*s), unclamped.
  Tensor forward(const Tensor& input) {
    return forward_with_trace(input, nullptr);
  }
  virtual Tensor forward_with_trace(const Tensor& input,
                                    std::vector<BlockTrace>* traces) = 0;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter* find_param(const std::string& name);
  int64_t param_count() const;

  // Kaiming fan-in normals for weights, zeros for biases. Two designated
  // layers are zeroed instead: the final layer of every dynamic attention
  // module (training starts at pi = (0.5, 0.5)) and the reconstruction's
  // final conv (a fresh network starts exactly at its global skip, so the
  // residual path grows from zero rather than fighting a hot start).
  // Deterministic in seed.
  void init_params(uint64_t seed);

 protected:
  void add_param(const std::string& name, Shape shape);
  bool is_zero_init(const std::string& name) const;
  // Tensor of a registered parameter; throws on unknown names.
  const Tensor& p(const std::string& name) const;

  // Stages shared by both architectures.
  Tensor head_forward(const Tensor& input);
  Tensor tail_forward(const Tensor& x);
  Tensor skip_forward(const Tensor& input);
  void add_head_tail_params();

  ModelConfig cfg_;
  std::vector<Parameter> params_;  // registration order is iteration order
  std::unordered_map<std::string, size_t> index_;
};

class A2nModel : public Model {
 public:
  explicit A2nModel(ModelConfig cfg, uint64_t seed = 1);
  Tensor forward_with_trace(const Tensor& input,
                            std::vector<BlockTrace>* traces) override;

 private:
  Tensor block_forward(const Tensor& x, int index, std::vector<BlockTrace>*);
};

// The 10-block residual attention network used for the per-depth attention
// study. Disabled blocks drop the attention generator entirely.
class ProbeModel : public Model {
 public:
  explicit ProbeModel(ModelConfig cfg, uint64_t seed = 1);
  Tensor forward_with_trace(const Tensor& input,
                            std::vector<BlockTrace>* traces) override;
};

std::unique_ptr<Model> build_model(const ModelConfig& cfg, uint64_t seed = 1);
std::unique_ptr<Model> build_probe_model(uint32_t enabled_mask,
                                         ModelConfig cfg = {},
                                         uint64_t seed = 1);

// Exact trainable-scalar count for a config, computed arithmetically
// (cross-checked against built models in tests).
int64_t param_count(const ModelConfig& cfg);

}  // namespace a2n
