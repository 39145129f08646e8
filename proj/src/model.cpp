#include "a2n/model.hpp"

#include <cmath>

#include "a2n/errors.hpp"
#include "a2n/rng.hpp"

namespace a2n {

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::A2: return "A2";
    case Fusion::Addition: return "Addition";
    case Fusion::Concatenation: return "Concatenation";
    case Fusion::AdaptiveWeights: return "AdaptiveWeights";
    case Fusion::AttnOnly: return "AttnOnly";
    case Fusion::NonAttnOnly: return "NonAttnOnly";
  }
  return "A2";
}

Fusion fusion_from_string(const std::string& s) {
  if (s == "A2") return Fusion::A2;
  if (s == "Addition") return Fusion::Addition;
  if (s == "Concatenation") return Fusion::Concatenation;
  if (s == "AdaptiveWeights") return Fusion::AdaptiveWeights;
  if (s == "AttnOnly") return Fusion::AttnOnly;
  if (s == "NonAttnOnly") return Fusion::NonAttnOnly;
  throw ConfigError("unknown fusion mode: " + s);
}

void ModelConfig::validate() const {
  if (kind != "a2n" && kind != "probe")
    throw ConfigError("model kind must be a2n or probe, got " + kind);
  if (n_blocks < 1 || n_blocks > 32)
    throw ConfigError("n_blocks must be in 1..32, got " +
                      std::to_string(n_blocks));
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (upsample_channels < 1)
    throw ConfigError("upsample_channels must be >= 1");
  if (scale != 2 && scale != 3 && scale != 4)
    throw ConfigError("scale must be 2, 3, or 4, got " +
                      std::to_string(scale));
  if (non_attn_kernel != 1 && non_attn_kernel != 3)
    throw ConfigError("non_attn_kernel must be 1 or 3");
  if (reduction < 1) throw ConfigError("reduction must be >= 1");
  if (kind == "a2n" && channels % reduction != 0)
    throw ConfigError("channels (" + std::to_string(channels) +
                      ") must be divisible by reduction (" +
                      std::to_string(reduction) + ")");
  if (global_skip != "bilinear" && global_skip != "nearest")
    throw ConfigError("global_skip must be bilinear or nearest, got " +
                      global_skip);
}

// ---- parameter registry -----------------------------------------------------

void Model::add_param(const std::string& name, Shape shape) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter{name, Tensor(shape, /*requires_grad=*/true),
                              /*trainable=*/true});
}

const Tensor& Model::p(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].tensor;
}

Parameter* Model::find_param(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const Parameter& p : params_)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

bool Model::is_zero_init(const std::string& name) const {
  // Two designated layers start at zero: the dynamic attention module's
  // last layer, so the softmax opens at (0.5, 0.5), and the reconstruction's
  // final conv, so a fresh network computes exactly its global skip. Without
  // the latter the randomly-initialized residual path dwarfs the image,
  // and the first optimizer steps silence it by saturating the tail's
  // sigmoid gate shut - a state gradient descent cannot leave.
  return name.find(".da.fc2.") != std::string::npos ||
         name.rfind("tail.conv2.", 0) == 0;
}

void Model::init_params(uint64_t seed) {
  Rng rng(seed);
  for (Parameter& param : params_) {
    Tensor& t = param.tensor;
    std::vector<double>& v = *t.data;
    if (param.name.size() > 5 &&
        param.name.compare(param.name.size() - 5, 5, ".bias") == 0) {
      std::fill(v.begin(), v.end(), 0.0);
    } else if (is_zero_init(param.name)) {
      std::fill(v.begin(), v.end(), 0.0);
    } else if (param.name.size() > 12 &&
               param.name.compare(param.name.size() - 12, 12,
                                  ".mix.weights") == 0) {
      std::fill(v.begin(), v.end(), 0.5);  // unbiased starting mix
    } else {
      // Kaiming fan-in scaling: fan_in = in_c * kh * kw.
      const double fan_in =
          static_cast<double>(t.shape.c * t.shape.h * t.shape.w);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (double& x : v) x = rng.normal(0.0, stddev);
    }
    t.zero_grad();
  }
}

// ---- shared stages ------------------------------------------------------------

void Model::add_head_tail_params() {
  const int64_t C = cfg_.channels, U = cfg_.upsample_channels;
  add_param("head.weight", Shape{C, 3, 3, 3});
  add_param("head.bias", Shape{1, C, 1, 1});
  add_param("tail.conv1.weight", Shape{U, C, 3, 3});
  add_param("tail.conv1.bias", Shape{1, U, 1, 1});
  add_param("tail.gate.weight", Shape{U, U, 1, 1});
  add_param("tail.gate.bias", Shape{1, U, 1, 1});
  add_param("tail.conv2.weight", Shape{3, U, 3, 3});
  add_param("tail.conv2.bias", Shape{1, 3, 1, 1});
}

Tensor Model::head_forward(const Tensor& input) {
  if (input.shape.c != 3)
    throw ShapeError("model input must have 3 channels, got " +
                     input.shape.str());
  return conv2d(input, p("head.weight"), p("head.bias"), 1, 1);
}

Tensor Model::tail_forward(const Tensor& x) {
  Tensor up = nearest_upsample(x, cfg_.scale);
  Tensor t1 = conv2d(up, p("tail.conv1.weight"), p("tail.conv1.bias"), 1, 1);
  Tensor gate = sigmoid(conv2d(t1, p("tail.gate.weight"),
                               p("tail.gate.bias"), 1, 0));
  Tensor gated = mul(t1, gate);
  return conv2d(gated, p("tail.conv2.weight"), p("tail.conv2.bias"), 1, 1);
}

Tensor Model::skip_forward(const Tensor& input) {
  return cfg_.global_skip == "nearest"
             ? nearest_upsample(input, cfg_.scale)
             : bilinear_upsample(input, cfg_.scale);
}

// ---- main architecture ----------------------------------------------------------

A2nModel::A2nModel(ModelConfig cfg, uint64_t seed) : Model(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.kind != "a2n")
    throw ConfigError("A2nModel requires kind=a2n, got " + cfg_.kind);
  const int64_t C = cfg_.channels;
  const Fusion f = cfg_.fusion;

  add_head_tail_params();
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string pre = "block." + std::to_string(i) + ".";
    if (f != Fusion::AttnOnly) {
      const int64_t k = cfg_.non_attn_kernel;
      add_param(pre + "na.weight", Shape{C, C, k, k});
      add_param(pre + "na.bias", Shape{1, C, 1, 1});
    }
    if (f != Fusion::NonAttnOnly) {
      add_param(pre + "attn.conv1.weight", Shape{C, C, 3, 3});
      add_param(pre + "attn.conv1.bias", Shape{1, C, 1, 1});
      add_param(pre + "attn.conv2.weight", Shape{C, C, 3, 3});
      add_param(pre + "attn.conv2.bias", Shape{1, C, 1, 1});
      add_param(pre + "attn.gate.weight", Shape{C, C, 1, 1});
      add_param(pre + "attn.gate.bias", Shape{1, C, 1, 1});
    }
    if (f == Fusion::A2) {
      const int64_t mid = C / cfg_.reduction;
      add_param(pre + "da.fc1.weight", Shape{mid, C, 1, 1});
      add_param(pre + "da.fc1.bias", Shape{1, mid, 1, 1});
      add_param(pre + "da.fc2.weight", Shape{2, mid, 1, 1});
      add_param(pre + "da.fc2.bias", Shape{1, 2, 1, 1});
    }
    if (f == Fusion::AdaptiveWeights) {
      add_param(pre + "mix.weights", Shape{1, 2, 1, 1});
    }
    const int64_t fuse_in = f == Fusion::Concatenation ? 2 * C : C;
    add_param(pre + "fuse.weight", Shape{C, fuse_in, 1, 1});
    add_param(pre + "fuse.bias", Shape{1, C, 1, 1});
  }
  init_params(seed);
}

Tensor A2nModel::block_forward(const Tensor& x, int index,
                               std::vector<BlockTrace>* traces) {
  const std::string pre = "block." + std::to_string(index) + ".";
  const Fusion f = cfg_.fusion;

  Tensor x_na, x_attn, gate;
  if (f != Fusion::AttnOnly) {
    const int pad = (cfg_.non_attn_kernel - 1) / 2;
    x_na = relu(conv2d(x, p(pre + "na.weight"), p(pre + "na.bias"), 1, pad));
  }
  if (f != Fusion::NonAttnOnly) {
    Tensor feat = conv2d(
        relu(conv2d(x, p(pre + "attn.conv1.weight"),
                    p(pre + "attn.conv1.bias"), 1, 1)),
        p(pre + "attn.conv2.weight"), p(pre + "attn.conv2.bias"), 1, 1);
    gate = sigmoid(
        conv2d(x, p(pre + "attn.gate.weight"), p(pre + "attn.gate.bias"), 1,
               0));
    x_attn = mul(feat, gate);
  }

  Tensor fused;
  DynamicWeights weights;
  switch (f) {
    case Fusion::A2: {
      Tensor pooled = global_avg_pool(x);
      Tensor hidden = relu(
          linear(pooled, p(pre + "da.fc1.weight"), p(pre + "da.fc1.bias")));
      Tensor logits =
          linear(hidden, p(pre + "da.fc2.weight"), p(pre + "da.fc2.bias"));
      if (cfg_.attn_logit_bias != 0.0) {
        std::vector<double> bias_vals(static_cast<size_t>(x.shape.b) * 2, 0.0);
        for (int64_t b = 0; b < x.shape.b; ++b)
          bias_vals[b * 2 + 1] = cfg_.attn_logit_bias;
        logits = add(logits, Tensor::from(Shape{x.shape.b, 2, 1, 1},
                                          std::move(bias_vals)));
      }
      Tensor pi = softmax_channels(logits);
      Tensor pi_na = slice_channels(pi, 0, 1);
      Tensor pi_attn = slice_channels(pi, 1, 1);
      fused = add(mul(x_na, pi_na), mul(x_attn, pi_attn));
      if (traces) {
        for (int64_t b = 0; b < x.shape.b; ++b) {
          weights.pi_na.push_back((*pi.data)[b * 2]);
          weights.pi_attn.push_back((*pi.data)[b * 2 + 1]);
        }
      }
      break;
    }
    case Fusion::Addition:
      fused = add(x_na, x_attn);
      break;
    case Fusion::Concatenation:
      fused = concat_channels(x_na, x_attn);
      break;
    case Fusion::AdaptiveWeights: {
      const Tensor& mix = p(pre + "mix.weights");
      fused = add(mul(x_na, slice_channels(mix, 0, 1)),
                  mul(x_attn, slice_channels(mix, 1, 1)));
      if (traces) {
        for (int64_t b = 0; b < x.shape.b; ++b) {
          weights.pi_na.push_back((*mix.data)[0]);
          weights.pi_attn.push_back((*mix.data)[1]);
        }
      }
      break;
    }
    case Fusion::AttnOnly:
      fused = x_attn;
      break;
    case Fusion::NonAttnOnly:
      fused = x_na;
      break;
  }

  Tensor mixed = conv2d(fused, p(pre + "fuse.weight"), p(pre + "fuse.bias"),
                        1, 0);
  Tensor out = add(mixed, x);

  if (traces) {
    BlockTrace t;
    t.block_index = index;
    t.weights = std::move(weights);
    if (f != Fusion::NonAttnOnly) t.attention_map = gate.detached_copy();
    t.feat_in = x.detached_copy();
    t.feat_out = out.detached_copy();
    traces->push_back(std::move(t));
  }
  return out;
}

Tensor A2nModel::forward_with_trace(const Tensor& input,
                                    std::vector<BlockTrace>* traces) {
  Tensor x = head_forward(input);
  for (int i = 0; i < cfg_.n_blocks; ++i) x = block_forward(x, i, traces);
  return add(tail_forward(x), skip_forward(input));
}

// ---- probe network -----------------------------------------------------------

ProbeModel::ProbeModel(ModelConfig cfg, uint64_t seed) : Model(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.kind != "probe")
    throw ConfigError("ProbeModel requires kind=probe, got " + cfg_.kind);
  const int64_t C = cfg_.channels;

  add_head_tail_params();
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string pre = "block." + std::to_string(i) + ".";
    add_param(pre + "conv1.weight", Shape{C, C, 3, 3});
    add_param(pre + "conv1.bias", Shape{1, C, 1, 1});
    add_param(pre + "conv2.weight", Shape{C, C, 3, 3});
    add_param(pre + "conv2.bias", Shape{1, C, 1, 1});
    if (cfg_.enabled(i)) {
      add_param(pre + "gate.weight", Shape{C, C, 1, 1});
      add_param(pre + "gate.bias", Shape{1, C, 1, 1});
    }
  }
  init_params(seed);
}

Tensor ProbeModel::forward_with_trace(const Tensor& input,
                                      std::vector<BlockTrace>* traces) {
  Tensor x = head_forward(input);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string pre = "block." + std::to_string(i) + ".";
    Tensor feat = conv2d(
        relu(conv2d(x, p(pre + "conv1.weight"), p(pre + "conv1.bias"), 1, 1)),
        p(pre + "conv2.weight"), p(pre + "conv2.bias"), 1, 1);
    Tensor gate;
    if (cfg_.enabled(i)) {
      gate = sigmoid(
          conv2d(x, p(pre + "gate.weight"), p(pre + "gate.bias"), 1, 0));
      feat = mul(feat, gate);
    }
    Tensor out = add(feat, x);
    if (traces) {
      BlockTrace t;
      t.block_index = i;
      if (cfg_.enabled(i)) t.attention_map = gate.detached_copy();
      t.feat_in = x.detached_copy();
      t.feat_out = out.detached_copy();
      traces->push_back(std::move(t));
    }
    x = out;
  }
  return add(tail_forward(x), skip_forward(input));
}

// ---- factories / accounting ------------------------------------------------------

std::unique_ptr<Model> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (cfg.kind == "probe")
    return std::make_unique<ProbeModel>(cfg, seed);
  return std::make_unique<A2nModel>(cfg, seed);
}

std::unique_ptr<Model> build_probe_model(uint32_t enabled_mask,
                                         ModelConfig cfg, uint64_t seed) {
  cfg.kind = "probe";
  if (cfg.n_blocks == 16) cfg.n_blocks = 10;  // probe default depth
  cfg.attention_mask = enabled_mask;
  return std::make_unique<ProbeModel>(cfg, seed);
}

int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t C = cfg.channels, U = cfg.upsample_channels;
  auto conv = [](int64_t out, int64_t in, int64_t k) {
    return out * in * k * k + out;
  };

  int64_t n = conv(C, 3, 3);                              // head
  n += conv(U, C, 3) + conv(U, U, 1) + conv(3, U, 3);     // tail

  for (int i = 0; i < cfg.n_blocks; ++i) {
    if (cfg.kind == "probe") {
      n += 2 * conv(C, C, 3);
      if (cfg.enabled(i)) n += conv(C, C, 1);
      continue;
    }
    const Fusion f = cfg.fusion;
    if (f != Fusion::AttnOnly) n += conv(C, C, cfg.non_attn_kernel);
    if (f != Fusion::NonAttnOnly) n += 2 * conv(C, C, 3) + conv(C, C, 1);
    if (f == Fusion::A2) {
      const int64_t mid = C / cfg.reduction;
      n += mid * C + mid + 2 * mid + 2;
    }
    if (f == Fusion::AdaptiveWeights) n += 2;
    n += conv(C, f == Fusion::Concatenation ? 2 * C : C, 1);
  }
  return n;
}

}  // namespace a2n
