#include "a2n/train.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <locale>
#include <map>
#include <sstream>

#include "a2n/errors.hpp"
#include "a2n/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace a2n {

using nlohmann::json;

// ---- configs -------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ConfigError("lr must be positive and finite");
  if (lr_halve_every < 0) throw ConfigError("lr_halve_every must be >= 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (lr_patch < 1) throw ConfigError("lr_patch must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (precision != 32 && precision != 64)
    throw ConfigError("precision must be 32 or 64, got " +
                      std::to_string(precision));
  if (loss != "L1" && loss != "L2")
    throw ConfigError("loss must be L1 or L2, got " + loss);
}

double TrainConfig::lr_at(int64_t step) const {
  const int64_t period = halve_period();
  const int64_t halvings = period > 0 ? (step - 1) / period : 0;
  return std::ldexp(lr, -static_cast<int>(std::min<int64_t>(halvings, 1000)));
}

json to_json(const ModelConfig& cfg) {
  json j;
  j["kind"] = cfg.kind;
  j["n_blocks"] = cfg.n_blocks;
  j["channels"] = cfg.channels;
  j["upsample_channels"] = cfg.upsample_channels;
  j["scale"] = cfg.scale;
  j["non_attn_kernel"] = cfg.non_attn_kernel;
  j["fusion"] = to_string(cfg.fusion);
  j["attention_mask"] = cfg.attention_mask;
  j["reduction"] = cfg.reduction;
  j["attn_logit_bias"] = cfg.attn_logit_bias;
  j["global_skip"] = cfg.global_skip;
  return j;
}

json to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["lr_halve_every"] = cfg.lr_halve_every;
  j["batch"] = cfg.batch;
  j["lr_patch"] = cfg.lr_patch;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["precision"] = cfg.precision;
  j["loss"] = cfg.loss;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") cfg.kind = value.get<std::string>();
      else if (key == "n_blocks") cfg.n_blocks = value.get<int>();
      else if (key == "channels") cfg.channels = value.get<int>();
      else if (key == "upsample_channels")
        cfg.upsample_channels = value.get<int>();
      else if (key == "scale") cfg.scale = value.get<int>();
      else if (key == "non_attn_kernel")
        cfg.non_attn_kernel = value.get<int>();
      else if (key == "fusion")
        cfg.fusion = fusion_from_string(value.get<std::string>());
      else if (key == "attention_mask")
        cfg.attention_mask = value.get<uint32_t>();
      else if (key == "reduction") cfg.reduction = value.get<int>();
      else if (key == "attn_logit_bias")
        cfg.attn_logit_bias = value.get<double>();
      else if (key == "global_skip")
        cfg.global_skip = value.get<std::string>();
      else
        throw ConfigError("unknown model config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  return cfg;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "lr_halve_every")
        cfg.lr_halve_every = value.get<int64_t>();
      else if (key == "batch") cfg.batch = value.get<int>();
      else if (key == "lr_patch") cfg.lr_patch = value.get<int>();
      else if (key == "steps") cfg.steps = value.get<int64_t>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else if (key == "precision") cfg.precision = value.get<int>();
      else if (key == "loss") cfg.loss = value.get<std::string>();
      else
        throw ConfigError("unknown train config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config value: ") + e.what());
  }
  return cfg;
}

// ---- data ----------------------------------------------------------------------

namespace {

std::string basename_of(const std::string& path) {
  return std::filesystem::path(path).filename().string();
}

}  // namespace

Dataset load_dataset(const std::string& root, int scale) {
  if (scale != 2 && scale != 3 && scale != 4)
    throw ConfigError("dataset scale must be 2, 3, or 4");
  const std::vector<std::string> hr_files = list_png_files(root + "/HR");
  const std::vector<std::string> lr_files =
      list_png_files(root + "/LRx" + std::to_string(scale));

  std::map<std::string, std::string> lr_by_name;
  for (const std::string& f : lr_files) lr_by_name[basename_of(f)] = f;

  Dataset ds;
  ds.scale = scale;
  std::vector<std::string> paired_names;
  for (const std::string& hr_path : hr_files) {
    const std::string name = basename_of(hr_path);
    auto it = lr_by_name.find(name);
    if (it == lr_by_name.end()) {
      std::cerr << "load_dataset: no LRx" << scale << " counterpart for "
                << name << ", skipping\n";
      ds.unpaired.push_back(name);
      continue;
    }
    SamplePair pair;
    pair.name = name;
    pair.hr = expand_to_rgb(load_png(hr_path));
    pair.lr = expand_to_rgb(load_png(it->second));
    if (pair.hr.width != pair.lr.width * scale ||
        pair.hr.height != pair.lr.height * scale)
      throw ShapeError("load_dataset: " + name + " is " +
                       std::to_string(pair.hr.width) + "x" +
                       std::to_string(pair.hr.height) + " HR vs " +
                       std::to_string(pair.lr.width) + "x" +
                       std::to_string(pair.lr.height) + " LR at scale " +
                       std::to_string(scale));
    paired_names.push_back(name);
    ds.pairs.push_back(std::move(pair));
    lr_by_name.erase(it);
  }
  for (const auto& [name, path] : lr_by_name) {
    std::cerr << "load_dataset: no HR counterpart for " << name
              << ", skipping\n";
    ds.unpaired.push_back(name);
  }
  if (ds.pairs.empty())
    throw ConfigError("load_dataset: no usable image pairs under " + root);
  return ds;
}

// ---- optimizer -----------------------------------------------------------------

void adam_step(std::vector<Parameter>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (state.slots.empty()) {
    state.slots.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      const size_t n = static_cast<size_t>(params[i].tensor.numel());
      state.slots[i].m.assign(n, 0.0);
      state.slots[i].v.assign(n, 0.0);
    }
  }
  if (state.slots.size() != params.size())
    throw NumericError("adam_step: optimizer state does not match the "
                       "parameter list");

  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.trainable) continue;
    if (!p.tensor.grad)
      throw NumericError("adam_step: parameter '" + p.name +
                         "' has no gradient buffer");
    AdamState::Slot& slot = state.slots[i];
    std::vector<double>& value = *p.tensor.data;
    const std::vector<double>& grad = *p.tensor.grad;
    if (grad.size() != value.size() || slot.m.size() != value.size())
      throw NumericError("adam_step: buffer size mismatch for '" + p.name +
                         "'");
    slot.t += 1;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(slot.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(slot.t));
    for (size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      slot.m[k] = beta1 * slot.m[k] + (1.0 - beta1) * g;
      slot.v[k] = beta2 * slot.v[k] + (1.0 - beta2) * g * g;
      const double m_hat = slot.m[k] / c1;
      const double v_hat = slot.v[k] / c2;
      value[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---- training loop ---------------------------------------------------------------

namespace {

Image crop_image(const Image& src, int y0, int x0, int side) {
  Image out{side, side, src.channels, {}};
  out.data.resize(static_cast<size_t>(side) * side * src.channels);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = src.at(y0 + y, x0 + x, c);
  return out;
}

void copy_into_batch(Tensor& batch, int64_t b, const Image& img) {
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        batch.at(b, c, y, x) = img.at(y, x, c);
}

}  // namespace

std::vector<StepInfo> train(Model& model, const Dataset& data,
                            const TrainConfig& cfg,
                            const std::function<void(int64_t)>& on_period,
                            int64_t period) {
  cfg.validate();
  if (data.pairs.empty()) throw ConfigError("train: empty dataset");
  if (data.scale != model.config().scale)
    throw ConfigError("train: dataset scale " + std::to_string(data.scale) +
                      " does not match model scale " +
                      std::to_string(model.config().scale));

  std::vector<size_t> eligible;
  for (size_t i = 0; i < data.pairs.size(); ++i) {
    const Image& lr_img = data.pairs[i].lr;
    if (lr_img.width >= cfg.lr_patch && lr_img.height >= cfg.lr_patch)
      eligible.push_back(i);
  }
  if (eligible.empty())
    throw ConfigError("train: every image is smaller than the " +
                      std::to_string(cfg.lr_patch) + "px training patch");

  const int64_t B = cfg.batch;
  const int p = cfg.lr_patch;
  const int s = model.config().scale;
  std::vector<Tensor> leaves;
  for (Parameter& param : model.params()) leaves.push_back(param.tensor);

  Rng rng(cfg.seed);
  AdamState state;
  std::vector<StepInfo> curve;
  curve.reserve(static_cast<size_t>(cfg.steps));

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    const double lr = cfg.lr_at(step);

    Tensor lr_batch(Shape{B, 3, p, p});
    Tensor hr_batch(Shape{B, 3, static_cast<int64_t>(p) * s,
                          static_cast<int64_t>(p) * s});
    for (int64_t b = 0; b < B; ++b) {
      const SamplePair& pair =
          data.pairs[eligible[rng.uniform_int(eligible.size())]];
      const int y0 =
          static_cast<int>(rng.uniform_int(pair.lr.height - p + 1));
      const int x0 = static_cast<int>(rng.uniform_int(pair.lr.width - p + 1));
      const int code = static_cast<int>(rng.uniform_int(8));
      PatchPair patch;
      patch.scale = s;
      patch.lr = crop_image(pair.lr, y0, x0, p);
      patch.hr = crop_image(pair.hr, y0 * s, x0 * s, p * s);
      patch = augment(patch, code);
      copy_into_batch(lr_batch, b, patch.lr);
      copy_into_batch(hr_batch, b, patch.hr);
    }

    Tensor pred = model.forward(lr_batch);
    Tensor loss = cfg.loss == "L2" ? l2_loss(pred, hr_batch)
                                   : l1_loss(pred, hr_batch);
    const double loss_value = loss.item();

    zero_grads(model.params());
    backward(loss);

    if (!std::isfinite(loss_value)) {
      double max_grad = 0.0;
      for (const Tensor& t : leaves)
        for (double g : *t.grad)
          if (!(std::abs(g) <= max_grad)) max_grad = std::abs(g);
      std::ostringstream msg;
      msg << "train: non-finite loss " << loss_value << " at step " << step
          << " (lr " << lr << ", max |grad| " << max_grad << ")";
      throw NumericError(msg.str());
    }

    adam_step(model.params(), state, lr);
    curve.push_back(StepInfo{step, loss_value, lr});

    if (on_period && period > 0 &&
        (step % period == 0 || step == cfg.steps))
      on_period(step);
  }
  return curve;
}

void write_loss_csv(const std::vector<StepInfo>& curve,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.imbue(std::locale::classic());
  out << "step,loss,lr\n";
  out << std::setprecision(17);
  for (const StepInfo& row : curve)
    out << row.step << ',' << row.loss << ',' << row.lr << '\n';
  if (!out) throw IoError("failed while writing " + path);
}

// ---- checkpoints -----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', '2', 'N', '1'};

void append_u32(std::string& buf, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void append_u64(std::string& buf, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

uint32_t crc_of(const std::string& buf, size_t len) {
  return static_cast<uint32_t>(
      ::crc32(0UL, reinterpret_cast<const Bytef*>(buf.data()),
              static_cast<uInt>(len)));
}

// Trainable parameters in lexicographic name order — the on-disk order.
std::vector<const Parameter*> sorted_params(const Model& model) {
  std::vector<const Parameter*> out;
  for (const Parameter& p : model.params())
    if (p.trainable) out.push_back(&p);
  std::sort(out.begin(), out.end(),
            [](const Parameter* a, const Parameter* b) {
              return a->name < b->name;
            });
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& tc, int64_t step,
                     const std::string& path) {
  json blob;
  blob["model"] = to_json(model.config());
  blob["train"] = to_json(tc);
  const std::string config_bytes = blob.dump();

  std::string buf;
  buf.append(kMagic, 4);
  append_u32(buf, static_cast<uint32_t>(config_bytes.size()));
  buf += config_bytes;
  append_u64(buf, static_cast<uint64_t>(step));

  for (const Parameter* p : sorted_params(model)) {
    const std::vector<double>& v = *p->tensor.data;
    if (tc.precision == 32) {
      for (double x : v) {
        const float f = static_cast<float>(x);
        char b[4];
        std::memcpy(b, &f, 4);
        buf.append(b, 4);
      }
    } else {
      const char* raw = reinterpret_cast<const char*>(v.data());
      buf.append(raw, v.size() * sizeof(double));
    }
  }
  append_u32(buf, crc_of(buf, buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed while writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof())
    throw IoError("failed while reading checkpoint " + path);

  if (buf.size() < 4 + 4 + 8 + 4)
    throw CheckpointError("truncated checkpoint: " + path);
  if (std::memcmp(buf.data(), kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path);

  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (stored_crc != crc_of(buf, buf.size() - 4))
    throw CheckpointError("checkpoint CRC mismatch in " + path);

  uint32_t json_len = 0;
  std::memcpy(&json_len, buf.data() + 4, 4);
  const size_t header_end = 8 + static_cast<size_t>(json_len);
  if (header_end + 8 + 4 > buf.size())
    throw CheckpointError("truncated checkpoint: " + path);

  json blob;
  try {
    blob = json::parse(buf.substr(8, json_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint config: ") +
                          e.what());
  }
  Checkpoint ck;
  ck.model_cfg = model_config_from_json(blob.at("model"));
  ck.train_cfg = train_config_from_json(blob.at("train"));

  uint64_t step = 0;
  std::memcpy(&step, buf.data() + header_end, 8);
  ck.step = static_cast<int64_t>(step);

  ck.net = build_model(ck.model_cfg);
  std::vector<Parameter*> order;
  for (Parameter& p : ck.net->params())
    if (p.trainable) order.push_back(&p);
  std::sort(order.begin(), order.end(),
            [](const Parameter* x, const Parameter* y) {
              return x->name < y->name;
            });
  const size_t width = ck.train_cfg.precision == 32 ? 4 : 8;
  size_t offset = header_end + 8;
  for (Parameter* p : order) {
    std::vector<double>& v = *p->tensor.data;
    const size_t need = v.size() * width;
    if (offset + need > buf.size() - 4)
      throw CheckpointError("checkpoint parameter payload too short in " +
                            path);
    if (width == 4) {
      for (size_t i = 0; i < v.size(); ++i) {
        float f = 0.0f;
        std::memcpy(&f, buf.data() + offset + i * 4, 4);
        v[i] = static_cast<double>(f);
      }
    } else {
      std::memcpy(v.data(), buf.data() + offset, need);
    }
    offset += need;
    p->tensor.zero_grad();
  }
  if (offset != buf.size() - 4)
    throw CheckpointError("checkpoint parameter payload size mismatch in " +
                          path);
  return ck;
}

TrainConfig load_checkpoint_into(Model& model, const std::string& path,
                                 int64_t* step) {
  Checkpoint ck = load_checkpoint(path);
  const ModelConfig& a = model.config();
  const ModelConfig& b = ck.model_cfg;
  std::vector<std::string> diffs;
  if (a.kind != b.kind) diffs.push_back("kind");
  if (a.n_blocks != b.n_blocks) diffs.push_back("n_blocks");
  if (a.channels != b.channels) diffs.push_back("channels");
  if (a.upsample_channels != b.upsample_channels)
    diffs.push_back("upsample_channels");
  if (a.scale != b.scale) diffs.push_back("scale");
  if (a.non_attn_kernel != b.non_attn_kernel)
    diffs.push_back("non_attn_kernel");
  if (a.fusion != b.fusion) diffs.push_back("fusion");
  if (a.attention_mask != b.attention_mask) diffs.push_back("attention_mask");
  if (a.reduction != b.reduction) diffs.push_back("reduction");
  if (a.attn_logit_bias != b.attn_logit_bias)
    diffs.push_back("attn_logit_bias");
  if (a.global_skip != b.global_skip) diffs.push_back("global_skip");
  if (!diffs.empty()) {
    std::string msg = "checkpoint config mismatch in fields:";
    for (const std::string& d : diffs) msg += " " + d;
    throw CheckpointError(msg);
  }
  for (Parameter& p : model.params()) {
    Parameter* src = ck.net->find_param(p.name);
    if (!src || src->tensor.numel() != p.tensor.numel())
      throw CheckpointError("checkpoint parameter set mismatch at '" +
                            p.name + "'");
    *p.tensor.data = *src->tensor.data;
    p.tensor.zero_grad();
  }
  if (step) *step = ck.step;
  return ck.train_cfg;
}

}  // namespace a2n
