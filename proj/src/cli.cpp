#include "a2n/cli.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "a2n/analysis.hpp"
#include "a2n/errors.hpp"
#include "a2n/image.hpp"
#include "a2n/kernels.hpp"
#include "a2n/metrics.hpp"
#include "a2n/rng.hpp"
#include "a2n/tensor.hpp"

namespace a2n::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config loading --------------------------------------------------------

json parse_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
  if (!j.is_object())
    throw ConfigError("config root must be a JSON object: " + path);
  return j;
}

// Values given on the command line carry no type markers; interpret them as
// JSON when possible and fall back to a bare string ("probe", file paths).
json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

void apply_override(json& root, const std::string& key,
                    const std::string& value) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : key) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  for (const std::string& p : parts)
    if (p.empty()) throw ConfigError("bad override key: --" + key);
  json* node = &root;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object())
      throw ConfigError("override --" + key + " descends into a non-object");
    node = &next;
  }
  (*node)[parts.back()] = parse_override_value(value);
}

void read_paths(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "train_dir") rc.train_dir = value.get<std::string>();
      else if (key == "val_dir") rc.val_dir = value.get<std::string>();
      else if (key == "out_dir") rc.out_dir = value.get<std::string>();
      else
        throw ConfigError("unknown paths key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad paths value: ") + e.what());
  }
}

void read_prepare(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "hr_dir") rc.prepare_hr_dir = value.get<std::string>();
      else if (key == "scale") rc.prepare_scale = value.get<int>();
      else if (key == "out_dir") rc.prepare_out_dir = value.get<std::string>();
      else
        throw ConfigError("unknown prepare key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad prepare value: ") + e.what());
  }
}

void read_eval(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "checkpoint") rc.eval_checkpoint = value.get<std::string>();
      else
        throw ConfigError("unknown eval key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad eval value: ") + e.what());
  }
}

void read_analyze(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "checkpoint") rc.analyze_checkpoint = value.get<std::string>();
      else if (key == "images_dir")
        rc.analyze_images_dir = value.get<std::string>();
      else if (key == "top_k") rc.analyze_top_k = value.get<int>();
      else
        throw ConfigError("unknown analyze key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad analyze value: ") + e.what());
  }
}

void read_ablate(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "study") rc.ablate_study = value.get<std::string>();
      else
        throw ConfigError("unknown ablate key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad ablate value: ") + e.what());
  }
}

void read_gradcheck(const json& j, RunConfig& rc) {
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epsilon") rc.gradcheck_epsilon = value.get<double>();
      else if (key == "tolerance")
        rc.gradcheck_tolerance = value.get<double>();
      else if (key == "coords_per_param")
        rc.gradcheck_coords = value.get<int>();
      else
        throw ConfigError("unknown gradcheck key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad gradcheck value: ") + e.what());
  }
}

// ---- run context -------------------------------------------------------------

struct RunContext {
  RunConfig rc;
  std::string command;
  fs::path out;
  std::ofstream log;

  // Timestamped line into run.log; the log is the only artifact that is
  // allowed to differ between reruns of the same configuration.
  void note(const std::string& line) {
    if (!log.is_open()) return;
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%d %H:%M:%S",
                  std::localtime(&now));
    log << stamp << " " << line << "\n" << std::flush;
  }
};

void apply_thread_env() {
  const char* env = std::getenv("A2N_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n <= 0)
    throw ConfigError("A2N_THREADS must be a positive integer, got: " +
                      std::string(env));
  kernels::set_num_threads(static_cast<int>(n));
}

// ---- prepare -------------------------------------------------------------------

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char buf[1 << 16];
  uLong crc = ::crc32(0L, Z_NULL, 0);
  uint64_t size = 0;
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    if (got > 0) {
      crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf),
                    static_cast<uInt>(got));
      size += static_cast<uint64_t>(got);
    }
  }
  char out[48];
  std::snprintf(out, sizeof(out), "crc32:%08lx:%llu",
                static_cast<unsigned long>(crc),
                static_cast<unsigned long long>(size));
  return out;
}

int cmd_prepare(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  if (rc.prepare_hr_dir.empty())
    throw ConfigError("prepare: prepare.hr_dir (or --hr-dir) is required");
  const int scale = rc.prepare_scale > 0 ? rc.prepare_scale : rc.model.scale;
  const fs::path out =
      rc.prepare_out_dir.empty() ? cx.out : fs::path(rc.prepare_out_dir);
  if (!fs::is_directory(rc.prepare_hr_dir))
    throw ConfigError("prepare: not a directory: " + rc.prepare_hr_dir);
  const std::vector<std::string> files = list_png_files(rc.prepare_hr_dir);
  if (files.empty())
    throw ConfigError("prepare: no .png files in " + rc.prepare_hr_dir);

  const std::string lr_name = "LRx" + std::to_string(scale);
  std::error_code ec;
  fs::create_directories(out / "HR", ec);
  fs::create_directories(out / lr_name, ec);

  // Content manifest: reruns skip pairs whose source bytes, scale, and
  // outputs are unchanged.
  const fs::path manifest_path = out / ".prepare_manifest.json";
  json manifest = json::object();
  if (fs::exists(manifest_path)) {
    try {
      manifest = parse_json_file(manifest_path.string());
    } catch (const std::exception& e) {
      std::cerr << "prepare: ignoring unreadable manifest: " << e.what()
                << "\n";
      manifest = json::object();
    }
  }

  int written = 0, skipped = 0;
  for (const std::string& path : files) {
    const std::string name = fs::path(path).filename().string();
    const std::string digest = file_digest(path);
    const fs::path hr_out = out / "HR" / name;
    const fs::path lr_out = out / lr_name / name;
    if (manifest.contains(name) && manifest[name].is_object() &&
        manifest[name].value("digest", std::string()) == digest &&
        manifest[name].value("scale", 0) == scale && fs::exists(hr_out) &&
        fs::exists(lr_out)) {
      ++skipped;
      continue;
    }
    const Image img = load_png(path);
    if (img.width < scale || img.height < scale) {
      std::cerr << "prepare: skipping " << name << " (" << img.width << "x"
                << img.height << " is smaller than the scale factor)\n";
      continue;
    }
    const Image hr = center_crop_to_multiple(img, scale);
    save_png(hr, hr_out.string());
    save_png(bicubic_resize(hr, hr.width / scale, hr.height / scale),
             lr_out.string());
    manifest[name] = json{{"digest", digest}, {"scale", scale}};
    ++written;
  }

  std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot write " + manifest_path.string());
  mf << manifest.dump(2) << "\n";

  std::cout << "prepared " << written << " pair(s), skipped " << skipped
            << " up-to-date -> " << out.string() << "\n";
  cx.note("prepare: " + std::to_string(written) + " written, " +
          std::to_string(skipped) + " skipped");
  return 0;
}

// ---- train ---------------------------------------------------------------------

int cmd_train(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  if (rc.train_dir.empty())
    throw ConfigError("train: paths.train_dir is required");
  const Dataset data = load_dataset(rc.train_dir, rc.model.scale);
  std::unique_ptr<Model> model = build_model(rc.model, rc.train.seed);
  const int64_t period = std::max<int64_t>(rc.train.steps / 4, 1);
  const std::vector<StepInfo> curve = train(
      *model, data, rc.train,
      [&](int64_t step) {
        if (step == rc.train.steps) return;  // final state saved once below
        char name[48];
        std::snprintf(name, sizeof(name), "checkpoint_step%06lld.bin",
                      static_cast<long long>(step));
        save_checkpoint(*model, rc.train, step, (cx.out / name).string());
      },
      period);
  const fs::path ckpt = cx.out / "checkpoint.bin";
  save_checkpoint(*model, rc.train, rc.train.steps, ckpt.string());
  write_loss_csv(curve, (cx.out / "loss.csv").string());

  std::cout << "trained " << rc.train.steps << " step(s) on "
            << data.pairs.size() << " pair(s)";
  if (!curve.empty()) {
    char tail[64];
    std::snprintf(tail, sizeof(tail), ", final loss %.6f", curve.back().loss);
    std::cout << tail;
  }
  std::cout << "\ncheckpoint: " << ckpt.string() << "\n";
  cx.note("train: " + std::to_string(rc.train.steps) + " steps");
  return 0;
}

// ---- eval ----------------------------------------------------------------------

int cmd_eval(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  if (rc.val_dir.empty()) throw ConfigError("eval: paths.val_dir is required");
  std::unique_ptr<Model> model;
  int scale = rc.model.scale;
  int64_t step = -1;
  if (!rc.eval_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(rc.eval_checkpoint);
    model = std::move(ck.net);
    scale = ck.model_cfg.scale;
    step = ck.step;
  } else {
    model = build_model(rc.model, rc.train.seed);
  }
  const EvalReport report = evaluate(*model, rc.val_dir, scale);
  const EvalReport baseline = evaluate_bicubic(rc.val_dir, scale);
  write_eval_csv(report, (cx.out / "eval.csv").string());

  if (step >= 0) std::cout << "model restored at step " << step << "\n";
  std::cout << format_eval_table(report);
  char line[96];
  std::snprintf(line, sizeof(line),
                "bicubic baseline: mean psnr %.4f dB, mean ssim %.6f\n",
                baseline.mean_psnr, baseline.mean_ssim);
  std::cout << line;
  cx.note("eval: " + std::to_string(report.rows.size()) + " image(s)");
  return 0;
}

// ---- analyze -------------------------------------------------------------------

int cmd_analyze(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  std::unique_ptr<Model> model;
  int scale = rc.model.scale;
  if (!rc.analyze_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(rc.analyze_checkpoint);
    model = std::move(ck.net);
    scale = ck.model_cfg.scale;
  } else {
    model = build_model(rc.model, rc.train.seed);
  }
  std::string images_dir = rc.analyze_images_dir;
  if (images_dir.empty()) {
    if (rc.val_dir.empty())
      throw ConfigError(
          "analyze: analyze.images_dir or paths.val_dir is required");
    images_dir = rc.val_dir + "/LRx" + std::to_string(scale);
  }
  const std::vector<std::string> files = list_png_files(images_dir);
  if (files.empty())
    throw ConfigError("analyze: no .png files in " + images_dir);
  std::vector<Image> images;
  images.reserve(files.size());
  for (const std::string& f : files) images.push_back(load_png(f));

  const std::vector<AttentionRecord> records = attention_stats(*model, images);
  if (records.empty()) {
    std::cout << "no attention gates in this model; nothing to analyze\n";
    cx.note("analyze: no gates");
    return 0;
  }
  write_attention_csv(records, (cx.out / "attention_stats.csv").string());
  write_attention_json(records, (cx.out / "attention_records.json").string());
  export_heatmaps(records, (cx.out / "heatmaps").string());
  const WeightRanking ranking =
      rank_branch_weights(*model, images, rc.analyze_top_k);
  export_ranked_maps(ranking, (cx.out / "ranked").string());

  std::cout << "analyzed " << records.size() << " gated block(s) over "
            << images.size() << " image(s)\n"
            << "wrote attention_stats.csv, attention_records.json, heatmaps/, "
               "ranked/ under "
            << cx.out.string() << "\n";
  cx.note("analyze: " + std::to_string(records.size()) + " block(s)");
  return 0;
}

// ---- ablate --------------------------------------------------------------------

int cmd_ablate(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  if (rc.train_dir.empty())
    throw ConfigError("ablate: paths.train_dir is required");
  if (rc.val_dir.empty())
    throw ConfigError("ablate: paths.val_dir is required");
  AblationSpec spec;
  spec.study = rc.ablate_study == "fusion"
                   ? AblationSpec::Study::Fusion
                   : AblationSpec::Study::AttentionLocation;
  spec.model = rc.model;
  spec.train = rc.train;
  const Dataset data = load_dataset(rc.train_dir, rc.model.scale);
  const AblationTable table = run_ablation(spec, data, rc.val_dir);
  const fs::path csv = cx.out / ("ablation_" + table.title + ".csv");
  write_ablation_csv(table, csv.string());
  std::cout << format_ablation_table(table) << "wrote " << csv.string()
            << "\n";
  const bool any_ok =
      std::any_of(table.rows.begin(), table.rows.end(),
                  [](const AblationRow& r) { return !r.failed; });
  cx.note("ablate: " + table.title);
  if (!any_ok) {
    std::cerr << "error: every ablation row failed\n";
    return 1;
  }
  return 0;
}

// ---- gradcheck -----------------------------------------------------------------

int cmd_gradcheck(RunContext& cx) {
  const RunConfig& rc = cx.rc;
  // A small two-block instance keeps the finite-difference sweep fast while
  // exercising every operator of the configured architecture.
  ModelConfig mc = rc.model;
  mc.n_blocks = 2;
  mc.channels = 8;
  mc.upsample_channels = 8;
  mc.reduction = 4;
  mc.validate();
  std::unique_ptr<Model> model = build_model(mc, rc.train.seed);

  Rng rng(rc.train.seed + 101);
  // Both zero-initialized layers (dynamic-weight projection, reconstruction
  // final conv) would hide entire gradient paths at their starting point;
  // nudge them so every path carries signal.
  std::vector<std::string> nudged = {"tail.conv2.weight", "tail.conv2.bias"};
  for (int b = 0; b < mc.n_blocks; ++b)
    for (const char* leaf : {"weight", "bias"})
      nudged.push_back("block." + std::to_string(b) + ".da.fc2." + leaf);
  for (const std::string& name : nudged) {
    if (Parameter* p = model->find_param(name)) {
      for (int64_t i = 0; i < p->tensor.numel(); ++i)
        (*p->tensor.data)[i] = 0.2 * (rng.uniform() - 0.5);
    }
  }

  const int h = 6, w = 5;
  Tensor in({1, 3, h, w});
  for (int64_t i = 0; i < in.numel(); ++i) (*in.data)[i] = rng.uniform();
  Tensor target({1, 3, h * mc.scale, w * mc.scale});
  for (int64_t i = 0; i < target.numel(); ++i)
    (*target.data)[i] = rng.uniform();

  std::vector<Tensor> leaves;
  for (Parameter& p : model->params())
    if (p.trainable) leaves.push_back(p.tensor);
  const bool use_l2 = rc.train.loss == "L2";
  const auto make_loss = [&]() {
    Tensor out = model->forward(in);
    return use_l2 ? l2_loss(out, target) : l1_loss(out, target);
  };
  const double max_rel = grad_check(make_loss, leaves, rc.gradcheck_epsilon,
                                    rc.gradcheck_coords);
  const bool pass = max_rel < rc.gradcheck_tolerance;
  char line[160];
  std::snprintf(line, sizeof(line),
                "gradcheck: max relative error %.3e over %lld parameters "
                "(eps %.1e, %d coords/param, tolerance %.1e) -> %s\n",
                max_rel, static_cast<long long>(model->param_count()),
                rc.gradcheck_epsilon, rc.gradcheck_coords,
                rc.gradcheck_tolerance, pass ? "PASS" : "FAIL");
  std::cout << line;
  cx.note(std::string("gradcheck: ") + (pass ? "pass" : "fail"));
  return pass ? 0 : 3;
}

// ---- driver --------------------------------------------------------------------

int run_impl(const std::vector<std::string>& args) {
  CLI::App app{"attention-in-attention super-resolution toolkit"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"prepare",
       "crop HR images to scale multiples and synthesize bicubic LR pairs"},
      {"train", "train a model on prepared pairs"},
      {"eval", "score a model (or checkpoint) against held-out pairs"},
      {"analyze",
       "attention statistics, heatmaps, and branch-weight rankings"},
      {"ablate", "train and score a family of model variants"},
      {"gradcheck", "compare analytic gradients against finite differences"},
  };
  std::string config_path;
  std::string hr_dir_flag, prep_out_flag;
  int scale_flag = 0;
  std::map<std::string, CLI::App*> sub_apps;
  for (const auto& [name, desc] : subs) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "JSON run configuration file");
    sub->allow_extras();  // dotted --section.key overrides
    sub_apps[name] = sub;
  }
  sub_apps["prepare"]->add_option("--hr-dir", hr_dir_flag,
                                  "directory of source high-resolution PNGs");
  sub_apps["prepare"]
      ->add_option("--scale", scale_flag, "downsampling factor")
      ->check(CLI::Range(2, 4));
  sub_apps["prepare"]->add_option("--out-dir", prep_out_flag,
                                  "destination of the prepared pairs");

  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("a2n");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(storage.size());
  for (const std::string& s : storage) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits clean
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();

  json root = config_path.empty() ? json::object() : parse_json_file(config_path);
  const std::vector<std::string> extras = chosen->remaining();
  for (size_t i = 0; i < extras.size(); ++i) {
    std::string tok = extras[i];
    if (tok.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument: " + tok);
    tok = tok.substr(2);
    std::string key, value;
    const size_t eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
    } else {
      key = tok;
      if (++i >= extras.size())
        throw ConfigError("missing value for --" + key);
      value = extras[i];
    }
    if (key.find('.') == std::string::npos)
      throw ConfigError("unknown option --" + key +
                        " (overrides use --section.key)");
    apply_override(root, key, value);
  }
  // Dedicated prepare flags are sugar over the prepare section.
  if (!hr_dir_flag.empty()) root["prepare"]["hr_dir"] = hr_dir_flag;
  if (scale_flag != 0) root["prepare"]["scale"] = scale_flag;
  if (!prep_out_flag.empty()) root["prepare"]["out_dir"] = prep_out_flag;

  RunContext cx;
  cx.rc = run_config_from_json(root);
  cx.command = command;
  cx.out = cx.rc.out_dir;
  apply_thread_env();

  std::error_code ec;
  fs::create_directories(cx.out, ec);
  if (!fs::is_directory(cx.out))
    throw IoError("cannot create output directory: " + cx.out.string());

  // Echo the effective configuration before any work starts so every run
  // is reproducible from its own artifacts.
  {
    json echo = to_json(cx.rc);
    echo["command"] = command;
    std::ofstream f(cx.out / "resolved_config.json",
                    std::ios::binary | std::ios::trunc);
    if (!f)
      throw IoError("cannot write " +
                    (cx.out / "resolved_config.json").string());
    f << echo.dump(2) << "\n";
  }
  cx.log.open(cx.out / "run.log", std::ios::binary | std::ios::app);
  cx.note("start " + command);

  int code = 0;
  try {
    if (command == "prepare") code = cmd_prepare(cx);
    else if (command == "train") code = cmd_train(cx);
    else if (command == "eval") code = cmd_eval(cx);
    else if (command == "analyze") code = cmd_analyze(cx);
    else if (command == "ablate") code = cmd_ablate(cx);
    else code = cmd_gradcheck(cx);
  } catch (const std::exception& e) {
    cx.note(std::string("failed: ") + e.what());
    throw;
  }
  cx.note("done (exit " + std::to_string(code) + ")");
  return code;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (key != "model" && key != "train" && key != "paths" &&
        key != "prepare" && key != "eval" && key != "analyze" &&
        key != "ablate" && key != "gradcheck")
      throw ConfigError("unknown config section: " + key);
    if (!value.is_object())
      throw ConfigError("config section must be an object: " + key);
    if (key == "model") rc.model = model_config_from_json(value);
    else if (key == "train") rc.train = train_config_from_json(value);
    else if (key == "paths") read_paths(value, rc);
    else if (key == "prepare") read_prepare(value, rc);
    else if (key == "eval") read_eval(value, rc);
    else if (key == "analyze") read_analyze(value, rc);
    else if (key == "ablate") read_ablate(value, rc);
    else read_gradcheck(value, rc);
  }
  rc.model.validate();
  rc.train.validate();
  if (rc.out_dir.empty()) throw ConfigError("paths.out_dir must not be empty");
  if (rc.prepare_scale != 0 && rc.prepare_scale != 2 && rc.prepare_scale != 3 &&
      rc.prepare_scale != 4)
    throw ConfigError("prepare.scale must be 2, 3, or 4");
  if (rc.analyze_top_k < 1)
    throw ConfigError("analyze.top_k must be positive");
  if (rc.ablate_study != "fusion" && rc.ablate_study != "attention_location")
    throw ConfigError("ablate.study must be \"fusion\" or "
                      "\"attention_location\", got: " +
                      rc.ablate_study);
  if (!(rc.gradcheck_epsilon > 0.0))
    throw ConfigError("gradcheck.epsilon must be positive");
  if (!(rc.gradcheck_tolerance > 0.0))
    throw ConfigError("gradcheck.tolerance must be positive");
  if (rc.gradcheck_coords < 1)
    throw ConfigError("gradcheck.coords_per_param must be positive");
  return rc;
}

json to_json(const RunConfig& rc) {
  json j;
  j["model"] = a2n::to_json(rc.model);
  j["train"] = a2n::to_json(rc.train);
  j["paths"] = {{"train_dir", rc.train_dir},
                {"val_dir", rc.val_dir},
                {"out_dir", rc.out_dir}};
  j["prepare"] = {{"hr_dir", rc.prepare_hr_dir},
                  {"scale", rc.prepare_scale},
                  {"out_dir", rc.prepare_out_dir}};
  j["eval"] = {{"checkpoint", rc.eval_checkpoint}};
  j["analyze"] = {{"checkpoint", rc.analyze_checkpoint},
                  {"images_dir", rc.analyze_images_dir},
                  {"top_k", rc.analyze_top_k}};
  j["ablate"] = {{"study", rc.ablate_study}};
  j["gradcheck"] = {{"epsilon", rc.gradcheck_epsilon},
                    {"tolerance", rc.gradcheck_tolerance},
                    {"coords_per_param", rc.gradcheck_coords}};
  return j;
}

int run(const std::vector<std::string>& args) {
  try {
    return run_impl(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace a2n::cli
