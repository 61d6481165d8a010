/* Copyright 2026 The cfss Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Command-line front end: train, eval, predict, synth, decompose.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flag, missing
// or malformed config file).

#include <CLI11.hpp>

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cfss/config.hpp"
#include "cfss/data.hpp"
#include "cfss/engine.hpp"
#include "cfss/image_io.hpp"
#include "cfss/retinex.hpp"

namespace cfss::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Everything a config file may set: the training fields plus data locations
// and the synthetic low-light degradation.
struct RunConfig {
  TrainConfig train;
  std::string train_data;
  std::string test_data;
  LowLightParams lowlight;
  std::string lowlight_on = "none";  // none | train | test | both

  bool lowlight_for(Split split) const {
    if (lowlight_on == "both") return true;
    return lowlight_on == (split == Split::kTrain ? "train" : "test");
  }
};

struct KeyDoc {
  const char* key;
  const char* doc;
};

inline const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys{
      {"iterations", "training iterations (default 6000)"},
      {"batch_episodes", "episodes per gradient step (default 4)"},
      {"lr0", "initial learning rate (default 0.001)"},
      {"lr_decay_every", "iterations between learning-rate drops (default 2000)"},
      {"lr_decay_factor", "multiplier applied at each drop (default 0.1)"},
      {"shots", "support images per episode (default 1)"},
      {"seed", "global seed; CFSS_SEED overrides it (default 0)"},
      {"cspmg", "prior-mask generation on/off (default true)"},
      {"msfe", "multi-scale feature enhancement on/off (default true)"},
      {"pfm", "prototype fusion on/off (default true)"},
      {"ssp", "self-support prototype refinement on/off (default true)"},
      {"lambda1", "segmentation loss weight (default 0.1)"},
      {"lambda2", "prior loss weight (default 0.5)"},
      {"lambda3", "self-support loss weight (default 0.6)"},
      {"backbone", "tiny | residual50-like | residual101-like (default tiny)"},
      {"mid_channels", "mid-level feature width (default from backbone)"},
      {"dilate_late_blocks", "keep blocks 4-5 at stride 8 (default true)"},
      {"image_height", "working image height (default 400)"},
      {"image_width", "working image width (default 400)"},
      {"augment_flip", "random horizontal flips during training (default true)"},
      {"temperature", "cosine-softmax temperature (default 10)"},
      {"train_data", "training dataset root (images/, masks/)"},
      {"test_data", "evaluation dataset root"},
      {"lowlight_gamma", "low-light gamma in [1, 6] (default 1)"},
      {"lowlight_scale", "low-light brightness scale in (0, 1] (default 1)"},
      {"lowlight_sigma", "low-light noise sigma (default 0)"},
      {"lowlight_seed", "low-light noise seed (default 0)"},
      {"lowlight_on", "none | train | test | both (default none)"},
  };
  return keys;
}

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (apply_train_key(rc.train, key, value)) continue;
    if (key == "train_data") rc.train_data = value;
    else if (key == "test_data") rc.test_data = value;
    else if (key == "lowlight_gamma") rc.lowlight.gamma = detail::parse_double(key, value);
    else if (key == "lowlight_scale") rc.lowlight.scale = detail::parse_double(key, value);
    else if (key == "lowlight_sigma") rc.lowlight.noise_sigma = detail::parse_double(key, value);
    else if (key == "lowlight_seed") rc.lowlight.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    else if (key == "lowlight_on") {
      if (value != "none" && value != "train" && value != "test" && value != "both") {
        throw ArgumentError("config key 'lowlight_on': expected none|train|test|both, got '" + value + "'");
      }
      rc.lowlight_on = value;
    } else {
      throw ArgumentError("unknown config key '" + key + "'");
    }
  }
  rc.train.validate();
  if (rc.lowlight_on != "none") rc.lowlight.validate();
  return rc;
}

namespace detail {

struct UsageError : Error {
  using Error::Error;
};

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file '" + path.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("CFSS_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    return static_cast<std::uint64_t>(cfss::detail::parse_int("CFSS_SEED", v));
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
}

inline LowLightParams parse_lowlight_triple(const std::string& text, std::uint64_t seed) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      parts.push_back(cfss::detail::parse_double("--lowlight", cfss::detail::trim(item)));
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
  }
  if (parts.size() != 3) throw UsageError("--lowlight expects gamma,scale,sigma");
  LowLightParams p{parts[0], parts[1], parts[2], seed};
  try {
    p.validate();
  } catch (const ArgumentError& e) {
    throw UsageError(e.what());
  }
  return p;
}

inline CrackDataset darken(CrackDataset ds, const LowLightParams& p) {
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    LowLightParams pi = p;
    pi.seed = mix_seed(p.seed, i);
    ds.items[i].image = lowlight_transform(ds.items[i].image, pi);
  }
  return ds;
}

inline Image read_sized(const std::string& path, const TrainConfig& cfg) {
  return read_image(path, cfg.image_height, cfg.image_width);
}

// Probability map upsampled to the output size, as an 8-bit PNG.
template <typename T>
void write_map(const std::filesystem::path& path, const Var<T>& map, int height, int width) {
  write_png(path, gray_to_mat(bilinear_resize(map.value(), height, width)));
}

}  // namespace detail

struct TrainArgs {
  std::string config, out = "cfss.ckpt", log;
  int log_every = 50;
};
struct EvalArgs {
  std::string checkpoint, data, lowlight, out;
  int shots = 0, episodes = 100;
  std::uint64_t seed = 0;
};
struct PredictArgs {
  std::string checkpoint, query, out, dump_prior;
  std::vector<std::string> support_images, support_masks;
};
struct SynthArgs {
  int count = 0;
  std::vector<int> size;
  std::uint64_t seed = 0;
  std::string lowlight, out;
};
struct DecomposeArgs {
  std::string in, reflectance, illumination;
  double sigma = -1;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (!std::filesystem::is_regular_file(a.config)) {
    throw detail::UsageError("config file '" + a.config + "' does not exist");
  }
  RunConfig rc;
  try {
    rc = parse_run_config(detail::read_text(a.config));
    if (auto s = detail::env_seed()) rc.train.seed = *s;
  } catch (const ArgumentError& e) {
    throw detail::UsageError(a.config + ": " + e.what());
  }
  if (rc.train_data.empty()) throw detail::UsageError(a.config + ": train_data is not set");
  const TrainConfig& cfg = rc.train;
  CrackDataset data = load_dataset(rc.train_data, cfg.image_height, cfg.image_width, Split::kTrain);
  if (rc.lowlight_for(Split::kTrain)) data = detail::darken(std::move(data), rc.lowlight);

  Network<float> net(cfg.network(), cfg.seed);
  Trainer<float> trainer(net, cfg);
  std::string log;
  trainer.fit(data, [&](int it, const StepStats& s) {
    nlohmann::ordered_json j;
    j["iteration"] = it;
    j["lr"] = learning_rate(it, cfg);
    j["total"] = s.total;
    j["seg"] = s.seg;
    j["prior"] = s.prior;
    j["ssp"] = s.ssp;
    log += j.dump() + "\n";
    if (a.log_every > 0 && (it % a.log_every == 0 || it + 1 == cfg.iterations)) err << j.dump() << "\n";
  });
  save_checkpoint(net.parameters(), cfg, a.out);
  write_file_atomic(a.log.empty() ? a.out + ".log.jsonl" : a.log, log);
  out << "checkpoint " << a.out << " digest " << config_digest(cfg) << " redraws " << trainer.redraws()
      << "\n";
  return kExitOk;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const TrainConfig& cfg = ck.config;
  auto net = load_network<float>(ck);
  CrackDataset data = load_dataset(a.data, cfg.image_height, cfg.image_width, Split::kTest);
  if (!a.lowlight.empty()) data = detail::darken(std::move(data), detail::parse_lowlight_triple(a.lowlight, a.seed));
  const int shots = a.shots > 0 ? a.shots : cfg.shots;
  const EvalReport report = evaluate(*net, data, shots, a.episodes, a.seed, ck.digest);
  for (const auto& line : report.log) err << line << "\n";
  out << report.json_line() << "\n";
  if (!a.out.empty()) write_file_atomic(a.out, report.json_line() + "\n");
  return kExitOk;
}

inline int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream&) {
  if (a.support_images.size() != a.support_masks.size()) {
    throw detail::UsageError("--support-image and --support-mask must be given the same number of times");
  }
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const TrainConfig& cfg = ck.config;
  auto net = load_network<float>(ck);
  Episode ep;
  for (std::size_t k = 0; k < a.support_images.size(); ++k) {
    ep.support.push_back({detail::read_sized(a.support_images[k], cfg),
                          read_mask(a.support_masks[k], cfg.image_height, cfg.image_width)});
  }
  ep.query = {detail::read_sized(a.query, cfg), BinaryMask::filled(cfg.image_height, cfg.image_width, false)};

  const ForwardResult<float> r = net->predict(ep);
  const int h = cfg.image_height, w = cfg.image_width;
  const Tensor<float> fg = r.foreground().value();
  const BinaryMask mask = threshold_mask(fg, h, w);
  const std::filesystem::path dir(a.out);
  write_png(dir / "fg_probability.png", gray_to_mat(fg));
  write_mask(dir / "mask.png", mask);
  write_png(dir / "overlay.png", overlay(ep.query.image, mask));
  if (!a.dump_prior.empty()) {
    const std::filesystem::path pd(a.dump_prior);
    detail::write_map(pd / "prior_fused.png", r.prior.data, h, w);
    for (std::size_t i = 0; i < kPriorPairs.size(); ++i) {
      const auto& c = r.prior.components[i];
      if (!c.defined()) continue;
      const std::string name = std::string("prior_q") + branch_name(kPriorPairs[i].first) + "_s" +
                               branch_name(kPriorPairs[i].second) + ".png";
      detail::write_map(pd / name, c, h, w);
    }
  }
  out << "foreground pixels " << mask.foreground_count() << " of " << mask.size() << "\n";
  return kExitOk;
}

inline int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  std::optional<LowLightParams> ll;
  if (!a.lowlight.empty()) ll = detail::parse_lowlight_triple(a.lowlight, a.seed);
  const CrackDataset ds = synth_dataset(a.count, a.size[0], a.size[1], a.seed, ll ? &*ll : nullptr);
  write_dataset(a.out, ds);
  out << "wrote " << ds.size() << " pairs to " << a.out << "\n";
  return kExitOk;
}

inline int cmd_decompose(const DecomposeArgs& a, std::ostream& out, std::ostream&) {
  const Image image = read_image(a.in);
  const Decomposition d = a.sigma >= 0 ? decompose(image, a.sigma) : decompose(image);
  write_image(a.reflectance, d.reflectance);
  write_png(a.illumination, gray_to_mat(d.illumination));
  out << "wrote " << a.reflectance << " and " << a.illumination << "\n";
  return kExitOk;
}

// Parses and dispatches; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot low-light crack segmentation", "cfss"};
  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "Print help for every subcommand and exit");
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Episodic training from a key=value config file");
  train->add_option("--config", ta.config, "Config file path")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->capture_default_str();
  train->add_option("--log", ta.log, "Loss log path (JSON lines; default <out>.log.jsonl)");
  train->add_option("--log-every", ta.log_every, "Print a loss line every N iterations (0: never)")
      ->capture_default_str();
  {
    std::string keys = "Config keys:\n";
    for (const auto& k : config_keys()) keys += "  " + std::string(k.key) + ": " + k.doc + "\n";
    train->footer(keys);
    app.footer(keys);
  }

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Mean IoU over seeded evaluation episodes");
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", ea.data, "Dataset root (images/, masks/)")->required();
  eval->add_option("--shots", ea.shots, "Support images per episode (default: checkpoint config)");
  eval->add_option("--episodes", ea.episodes, "Number of episodes")->capture_default_str();
  eval->add_option("--seed", ea.seed, "Episode sampling seed")->capture_default_str();
  eval->add_option("--lowlight", ea.lowlight, "Darken the data first: gamma,scale,sigma");
  eval->add_option("--out", ea.out, "Also write the JSON report to this file");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Segment one query image from annotated supports");
  predict->add_option("--checkpoint", pa.checkpoint, "Checkpoint path")->required();
  predict->add_option("--support-image", pa.support_images, "Support image (repeat for K shots)")->required();
  predict->add_option("--support-mask", pa.support_masks, "Support mask, same order as images")->required();
  predict->add_option("--query", pa.query, "Query image")->required();
  predict->add_option("--out", pa.out, "Output directory")->required();
  predict->add_option("--dump-prior", pa.dump_prior, "Also write prior-mask PNGs to this directory");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic crack dataset");
  synth->add_option("--count", sa.count, "Number of image/mask pairs")->required()->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "Height and width")->required()->expected(2)->check(CLI::Range(64, 4096));
  synth->add_option("--seed", sa.seed, "Generator seed")->capture_default_str();
  synth->add_option("--lowlight", sa.lowlight, "Darken images: gamma,scale,sigma");
  synth->add_option("--out", sa.out, "Output dataset root")->required();

  DecomposeArgs da;
  auto* dec = app.add_subcommand("decompose", "Split an image into reflectance and illumination");
  dec->add_option("--in", da.in, "Input image")->required();
  dec->add_option("--out-reflectance", da.reflectance, "Reflectance PNG path")->required();
  dec->add_option("--out-illumination", da.illumination, "Illumination PNG path")->required();
  dec->add_option("--sigma", da.sigma, "Illumination blur sigma in pixels (default: size-proportional)");

  // Unknown flags are reported by name before any missing-option complaint.
  CLI::App* scope = &app;
  for (const std::string& tok : args) {
    if (scope == &app && !tok.empty() && tok[0] != '-') {
      if (CLI::App* sub = app.get_subcommand_no_throw(tok)) scope = sub;
      continue;
    }
    if (tok.size() < 2 || tok[0] != '-' || std::isdigit(static_cast<unsigned char>(tok[1])) || tok[1] == '.') continue;
    const std::string name = tok.substr(0, tok.find('='));
    if (scope->get_option_no_throw(name) == nullptr && app.get_option_no_throw(name) == nullptr) {
      err << "usage error: unknown flag '" << name << "'\nRun with --help for more information.\n";
      return kExitUsage;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta, out, err);
    if (*eval) return cmd_eval(ea, out, err);
    if (*predict) return cmd_predict(pa, out, err);
    if (*synth) return cmd_synth(sa, out, err);
    if (*dec) return cmd_decompose(da, out, err);
  } catch (const detail::UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace cfss::cli
