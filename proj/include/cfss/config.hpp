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

// Training configuration, its canonical key=value text form and digest.
//
// The text form is what checkpoints embed and what config files contain, so
// one parser serves both. Unknown keys are rejected, never ignored.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cfss/encoder.hpp"
#include "cfss/loss.hpp"
#include "cfss/network.hpp"

namespace cfss {

struct TrainConfig {
  int iterations = 6000;
  int batch_episodes = 4;
  double lr0 = 1e-3;
  int lr_decay_every = 2000;
  double lr_decay_factor = 0.1;
  int shots = 1;
  std::uint64_t seed = 0;
  ModuleToggles toggles;
  LossWeights loss_weights;
  BackboneConfig backbone;
  int image_height = 400;
  int image_width = 400;
  bool augment_flip = true;
  double temperature = kDefaultTemperature;

  void validate() const {
    if (iterations < 1) throw ArgumentError("iterations must be >= 1");
    if (batch_episodes < 1) throw ArgumentError("batch_episodes must be >= 1");
    if (!(lr0 > 0)) throw ArgumentError("lr0 must be > 0");
    if (lr_decay_every < 1) throw ArgumentError("lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 0)) throw ArgumentError("lr_decay_factor must be > 0");
    if (shots < 1) throw ArgumentError("shots must be >= 1");
    if (image_height < kMinEncoderSide || image_width < kMinEncoderSide) {
      throw ArgumentError("image size must be at least 32x32");
    }
    if (!(temperature > 0)) throw ArgumentError("temperature must be > 0");
    loss_weights.validate();
    backbone.validate();
  }

  NetworkConfig network() const {
    NetworkConfig n;
    n.backbone = backbone;
    n.toggles = toggles;
    n.temperature = temperature;
    return n;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ArgumentError("config key '" + key + "': not a number: '" + v + "'");
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw ArgumentError("config key '" + key + "': not an integer: '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ArgumentError("config key '" + key + "': not a boolean: '" + v + "'");
}

}  // namespace detail

// Ordered key=value pairs. '#' starts a comment; blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(number) + ": expected key=value");
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ArgumentError("config line " + std::to_string(number) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

// Applies one TrainConfig key; returns false if the key is not a TrainConfig key.
inline bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "iterations") c.iterations = static_cast<int>(parse_int(key, v));
  else if (key == "batch_episodes") c.batch_episodes = static_cast<int>(parse_int(key, v));
  else if (key == "lr0") c.lr0 = parse_double(key, v);
  else if (key == "lr_decay_every") c.lr_decay_every = static_cast<int>(parse_int(key, v));
  else if (key == "lr_decay_factor") c.lr_decay_factor = parse_double(key, v);
  else if (key == "shots") c.shots = static_cast<int>(parse_int(key, v));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, v));
  else if (key == "cspmg") c.toggles.cspmg = parse_bool(key, v);
  else if (key == "msfe") c.toggles.msfe = parse_bool(key, v);
  else if (key == "pfm") c.toggles.pfm = parse_bool(key, v);
  else if (key == "ssp") c.toggles.ssp = parse_bool(key, v);
  else if (key == "lambda1") c.loss_weights.lambda1 = parse_double(key, v);
  else if (key == "lambda2") c.loss_weights.lambda2 = parse_double(key, v);
  else if (key == "lambda3") c.loss_weights.lambda3 = parse_double(key, v);
  else if (key == "backbone") {
    const BackboneConfig preset = BackboneConfig::of_kind(parse_backbone(v));
    c.backbone.kind = preset.kind;
    c.backbone.block_channels = preset.block_channels;
    c.backbone.residual_units = preset.residual_units;
    c.backbone.mid_channels = preset.mid_channels;
  }
  else if (key == "mid_channels") c.backbone.mid_channels = static_cast<int>(parse_int(key, v));
  else if (key == "dilate_late_blocks") c.backbone.dilate_late_blocks = parse_bool(key, v);
  else if (key == "image_height") c.image_height = static_cast<int>(parse_int(key, v));
  else if (key == "image_width") c.image_width = static_cast<int>(parse_int(key, v));
  else if (key == "augment_flip") c.augment_flip = parse_bool(key, v);
  else if (key == "temperature") c.temperature = parse_double(key, v);
  else return false;
  return true;
}

// Canonical text: every field, fixed order, shortest round-trip numbers.
// `backbone` precedes `mid_channels` so re-parsing reproduces the config.
inline std::string serialize(const TrainConfig& c) {
  using detail::format_double;
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream out;
  out << "iterations=" << c.iterations << "\n"
      << "batch_episodes=" << c.batch_episodes << "\n"
      << "lr0=" << format_double(c.lr0) << "\n"
      << "lr_decay_every=" << c.lr_decay_every << "\n"
      << "lr_decay_factor=" << format_double(c.lr_decay_factor) << "\n"
      << "shots=" << c.shots << "\n"
      << "seed=" << c.seed << "\n"
      << "cspmg=" << b(c.toggles.cspmg) << "\n"
      << "msfe=" << b(c.toggles.msfe) << "\n"
      << "pfm=" << b(c.toggles.pfm) << "\n"
      << "ssp=" << b(c.toggles.ssp) << "\n"
      << "lambda1=" << format_double(c.loss_weights.lambda1) << "\n"
      << "lambda2=" << format_double(c.loss_weights.lambda2) << "\n"
      << "lambda3=" << format_double(c.loss_weights.lambda3) << "\n"
      << "backbone=" << backbone_name(c.backbone.kind) << "\n"
      << "mid_channels=" << c.backbone.mid_channels << "\n"
      << "dilate_late_blocks=" << b(c.backbone.dilate_late_blocks) << "\n"
      << "image_height=" << c.image_height << "\n"
      << "image_width=" << c.image_width << "\n"
      << "augment_flip=" << b(c.augment_flip) << "\n"
      << "temperature=" << format_double(c.temperature) << "\n";
  return out.str();
}

inline TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (!apply_train_key(c, key, value)) throw ArgumentError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_digest(const TrainConfig& c) { return fnv1a_hex(serialize(c)); }

}  // namespace cfss
