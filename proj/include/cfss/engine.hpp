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

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfss/config.hpp"
#include "cfss/data.hpp"
#include "cfss/image_io.hpp"
#include "cfss/network.hpp"

namespace cfss {

// ---------------------------------------------------------------------------
// Schedule and optimiser

// Step decay. The factor is applied by repeated multiplication so the
// boundary values come out as the literal products (1e-3 * 0.1 == 1e-4).
inline double learning_rate(int iteration, const TrainConfig& cfg) {
  if (iteration < 0) throw ArgumentError("learning_rate: iteration must be >= 0");
  double lr = cfg.lr0;
  for (int k = iteration / cfg.lr_decay_every; k > 0; --k) lr *= cfg.lr_decay_factor;
  return lr;
}

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

// Adaptive moments with weight decay applied directly to the parameters.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : opt_(options) {}

  void step(ParameterStore<T>& store, const std::vector<Tensor<T>>& grads, double lr) {
    if (static_cast<int>(grads.size()) != store.size()) {
      throw ArgumentError("AdamW: gradient count does not match parameter count");
    }
    if (m_.empty()) {
      for (int i = 0; i < store.size(); ++i) {
        m_.emplace_back(store.value(i).shape());
        v_.emplace_back(store.value(i).shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    for (int i = 0; i < store.size(); ++i) {
      Tensor<T>& p = store.mutable_value(i);
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      const Tensor<T>& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        m[j] = static_cast<T>(opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj);
        v[j] = static_cast<T>(opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj);
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        const double update = mhat / (std::sqrt(vhat) + opt_.epsilon) + opt_.weight_decay * p[j];
        p[j] = static_cast<T>(p[j] - lr * update);
      }
    }
  }

  long long steps() const { return t_; }

 private:
  AdamWOptions opt_;
  std::vector<Tensor<T>> m_, v_;
  long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct StepStats {
  double total = 0;
  double seg = 0;
  double prior = 0;
  double ssp = 0;
};

inline constexpr int kMaxEpisodeRedraws = 16;

// True when every support mask leaves at least one foreground and one
// background cell on the encoder's mid and high grids.
template <typename T>
bool episode_fits_grid(const Encoder<T>& encoder, const Episode& episode) {
  const int h = episode.query.image.height(), w = episode.query.image.width();
  for (int block : {2, 4}) {
    const auto [gh, gw] = encoder.grid_size(h, w, block);
    for (const auto& s : episode.support) {
      const GridMask g = resize_mask(s.mask, gh, gw);
      if (g.foreground().empty() || g.background().empty()) return false;
    }
  }
  return true;
}

template <typename T>
class Trainer {
 public:
  Trainer(Network<T>& network, TrainConfig config) : net_(&network), cfg_(std::move(config)) {
    cfg_.validate();
  }

  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  int redraws() const { return redraws_; }

  // One update from the averaged gradient of `batch`. Gradients are summed in
  // batch order so the result does not depend on scheduling.
  StepStats step(const std::vector<Episode>& batch, double lr) {
    if (batch.empty()) throw ArgumentError("train step: empty batch");
    ParameterStore<T>& store = net_->parameters();
    std::vector<Tensor<T>> sum;
    StepStats stats;
    for (const Episode& ep : batch) {
      Binding<T> params(store, true);
      ForwardResult<T> r = net_->forward(params, ep, cfg_.loss_weights, true);
      const double total = r.total.value()[0];
      if (!std::isfinite(total)) {
        std::string where = r.first_non_finite();
        throw NonFiniteError("non-finite loss; first non-finite tensor: " +
                             (where.empty() ? std::string("total_loss") : where));
      }
      backward(r.total);
      std::vector<Tensor<T>> g = params.gradients();
      if (sum.empty()) {
        sum = std::move(g);
      } else {
        for (std::size_t i = 0; i < sum.size(); ++i) {
          for (std::size_t j = 0; j < sum[i].size(); ++j) sum[i][j] += g[i][j];
        }
      }
      stats.total += total;
      stats.seg += r.seg.value()[0];
      stats.prior += r.prior_term.value()[0];
      stats.ssp += r.ssp.value()[0];
    }
    const double n = static_cast<double>(batch.size());
    for (auto& g : sum) {
      for (std::size_t j = 0; j < g.size(); ++j) g[j] = static_cast<T>(g[j] / n);
    }
    opt_.step(store, sum, lr);
    stats.total /= n;
    stats.seg /= n;
    stats.prior /= n;
    stats.ssp /= n;
    return stats;
  }

  // Scheduled step at the trainer's own iteration counter.
  StepStats step(const std::vector<Episode>& batch) {
    StepStats s = step(batch, learning_rate(iteration_, cfg_));
    ++iteration_;
    return s;
  }

  // Episodes for `iteration`, seeded from (config seed, iteration, slot).
  // Episodes whose support masks vanish on the feature grid are redrawn.
  std::vector<Episode> draw_batch(const CrackDataset& data, int iteration) {
    std::vector<Episode> batch;
    const std::uint64_t iter_seed = mix_seed(cfg_.seed, static_cast<std::uint64_t>(iteration));
    for (int e = 0; e < cfg_.batch_episodes; ++e) {
      bool found = false;
      for (int attempt = 0; attempt < kMaxEpisodeRedraws && !found; ++attempt) {
        const std::uint64_t s = mix_seed(iter_seed, static_cast<std::uint64_t>(e) * 1024 + attempt);
        Episode ep = sample_episode(data, cfg_.shots, s);
        if (cfg_.augment_flip) {
          for (std::size_t k = 0; k < ep.support.size(); ++k) {
            ep.support[k] = augment_flip(ep.support[k], mix_seed(s, 1 + k));
          }
          ep.query = augment_flip(ep.query, mix_seed(s, 0));
        }
        if (episode_fits_grid(net_->encoder(), ep)) {
          batch.push_back(std::move(ep));
          found = true;
        } else {
          ++redraws_;
        }
      }
      if (!found) {
        throw EmptyForeground("no episode with a usable support mask after " +
                              std::to_string(kMaxEpisodeRedraws) + " draws at iteration " +
                              std::to_string(iteration));
      }
    }
    return batch;
  }

  // Runs the remaining configured iterations.
  std::vector<StepStats> fit(const CrackDataset& data,
                             const std::function<void(int, const StepStats&)>& on_step = {}) {
    std::vector<StepStats> history;
    while (iteration_ < cfg_.iterations) {
      const int it = iteration_;
      StepStats s = step(draw_batch(data, it));
      history.push_back(s);
      if (on_step) on_step(it, s);
    }
    return history;
  }

 private:
  Network<T>* net_;
  TrainConfig cfg_;
  AdamW<T> opt_;
  int iteration_ = 0;
  int redraws_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

inline BinaryMask threshold_mask(const Tensor<float>& fg, int height, int width) {
  if (fg.size() != static_cast<std::size_t>(height) * width) {
    throw ArgumentError("threshold_mask: probability map does not match " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  std::vector<std::uint8_t> bits(fg.size());
  for (std::size_t i = 0; i < fg.size(); ++i) bits[i] = fg[i] >= 0.5f ? 1 : 0;
  return BinaryMask(height, width, std::move(bits));
}

// Mean of foreground and background IoU. A class missing from both masks
// counts as perfect agreement.
inline double miou(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw ArgumentError("miou: mask shapes differ");
  }
  std::size_t inter_fg = 0, union_fg = 0, inter_bg = 0, union_bg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter_fg += p && g;
    union_fg += p || g;
    inter_bg += !p && !g;
    union_bg += !p || !g;
  }
  auto iou = [](std::size_t inter, std::size_t uni) {
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  };
  return 0.5 * (iou(inter_fg, union_fg) + iou(inter_bg, union_bg));
}

struct EvalReport {
  double miou = 0;
  std::vector<double> per_episode_iou;
  int shots = 0;
  int episode_count = 0;
  int skipped = 0;
  std::vector<std::string> log;
  std::string config_digest;

  std::string json_line() const {
    nlohmann::ordered_json j;
    j["miou"] = miou;
    j["shots"] = shots;
    j["episodes"] = episode_count;
    j["skipped"] = skipped;
    j["config_digest"] = config_digest;
    return j.dump();
  }

  std::string digest() const {
    std::string text = json_line();
    for (double v : per_episode_iou) text += "\n" + detail::format_double(v);
    for (const auto& line : log) text += "\n" + line;
    return fnv1a_hex(text);
  }
};

// Runs `episode_count` seeded episodes. Episodes whose support mask vanishes
// on the feature grid are skipped, logged and counted.
template <typename T>
EvalReport evaluate(const Network<T>& net, const CrackDataset& data, int shots, int episode_count,
                    std::uint64_t seed, std::string config_digest = {}) {
  if (episode_count < 1) throw ArgumentError("evaluate: episode_count must be >= 1");
  EvalReport report;
  report.shots = shots;
  report.episode_count = episode_count;
  report.config_digest = std::move(config_digest);
  double sum = 0;
  for (int e = 0; e < episode_count; ++e) {
    const Episode ep = sample_episode(data, shots, mix_seed(seed, static_cast<std::uint64_t>(e)));
    try {
      const ForwardResult<T> r = net.predict(ep);
      const Tensor<float> fg = r.foreground().value().template cast<float>();
      const double v = miou(threshold_mask(fg, ep.query.image.height(), ep.query.image.width()),
                            ep.query.mask);
      report.per_episode_iou.push_back(v);
      sum += v;
    } catch (const EmptyForeground& err) {
      ++report.skipped;
      report.log.push_back("episode " + std::to_string(e) + " skipped: " + err.what());
    } catch (const EmptyBackground& err) {
      ++report.skipped;
      report.log.push_back("episode " + std::to_string(e) + " skipped: " + err.what());
    }
  }
  if (!report.per_episode_iou.empty()) {
    report.miou = sum / static_cast<double>(report.per_episode_iou.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little endian):
//   "CFSS1"
//   u32 length + canonical config text
//   u32 length + config digest
//   u32 parameter count
//   per parameter: u32 length + name, u32 rank, u32 dims[rank], float32 data

inline constexpr char kCheckpointMagic[] = "CFSS1";

struct Checkpoint {
  TrainConfig config;
  std::string config_text;
  std::string digest;
  std::vector<std::pair<std::string, Tensor<float>>> parameters;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw LoadError(source_ + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const ParameterStore<T>& store, const TrainConfig& cfg) {
  std::string out(kCheckpointMagic);
  detail::put_string(out, serialize(cfg));
  detail::put_string(out, config_digest(cfg));
  detail::put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (int i = 0; i < store.size(); ++i) {
    detail::put_string(out, store.name(i));
    const Tensor<T>& v = store.value(i);
    detail::put_u32(out, static_cast<std::uint32_t>(v.rank()));
    for (int d : v.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t j = 0; j < v.size(); ++j) {
      const float f = static_cast<float>(v[j]);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  return out;
}

template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(store, cfg));
}

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (bytes.compare(0, magic_len, kCheckpointMagic) != 0) {
    throw LoadError(source + ": bad magic, not a CFSS1 checkpoint");
  }
  const std::string body = bytes.substr(magic_len);
  detail::Reader in(body, source);
  Checkpoint ck;
  ck.config_text = in.str();
  ck.digest = in.str();
  try {
    ck.config = parse_train_config(ck.config_text);
  } catch (const ArgumentError& e) {
    throw LoadError(source + ": invalid embedded config: " + e.what());
  }
  if (config_digest(ck.config) != ck.digest) {
    throw LoadError(source + ": config digest mismatch");
  }
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const std::uint32_t rank = in.u32();
    if (rank == 0 || rank > 8) throw LoadError(source + ": parameter '" + name + "' has bad rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t n = in.u32();
      if (n == 0 || n > (1u << 24)) throw LoadError(source + ": parameter '" + name + "' has bad dims");
      shape.push_back(static_cast<int>(n));
    }
    const std::size_t n = numel(shape);
    const std::string raw = in.raw(n * 4);
    std::vector<float> data(n);
    std::memcpy(data.data(), raw.data(), n * 4);
    ck.parameters.emplace_back(std::move(name), Tensor<float>(shape, std::move(data)));
  }
  if (!in.done()) throw LoadError(source + ": trailing bytes after parameters");
  return ck;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

// Copies checkpoint tensors into `store`; names and shapes must match exactly.
template <typename T>
void load_parameters(ParameterStore<T>& store, const Checkpoint& ck) {
  if (static_cast<int>(ck.parameters.size()) != store.size()) {
    throw LoadError("checkpoint holds " + std::to_string(ck.parameters.size()) +
                    " parameters, model expects " + std::to_string(store.size()));
  }
  for (int i = 0; i < store.size(); ++i) {
    const auto& [name, value] = ck.parameters[i];
    if (name != store.name(i)) {
      throw LoadError("checkpoint parameter " + std::to_string(i) + " is '" + name + "', model expects '" +
                      store.name(i) + "'");
    }
    if (value.shape() != store.value(i).shape()) {
      throw LoadError("shape mismatch for '" + name + "': checkpoint " + shape_string(value.shape()) +
                      ", model " + shape_string(store.value(i).shape()));
    }
  }
  for (int i = 0; i < store.size(); ++i) {
    store.mutable_value(i) = ck.parameters[i].second.template cast<T>();
  }
}

// Builds the network described by the checkpoint's config and loads its weights.
template <typename T>
std::unique_ptr<Network<T>> load_network(const Checkpoint& ck) {
  auto net = std::make_unique<Network<T>>(ck.config.network(), ck.config.seed);
  load_parameters(net->parameters(), ck);
  return net;
}

}  // namespace cfss
