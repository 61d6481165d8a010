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

// The full dual-branch few-shot network: shared encoder over RGB and
// reflectance, prototype fusion, prior mask, query enhancement, self-support
// refinement and cosine-metric prediction, plus the three training losses.

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cfss/cspmg.hpp"
#include "cfss/encoder.hpp"
#include "cfss/loss.hpp"
#include "cfss/msfe.hpp"
#include "cfss/prototype.hpp"
#include "cfss/retinex.hpp"

namespace cfss {

// Which components are active (the ablation switches).
struct ModuleToggles {
  bool cspmg = true;
  bool msfe = true;
  bool pfm = true;
  bool ssp = true;

  friend bool operator==(const ModuleToggles&, const ModuleToggles&) = default;
};

struct NetworkConfig {
  BackboneConfig backbone;
  ModuleToggles toggles;
  double temperature = kDefaultTemperature;
  SspOptions ssp;
};

template <typename T>
struct ForwardResult {
  Var<T> probabilities;      // (2, H, W) at image resolution
  Var<T> grid_probabilities; // (2, Hm, Wm)
  PriorMask<T> prior;
  Var<T> channel_weights;    // undefined when MSFE is off
  Var<T> spatial_weights;    // undefined when MSFE is off
  PrototypePair<T> fused_prototypes;    // P'
  PrototypePair<T> refined_prototypes;  // P''
  // Filled when the query mask is used for losses.
  Var<T> seg, prior_term, ssp, total;
  // Intermediate tensors in evaluation order, for non-finite diagnostics.
  std::vector<std::pair<std::string, Var<T>>> stages;

  Var<T> foreground() const { return select_channel(probabilities, 0); }

  // Name of the first stage holding a NaN/Inf, or empty.
  std::string first_non_finite() const {
    for (const auto& [name, v] : stages) {
      if (v.defined() && !v.value().all_finite()) return name;
    }
    return {};
  }
};

template <typename T>
class Network {
 public:
  Network(const NetworkConfig& config, std::uint64_t seed) : config_(config) {
    std::mt19937_64 rng(seed);
    const int cm = config.backbone.mid_channels;
    encoder_ = Encoder<T>(store_, config.backbone, rng);
    high_proj_ = Conv2d<T>(store_, "ssp.high_proj", config.backbone.high_channels(), cm, 1, {}, rng);
    prior_ = PriorMaskGenerator<T>(store_, rng);
    msfe_ = Msfe<T>(store_, cm, rng);
    pfm_ = PrototypeFusion<T>(store_, cm, rng);
  }

  const NetworkConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Msfe<T>& msfe() const { return msfe_; }
  const PriorMaskGenerator<T>& prior_generator() const { return prior_; }
  const PrototypeFusion<T>& prototype_fusion() const { return pfm_; }

  FeatureBundle<T> encode(Binding<T>& params, const Image& image) const {
    const Decomposition d = decompose(image);
    return encoder_.encode(params, image.as<T>(), d.reflectance.as<T>());
  }

  // Forward pass over one episode. Losses are computed when `with_losses`.
  ForwardResult<T> forward(Binding<T>& params, const Episode& episode, const LossWeights& weights,
                           bool with_losses) const {
    episode.validate();
    const ModuleToggles& on = config_.toggles;
    const T tau = static_cast<T>(config_.temperature);
    ForwardResult<T> r;

    std::vector<FeatureBundle<T>> supports;
    for (const auto& s : episode.support) supports.push_back(encode(params, s.image));
    const FeatureBundle<T> query = encode(params, episode.query.image);
    for (std::size_t k = 0; k < supports.size(); ++k) {
      const std::string tag = "(support " + std::to_string(k) + ")";
      r.stages.emplace_back("mid_rgb" + tag, supports[k].mid_rgb.data);
      r.stages.emplace_back("mid_ref" + tag, supports[k].mid_ref.data);
      r.stages.emplace_back("high_rgb" + tag, supports[k].high_rgb.data);
      r.stages.emplace_back("high_ref" + tag, supports[k].high_ref.data);
    }
    r.stages.emplace_back("mid_rgb(query)", query.mid_rgb.data);
    r.stages.emplace_back("mid_ref(query)", query.mid_ref.data);
    r.stages.emplace_back("high_rgb(query)", query.high_rgb.data);
    r.stages.emplace_back("high_ref(query)", query.high_ref.data);

    // Support prototypes, averaged over shots, then fused across branches.
    auto branch_prototype = [&](Branch b, Polarity pol) {
      std::vector<Prototype<T>> shots;
      for (std::size_t k = 0; k < supports.size(); ++k) {
        shots.push_back(masked_average_pool(supports[k].mid(b), episode.support[k].mask, pol));
      }
      return average_prototypes(shots);
    };
    PrototypePair<T> rgb{branch_prototype(Branch::kRgb, Polarity::kForeground),
                         branch_prototype(Branch::kRgb, Polarity::kBackground)};
    if (on.pfm) {
      PrototypePair<T> ref{branch_prototype(Branch::kRef, Polarity::kForeground),
                           branch_prototype(Branch::kRef, Polarity::kBackground)};
      r.fused_prototypes = {pfm_(params, rgb.foreground, ref.foreground),
                            pfm_(params, rgb.background, ref.background)};
    } else {
      r.fused_prototypes = rgb;
    }
    r.stages.emplace_back("prototype_fg", r.fused_prototypes.foreground.data);
    r.stages.emplace_back("prototype_bg", r.fused_prototypes.background.data);

    const int hh = query.high_rgb.height(), wh = query.high_rgb.width();
    if (on.cspmg) {
      std::vector<const FeatureBundle<T>*> sp;
      std::vector<const BinaryMask*> masks;
      for (std::size_t k = 0; k < supports.size(); ++k) {
        sp.push_back(&supports[k]);
        masks.push_back(&episode.support[k].mask);
      }
      r.prior = prior_.generate(params, sp, query, masks);
    } else {
      r.prior = uniform_prior<T>(hh, wh);
    }
    r.stages.emplace_back("prior", r.prior.data);

    Var<T> query_fused = msfe_.fuse_modal(params, query.mid_rgb.data, query.mid_ref.data);
    r.stages.emplace_back("query_fused", query_fused);
    Var<T> enhanced = query_fused;
    if (on.msfe) {
      std::vector<Var<T>> support_fused;
      for (const auto& s : supports) {
        support_fused.push_back(msfe_.fuse_modal(params, s.mid_rgb.data, s.mid_ref.data));
      }
      MsfeOutput<T> m = msfe_.forward(params, support_fused, query_fused, r.prior.data);
      enhanced = m.features;
      r.channel_weights = m.channel_weights;
      r.spatial_weights = m.spatial_weights;
      r.stages.emplace_back("channel_attention", m.channel_weights);
      r.stages.emplace_back("spatial_attention", m.spatial_weights);
      r.stages.emplace_back("enhanced_query", enhanced);
    }

    r.refined_prototypes = on.ssp ? self_support_prototype(r.fused_prototypes, enhanced, config_.ssp, tau)
                                  : r.fused_prototypes;
    r.grid_probabilities = predict_mask(r.refined_prototypes, enhanced, tau);
    r.probabilities = resize_bilinear(r.grid_probabilities, episode.query.image.height(),
                                      episode.query.image.width());
    r.stages.emplace_back("prediction", r.probabilities);

    if (with_losses) {
      r.seg = seg_loss(r.foreground(), episode.query.mask);
      // Without the prior module the stand-in 0.5 map still enters the loss,
      // contributing a constant ln 2.
      r.prior_term = prior_loss(r.prior.data, episode.query.mask);
      std::vector<Var<T>> ssp_terms;
      for (std::size_t k = 0; k < supports.size(); ++k) {
        ssp_terms.push_back(ssp_loss(r.fused_prototypes.foreground.data,
                                     high_proj_(params, supports[k].high_rgb.data),
                                     high_proj_(params, supports[k].high_ref.data),
                                     episode.support[k].mask));
      }
      r.ssp = mean_of(ssp_terms);
      r.total = total_loss(r.seg, r.prior_term, r.ssp, weights);
      r.stages.emplace_back("loss_seg", r.seg);
      r.stages.emplace_back("loss_prior", r.prior_term);
      r.stages.emplace_back("loss_ssp", r.ssp);
    }
    return r;
  }

  // Inference without a graph.
  ForwardResult<T> predict(const Episode& episode) const {
    Binding<T> params(store_, false);
    return forward(params, episode, LossWeights{}, false);
  }

 private:
  NetworkConfig config_;
  ParameterStore<T> store_;
  Encoder<T> encoder_;
  Conv2d<T> high_proj_;
  PriorMaskGenerator<T> prior_;
  Msfe<T> msfe_;
  PrototypeFusion<T> pfm_;
};

}  // namespace cfss
