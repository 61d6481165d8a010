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
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "cfss/data.hpp"
#include "cfss/engine.hpp"

namespace cfss {
namespace {

// First seeded episode whose support masks survive on the feature grids.
Episode fitting_episode(const Encoder<float>& enc, const CrackDataset& ds, int shots) {
  for (std::uint64_t s = 0;; ++s) {
    Episode ep = sample_episode(ds, shots, s);
    if (episode_fits_grid(enc, ep)) return ep;
  }
}

const CrackDataset& dataset64() {
  static const CrackDataset ds = synth_dataset(12, 64, 64, 21);
  return ds;
}

void expect_in_open_unit(const Var<float>& v, const char* what) {
  ASSERT_TRUE(v.defined()) << what;
  for (float x : v.value().values()) {
    ASSERT_GT(x, 0.0f) << what;
    ASSERT_LT(x, 1.0f) << what;
  }
}

class ForwardContract : public ::testing::TestWithParam<int> {};

TEST_P(ForwardContract, ProbabilitiesPriorAndAttentionRanges) {
  const int shots = GetParam();
  Network<float> net(NetworkConfig{}, 3);
  const Episode ep = fitting_episode(net.encoder(), dataset64(), shots);
  const ForwardResult<float> r = net.predict(ep);
  ASSERT_EQ(r.probabilities.shape(), (Shape{2, 64, 64}));
  const Tensor<float>& p = r.probabilities.value();
  for (std::size_t i = 0; i < 64 * 64; ++i) EXPECT_NEAR(p[i] + p[64 * 64 + i], 1.0f, 1e-5f);
  EXPECT_EQ(r.prior.data.shape(), (Shape{1, 8, 8}));
  expect_in_open_unit(r.prior.data, "prior");
  expect_in_open_unit(r.channel_weights, "channel attention");
  expect_in_open_unit(r.spatial_weights, "spatial attention");
  EXPECT_EQ(r.channel_weights.shape(), (Shape{64, 1, 1}));
  EXPECT_EQ(r.spatial_weights.shape(), (Shape{1, 8, 8}));
  EXPECT_TRUE(r.first_non_finite().empty());
}

INSTANTIATE_TEST_SUITE_P(Shots, ForwardContract, ::testing::Values(1, 5));

TEST(Network, LossesCombineWithConfiguredWeights) {
  Network<float> net(NetworkConfig{}, 4);
  const Episode ep = fitting_episode(net.encoder(), dataset64(), 1);
  Binding<float> params(net.parameters(), false);
  const LossWeights w{0.3, 0.2, 0.1};
  const ForwardResult<float> r = net.forward(params, ep, w, true);
  const double expected = 0.3 * r.seg.value()[0] + 0.2 * r.prior_term.value()[0] + 0.1 * r.ssp.value()[0];
  EXPECT_NEAR(r.total.value()[0], expected, 1e-5);
  EXPECT_GT(r.seg.value()[0], 0.0f);
}

TEST(Network, TogglesSelectTheAblationPaths) {
  const Episode ep = [] {
    Network<float> probe(NetworkConfig{}, 5);
    return fitting_episode(probe.encoder(), dataset64(), 1);
  }();

  NetworkConfig cfg;
  cfg.toggles = {false, false, false, false};
  Network<float> base(cfg, 5);
  Binding<float> params(base.parameters(), false);
  const ForwardResult<float> r = base.forward(params, ep, LossWeights{}, true);
  for (float v : r.prior.data.value().values()) EXPECT_EQ(v, 0.5f);
  EXPECT_NEAR(r.prior_term.value()[0], std::numbers::ln2, 1e-6);
  EXPECT_FALSE(r.channel_weights.defined());
  EXPECT_FALSE(r.spatial_weights.defined());
  EXPECT_EQ(r.refined_prototypes.foreground.data.node(), r.fused_prototypes.foreground.data.node());

  // Without fusion the prototypes are the RGB-branch pooled features.
  const FeatureBundle<float> support = base.encode(params, ep.support[0].image);
  const Tensor<float> rgb_fg =
      masked_average_pool(support.mid_rgb, ep.support[0].mask, Polarity::kForeground).data.value();
  EXPECT_EQ(r.fused_prototypes.foreground.data.value(), rgb_fg);

  cfg.toggles = {true, true, true, true};
  Network<float> full(cfg, 5);
  Binding<float> full_params(full.parameters(), false);
  const ForwardResult<float> f = full.forward(full_params, ep, LossWeights{}, true);
  EXPECT_TRUE(f.channel_weights.defined());
  EXPECT_NE(f.fused_prototypes.foreground.data.value(), rgb_fg);
}

TEST(Network, EveryParameterReceivesGradient) {
  Network<float> net(NetworkConfig{}, 6);
  const Episode ep = fitting_episode(net.encoder(), dataset64(), 1);
  Binding<float> params(net.parameters(), true);
  const ForwardResult<float> r = net.forward(params, ep, LossWeights{}, true);
  backward(r.total);
  const auto grads = params.gradients();
  ASSERT_EQ(static_cast<int>(grads.size()), net.parameters().size());
  for (int i = 0; i < net.parameters().size(); ++i) {
    EXPECT_TRUE(grads[i].all_finite()) << net.parameters().name(i);
    double norm = 0;
    for (float g : grads[i].values()) norm += std::abs(g);
    EXPECT_GT(norm, 0.0) << net.parameters().name(i);
  }
}

TEST(Network, NonFiniteLossNamesFirstBadStage) {
  Network<float> net(NetworkConfig{}, 7);
  const int bias = *net.parameters().find("encoder.mid_proj.bias");
  net.parameters().mutable_value(bias)[0] = std::numeric_limits<float>::quiet_NaN();
  const Episode ep = fitting_episode(net.encoder(), dataset64(), 1);
  EXPECT_EQ(net.predict(ep).first_non_finite(), "mid_rgb(support 0)");

  TrainConfig cfg;
  cfg.image_height = cfg.image_width = 64;
  Trainer<float> trainer(net, cfg);
  try {
    trainer.step({ep}, 1e-3);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("mid_rgb(support 0)"), std::string::npos) << e.what();
  }
}

TEST(Network, RejectsInconsistentEpisodes) {
  Network<float> net(NetworkConfig{}, 8);
  Episode ep = fitting_episode(net.encoder(), dataset64(), 1);
  ep.support[0].mask = BinaryMask::filled(64, 64, false);
  EXPECT_THROW(net.predict(ep), EmptyForeground);
  ep.support.clear();
  EXPECT_THROW(net.predict(ep), ArgumentError);
}

}  // namespace
}  // namespace cfss
