#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "lisa/backbone.hpp"
#include "lisa/errors.hpp"

namespace lisa {
namespace {

using testing::numeric_gradient;
using testing::Probe;
using testing::relative_error;

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal();
  return t;
}

BackboneConfig wide_config() {
  BackboneConfig cfg;
  cfg.stage_channels = {16, 32, 64, 128};
  cfg.detail_stage_index = 1;
  cfg.guide_stage_index = 3;
  cfg.aligned_channels = 64;
  return cfg;
}

TEST(BackboneConfig, Validation) {
  EXPECT_NO_THROW(BackboneConfig{}.validate());
  BackboneConfig c;
  c.detail_stage_index = 3;
  c.guide_stage_index = 3;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = BackboneConfig{};
  c.guide_stage_index = 4;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = BackboneConfig{};
  c.stage_channels[2] = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = BackboneConfig{};
  c.aligned_channels = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Backbone, TapShapes) {
  Rng rng(1);
  Backbone net(wide_config());
  net.init(rng);
  const BackboneTaps taps = net.forward(random_tensor({1, 3, 64, 64}, rng), Mode::train);
  EXPECT_EQ(taps.detail.data.shape(), (std::vector<int>{1, 32, 32, 32}));
  EXPECT_EQ(taps.guide.data.shape(), (std::vector<int>{1, 128, 8, 8}));
  EXPECT_EQ(taps.detail.tap, Tap::detail);
  EXPECT_EQ(taps.guide.tap, Tap::guide);
}

TEST(Backbone, ZeroWeightsZeroInputGiveZeroFeatures) {
  Backbone net(wide_config());
  const BackboneTaps taps = net.forward(Tensor({2, 3, 16, 16}), Mode::eval);
  for (double v : taps.detail.data.values()) EXPECT_EQ(v, 0.0);
  for (double v : taps.guide.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, DeterministicUnderFixedWeights) {
  Rng rng(2);
  Backbone net(BackboneConfig{});
  net.init(rng);
  const Tensor x = random_tensor({2, 3, 16, 16}, rng);
  const BackboneTaps a = net.forward(x, Mode::eval);
  const BackboneTaps b = net.forward(x, Mode::eval);
  for (std::size_t i = 0; i < a.guide.data.size(); ++i) EXPECT_EQ(a.guide.data[i], b.guide.data[i]);
  for (std::size_t i = 0; i < a.detail.data.size(); ++i) EXPECT_EQ(a.detail.data[i], b.detail.data[i]);
}

TEST(Backbone, IndivisibleInputNamesStage) {
  Backbone net(BackboneConfig{});
  try {
    net.check_input_shape(20, 16);  // 20 -> 10 -> 5, stage 3 cannot halve 5
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 3"), std::string::npos) << e.what();
  }
  Rng rng(3);
  EXPECT_THROW(net.forward(random_tensor({1, 3, 16, 12}, rng), Mode::eval), ShapeError);
  EXPECT_THROW(net.forward(random_tensor({1, 1, 16, 16}, rng), Mode::eval), ShapeError);
}

TEST(Backbone, InputGradientMatchesFiniteDifferences) {
  BackboneConfig cfg;
  cfg.stage_channels = {3, 4, 5};
  cfg.detail_stage_index = 1;
  cfg.guide_stage_index = 2;
  cfg.aligned_channels = 4;
  for (Mode mode : {Mode::eval, Mode::train}) {
    for (int instance = 0; instance < 20; ++instance) {
      Rng rng(300 + instance);
      Backbone net(cfg);
      net.init(rng);
      std::vector<Buffer> buffers;
      net.collect_buffers(buffers);
      for (Buffer& b : buffers) {
        const bool var = b.name.find("var") != std::string::npos;
        for (double& v : b.value->values()) v = var ? 0.5 + rng.uniform() : 0.2 * rng.normal();
      }
      Tensor x = random_tensor({mode == Mode::train ? 2 : 1, 3, 8, 8}, rng);
      const BackboneTaps t0 = net.forward(x, mode);
      Probe pd, pg;
      for (std::size_t i = 0; i < t0.detail.data.size(); ++i) pd.weights.push_back(rng.normal());
      for (std::size_t i = 0; i < t0.guide.data.size(); ++i) pg.weights.push_back(rng.normal());
      auto loss = [&] {
        const BackboneTaps t = net.forward(x, mode);
        return pd(t.detail.data.values()) + pg(t.guide.data.values());
      };
      net.forward(x, mode);
      Tensor dd(t0.detail.data.shape()), dg(t0.guide.data.shape());
      for (std::size_t i = 0; i < dd.size(); ++i) dd[i] = pd.weights[i];
      for (std::size_t i = 0; i < dg.size(); ++i) dg[i] = pg.weights[i];
      const Tensor dx = net.backward(dd, dg, true);
      // Running statistics drift during the probes in train mode but never feed
      // the train-mode output, so the objective stays a fixed function of x.
      EXPECT_LT(relative_error(dx.values(), numeric_gradient(x.values(), loss)), 1e-3)
          << (mode == Mode::train ? "train" : "eval") << " instance " << instance;
    }
  }
}

TEST(Align, SharedShapeAndTaps) {
  Rng rng(4);
  FeatureAlign align(32, 128, 64);
  align.init(rng);
  const FeaturePair p = align.forward({random_tensor({1, 32, 32, 32}, rng), Tap::detail},
                                      {random_tensor({1, 128, 8, 8}, rng), Tap::guide}, Mode::train);
  EXPECT_EQ(p.detail.data.shape(), (std::vector<int>{1, 64, 32, 32}));
  EXPECT_EQ(p.guide.data.shape(), (std::vector<int>{1, 64, 32, 32}));
  EXPECT_EQ(p.detail.tap, Tap::aligned);
  EXPECT_EQ(p.guide.tap, Tap::aligned);
}

TEST(Align, SameResolutionGuide) {
  Rng rng(5);
  FeatureAlign align(4, 6, 5);
  align.init(rng);
  const FeaturePair p = align.forward({random_tensor({2, 4, 8, 8}, rng), Tap::detail},
                                      {random_tensor({2, 6, 8, 8}, rng), Tap::guide}, Mode::eval);
  EXPECT_EQ(p.guide.data.shape(), (std::vector<int>{2, 5, 8, 8}));
}

TEST(Align, ConstantGuideStaysConstant) {
  // Zero 1x1 weights with a bias make the projected guide constant per channel;
  // upsampling must keep it constant.
  FeatureAlign align(2, 3, 2);
  std::vector<Param*> params;
  align.collect(params);
  Rng rng(6);
  const FeaturePair p = align.forward({random_tensor({1, 2, 8, 8}, rng), Tap::detail},
                                      {Tensor({1, 3, 2, 2}, 1.7), Tap::guide}, Mode::eval);
  for (int c = 0; c < 2; ++c) {
    const double ref = p.guide.data.at(0, c, 0, 0);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) EXPECT_NEAR(p.guide.data.at(0, c, i, j), ref, 1e-12);
  }
  const Tensor up = bilinear_resize(Tensor({1, 1, 3, 3}, -2.25), 17, 11);
  for (double v : up.values()) EXPECT_NEAR(v, -2.25, 1e-12);
}

TEST(Align, RejectsWrongTapsOrLargerGuide) {
  FeatureAlign align(2, 2, 2);
  EXPECT_THROW(align.forward({Tensor({1, 2, 4, 4}), Tap::guide}, {Tensor({1, 2, 2, 2}), Tap::guide},
                             Mode::eval),
               InvalidArgument);
  EXPECT_THROW(align.forward({Tensor({1, 2, 4, 4}), Tap::detail}, {Tensor({1, 2, 8, 8}), Tap::guide},
                             Mode::eval),
               InvalidArgument);
}

TEST(Align, GradientsMatchFiniteDifferences) {
  for (int instance = 0; instance < 5; ++instance) {
    Rng rng(400 + instance);
    FeatureAlign align(3, 4, 2);
    align.init(rng);
    FeatureMap d{random_tensor({2, 3, 6, 6}, rng), Tap::detail};
    FeatureMap g{random_tensor({2, 4, 3, 3}, rng), Tap::guide};
    const FeaturePair p0 = align.forward(d, g, Mode::train);
    Probe pd, pg;
    for (std::size_t i = 0; i < p0.detail.data.size(); ++i) pd.weights.push_back(rng.normal());
    for (std::size_t i = 0; i < p0.guide.data.size(); ++i) pg.weights.push_back(rng.normal());
    auto loss = [&] {
      const FeaturePair p = align.forward(d, g, Mode::train);
      return pd(p.detail.data.values()) + pg(p.guide.data.values());
    };
    align.forward(d, g, Mode::train);
    Tensor dd(p0.detail.data.shape()), dg(p0.guide.data.shape());
    for (std::size_t i = 0; i < dd.size(); ++i) dd[i] = pd.weights[i];
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] = pg.weights[i];
    std::vector<Param*> params;
    align.collect(params);
    for (Param* q : params) q->zero_grad();
    const auto [gd, gg] = align.backward(dd, dg);
    EXPECT_LT(relative_error(gd.values(), numeric_gradient(d.data.values(), loss)), 1e-4);
    EXPECT_LT(relative_error(gg.values(), numeric_gradient(g.data.values(), loss)), 1e-4);
    for (Param* q : params) {
      const Tensor analytic = q->grad;
      const std::vector<double> numeric = numeric_gradient(q->value.values(), loss);
      if (q->name.ends_with("conv.bias")) {
        // Batch normalization cancels a per-channel bias, so both sides are zero
        // up to roundoff.
        for (std::size_t i = 0; i < numeric.size(); ++i) {
          EXPECT_NEAR(analytic[i], 0.0, 1e-9);
          EXPECT_NEAR(numeric[i], 0.0, 1e-9);
        }
        continue;
      }
      EXPECT_LT(relative_error(analytic.values(), numeric), 1e-4) << q->name;
    }
  }
}

}  // namespace
}  // namespace lisa
