#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "grad_check.hpp"
#include "lisa/errors.hpp"
#include "lisa/fam_fusion.hpp"
#include "lisa/geometry.hpp"

namespace lisa {
namespace {

using testing::numeric_gradient;
using testing::Probe;
using testing::relative_error;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

SpectralTensor random_spectrum(int c, int h, int w, Rng& rng) {
  return {random_tensor({c, h, w / 2 + 1}, rng), random_tensor({c, h, w / 2 + 1}, rng), h, w};
}

// Radius written from scratch: wrapped vertical index, Nyquist corner at 1.
bool in_mask_oracle(int u, int v, int h, int w, double gamma) {
  const double fu = (u <= h / 2 ? u : h - u) / (h / 2.0);
  const double fv = v / (w / 2.0);
  return std::hypot(fu, fv) / std::sqrt(2.0) <= gamma;
}

TEST(LowFreqMask, GammaOneKeepsEverything) {
  for (MaskShape s : {MaskShape::radial, MaskShape::rectangular}) {
    const LowFreqMask m = build_low_freq_mask(8, 5, 1.0, s);
    for (double v : m.mask.values()) EXPECT_EQ(v, 1.0);
  }
}

TEST(LowFreqMask, TinyGammaKeepsOnlyDc) {
  const LowFreqMask m = build_low_freq_mask(8, 5, 1e-9);
  EXPECT_EQ(m.mask.at(0, 0), 1.0);
  double total = 0.0;
  for (double v : m.mask.values()) total += v;
  EXPECT_EQ(total, 1.0);
}

TEST(LowFreqMask, MatchesPerBinRadiusOracle) {
  const LowFreqMask m = build_low_freq_mask(8, 5, 0.5);
  ASSERT_EQ(m.mask.shape(), (std::vector<int>{8, 5}));
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 5; ++v) EXPECT_EQ(m.mask.at(u, v), in_mask_oracle(u, v, 8, 8, 0.5) ? 1.0 : 0.0);
}

TEST(LowFreqMask, RectangularShape) {
  const LowFreqMask m = build_low_freq_mask(8, 5, 0.5, MaskShape::rectangular);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 5; ++v) {
      const bool keep = std::min(u, 8 - u) <= 2 && v <= 2;
      EXPECT_EQ(m.mask.at(u, v), keep ? 1.0 : 0.0);
    }
}

TEST(LowFreqMask, BinaryMonotoneAndDcInclusive) {
  for (int h : {4, 7, 8, 16})
    for (int w : {4, 5, 8, 13}) {
      const int wh = w / 2 + 1;
      LowFreqMask prev = build_low_freq_mask(h, wh, 0.01, MaskShape::radial, w);
      for (double g = 0.05; g <= 1.0; g += 0.05) {
        const LowFreqMask m = build_low_freq_mask(h, wh, g, MaskShape::radial, w);
        EXPECT_EQ(m.mask.at(0, 0), 1.0);
        for (std::size_t i = 0; i < m.mask.size(); ++i) {
          EXPECT_TRUE(m.mask[i] == 0.0 || m.mask[i] == 1.0);
          EXPECT_GE(m.mask[i], prev.mask[i]);
        }
        prev = m;
      }
    }
}

TEST(LowFreqMask, RejectsGammaOutsideUnitInterval) {
  EXPECT_THROW(build_low_freq_mask(8, 5, 0.0), InvalidArgument);
  EXPECT_THROW(build_low_freq_mask(8, 5, -0.1), InvalidArgument);
  EXPECT_THROW(build_low_freq_mask(8, 5, 1.0001), InvalidArgument);
  EXPECT_THROW(build_low_freq_mask(8, 5, std::nan("")), InvalidArgument);
}

TEST(SpectralMix, MatchesScalarLoop) {
  Rng rng(2);
  const SpectralTensor yd = random_spectrum(1, 4, 4, rng), yg = random_spectrum(1, 4, 4, rng);
  const LowFreqMask m = build_low_freq_mask(4, 3, 0.5);
  const SpectralTensor out = spectral_mix(yd, yg, m, 0.5);
  for (int u = 0; u < 4; ++u)
    for (int v = 0; v < 3; ++v) {
      const int i = u * 3 + v;
      const std::complex<double> d(yd.re[i], yd.im[i]), g(yg.re[i], yg.im[i]);
      const double am = 0.5 * m.mask.at(u, v);
      const std::complex<double> ref = d * (1.0 - am) + g * am;
      EXPECT_NEAR(out.re[i], ref.real(), 1e-15);
      EXPECT_NEAR(out.im[i], ref.imag(), 1e-15);
    }
}

TEST(SpectralMix, OutsideMaskBitIdenticalAndIdentityBlend) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const SpectralTensor yd = random_spectrum(2, 8, 8, rng), yg = random_spectrum(2, 8, 8, rng);
    const LowFreqMask m = build_low_freq_mask(8, 5, rng.uniform(0.05, 1.0));
    const double alpha = sigmoid(rng.normal() * 3.0);
    const SpectralTensor out = spectral_mix(yd, yg, m, alpha);
    for (std::size_t i = 0; i < out.re.size(); ++i) {
      if (m.mask[i % m.mask.size()] == 0.0) {
        EXPECT_EQ(out.re[i], yd.re[i]);
        EXPECT_EQ(out.im[i], yd.im[i]);
      }
    }
    const SpectralTensor same = spectral_mix(yd, yd, m, alpha);
    for (std::size_t i = 0; i < same.re.size(); ++i) {
      EXPECT_NEAR(same.re[i], yd.re[i], 1e-15 * (1 + std::abs(yd.re[i])));
    }
  }
}

TEST(SpectralMix, AlphaToZeroReturnsDetail) {
  Rng rng(4);
  const SpectralTensor yd = random_spectrum(1, 4, 6, rng), yg = random_spectrum(1, 4, 6, rng);
  const LowFreqMask m = build_low_freq_mask(4, 4, 1.0, MaskShape::radial, 6);
  const SpectralTensor out = spectral_mix(yd, yg, m, sigmoid(-1e6));
  for (std::size_t i = 0; i < out.re.size(); ++i) {
    EXPECT_NEAR(out.re[i], yd.re[i], 1e-12);
    EXPECT_NEAR(out.im[i], yd.im[i], 1e-12);
  }
}

TEST(SpectralMix, ShapeMismatchNamesBothShapes) {
  Rng rng(5);
  const SpectralTensor a = random_spectrum(1, 4, 4, rng), b = random_spectrum(2, 4, 4, rng);
  const LowFreqMask m = build_low_freq_mask(4, 3, 0.5);
  try {
    spectral_mix(a, b, m, 0.5);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(a.re.shape_str()), std::string::npos);
    EXPECT_NE(what.find(b.re.shape_str()), std::string::npos);
  }
}

TEST(SaliencyGate, ZeroWeightsGiveHalfAttention) {
  Rng rng(6);
  SaliencyGate gate(4, 4, 0.1);
  const Tensor ff = random_tensor({2, 4, 5, 5}, rng), fg = random_tensor({2, 4, 5, 5}, rng);
  const auto out = gate.forward(ff, fg);
  for (double a : out.attention.values()) EXPECT_EQ(a, 0.5);
  for (std::size_t i = 0; i < ff.size(); ++i) EXPECT_NEAR(out.fused[i], ff[i] * 0.6, 1e-15);
}

TEST(SaliencyGate, ElementwiseOracleAndRatioBounds) {
  Rng rng(7);
  SaliencyGate gate(4, 4, 0.1);
  gate.init(rng);
  const Tensor ff = random_tensor({2, 4, 6, 6}, rng), fg = random_tensor({2, 4, 6, 6}, rng);
  const auto out = gate.forward(ff, fg);
  ASSERT_EQ(out.attention.shape(), (std::vector<int>{2, 1, 6, 6}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
          const double a = out.attention.at(n, 0, i, j);
          EXPECT_GT(a, 0.0);
          EXPECT_LT(a, 1.0);
          EXPECT_DOUBLE_EQ(out.fused.at(n, c, i, j), ff.at(n, c, i, j) * (a + 0.1));
          const double ratio = out.fused.at(n, c, i, j) / ff.at(n, c, i, j);
          EXPECT_GT(ratio, 0.1);
          EXPECT_LT(ratio, 1.1);
        }
  const auto zero = gate.forward(Tensor({2, 4, 6, 6}), fg);
  for (double v : zero.fused.values()) EXPECT_EQ(v, 0.0);
}

TEST(SaliencyGate, SpatialMismatchRejected) {
  Rng rng(8);
  SaliencyGate gate(2, 4, 0.1);
  EXPECT_THROW(gate.forward(Tensor({1, 2, 4, 4}), Tensor({1, 2, 5, 5})), ShapeError);
}

TEST(FamFusion, AlphaStaysInsideUnitInterval) {
  FamFusion f(4, FusionParams{});
  for (double logit : {-1e6, -50.0, 0.0, 50.0, 1e6}) {
    f.alpha_logit.value[0] = logit;
    EXPECT_GT(f.alpha(), 0.0);
    EXPECT_LT(f.alpha(), 1.0);
  }
  EXPECT_EQ(FusionParams{}.hidden_for(64), 16);
  EXPECT_EQ(FusionParams{}.hidden_for(8), 4);
}

TEST(FamFusion, FullReplacementDegeneratesToGuide) {
  Rng rng(9);
  FusionParams p;
  p.gamma = 1.0;
  FamFusion f(3, p);
  f.init(rng);
  f.saliency_gating = false;
  f.alpha_logit.value[0] = 40.0;
  FeaturePair pair{{random_tensor({2, 3, 8, 8}, rng), Tap::aligned},
                   {random_tensor({2, 3, 8, 8}, rng), Tap::aligned}};
  const FeatureMap out = f.forward(pair);
  EXPECT_EQ(out.tap, Tap::fused);
  for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_NEAR(out.data[i], pair.guide.data[i], 1e-9);
}

TEST(FamFusion, IdenticalStreamsMakeSpectralStageIdentity) {
  Rng rng(10);
  FamFusion f(3, FusionParams{});
  f.init(rng);
  const Tensor x = random_tensor({1, 3, 8, 8}, rng);
  const FeatureMap out = f.forward({{x, Tap::aligned}, {x, Tap::aligned}});
  const Tensor& a = f.last_attention();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        EXPECT_NEAR(out.data.at(0, c, i, j), x.at(0, c, i, j) * (a.at(0, 0, i, j) + 0.1), 1e-12);
      }
}

TEST(FamFusion, InjectionOffPassesDetailThrough) {
  Rng rng(11);
  FamFusion f(2, FusionParams{});
  f.init(rng);
  f.spectral_injection = false;
  f.saliency_gating = false;
  FeaturePair pair{{random_tensor({1, 2, 8, 8}, rng), Tap::aligned},
                   {random_tensor({1, 2, 8, 8}, rng), Tap::aligned}};
  const FeatureMap out = f.forward(pair);
  for (std::size_t i = 0; i < out.data.size(); ++i) EXPECT_EQ(out.data[i], pair.detail.data[i]);
}

TEST(FamFusion, UnalignedStreamsRejected) {
  FamFusion f(2, FusionParams{});
  EXPECT_THROW(f.forward({{Tensor({1, 2, 8, 8}), Tap::aligned}, {Tensor({1, 2, 4, 4}), Tap::aligned}}),
               ShapeError);
}

struct FuseCase {
  bool injection;
  bool gating;
  int h, w;
};

class FamFusionGradients : public ::testing::TestWithParam<FuseCase> {};

TEST_P(FamFusionGradients, MatchFiniteDifferences) {
  const FuseCase fc = GetParam();
  for (int instance = 0; instance < 5; ++instance) {
    Rng rng(100 + instance);
    FusionParams p;
    p.gamma = rng.uniform(0.2, 1.0);
    p.alpha_logit = rng.normal();
    FamFusion f(2, p);
    f.init(rng);
    f.spectral_injection = fc.injection;
    f.saliency_gating = fc.gating;
    FeaturePair pair{{random_tensor({2, 2, fc.h, fc.w}, rng), Tap::aligned},
                     {random_tensor({2, 2, fc.h, fc.w}, rng), Tap::aligned}};
    const Tensor y0 = f.forward(pair).data;
    Probe probe;
    for (std::size_t i = 0; i < y0.size(); ++i) probe.weights.push_back(rng.normal());
    auto loss = [&] { return probe(f.forward(pair).data.values()); };

    f.forward(pair);
    std::vector<Param*> params;
    f.collect(params);
    for (Param* q : params) q->zero_grad();
    Tensor dy(y0.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = probe.weights[i];
    const auto [dd, dg] = f.backward(dy);

    EXPECT_LT(relative_error(dd.values(), numeric_gradient(pair.detail.data.values(), loss)), 1e-6);
    EXPECT_LT(relative_error(dg.values(), numeric_gradient(pair.guide.data.values(), loss)), 1e-6);
    for (Param* q : params) {
      if (!fc.gating && q->name != "fusion.alpha_logit") continue;
      const Tensor analytic = q->grad;
      const std::vector<double> numeric = numeric_gradient(q->value.values(), loss);
      if (q->name == "fusion.alpha_logit" && !fc.injection) {
        EXPECT_EQ(analytic[0], 0.0);
        EXPECT_NEAR(numeric[0], 0.0, 1e-12);
        continue;
      }
      // Gate weights sit behind GELU and sigmoid, so the O(h^2) truncation of
      // central differences shows up around 1e-6.
      EXPECT_LT(relative_error(analytic.values(), numeric), 1e-4) << q->name;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Fusion, FamFusionGradients,
                         ::testing::Values(FuseCase{true, true, 8, 8}, FuseCase{true, true, 6, 5},
                                           FuseCase{true, false, 8, 8},
                                           FuseCase{false, true, 4, 4}));

TEST(SpectrumStability, ScaleInvarianceAndIdentity) {
  Rng rng(12);
  const Tensor f = random_tensor({3, 16, 16}, rng);
  EXPECT_EQ(spectrum_stability(f, f), 0.0);
  for (double k : {0.25, 0.5, 2.0, 4.0, 1e3}) {
    Tensor g = f;
    g *= k;
    EXPECT_NEAR(spectrum_stability(f, g), 0.0, 1e-12);
    EXPECT_NEAR(spatial_distance(f, g), 0.0, 1e-12);
  }
}

TEST(SpectrumStability, MatchesScalarRecomputation) {
  Rng rng(13);
  const int h = 8, w = 6, wh = w / 2 + 1;
  const Tensor f = random_tensor({2, h, w}, rng);
  Tensor g = f;
  for (double& v : g.values()) v += 0.3 * rng.normal();

  double total = 0.0;
  for (int p = 0; p < 2; ++p) {
    std::vector<double> a, b;
    for (int u = 0; u < h; ++u)
      for (int v = 0; v < wh; ++v) {
        std::complex<double> za = 0.0, zb = 0.0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double t = -2.0 * kPi * (double(u * y) / h + double(v * x) / w);
            const std::complex<double> e(std::cos(t), std::sin(t));
            za += f[(p * h + y) * w + x] * e;
            zb += g[(p * h + y) * w + x] * e;
          }
        a.push_back(std::abs(za));
        b.push_back(std::abs(zb));
      }
    double la = 0, lb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) la += a[i], lb += b[i];
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      num += (a[i] / la - b[i] / lb) * (a[i] / la - b[i] / lb);
      den += (a[i] / la) * (a[i] / la);
    }
    total += std::sqrt(num / den);
  }
  EXPECT_NEAR(spectrum_stability(f, g), total / 2, 1e-10);
  EXPECT_GT(spectrum_stability(f, g), 0.0);
}

TEST(SpectrumStability, ErrorsOnZeroOrMismatch) {
  EXPECT_THROW(spectrum_stability(Tensor({1, 4, 4}), Tensor({1, 4, 4}, 1.0)), InvalidArgument);
  EXPECT_THROW(spectrum_stability(Tensor({1, 4, 4}, 1.0), Tensor({1, 4, 5}, 1.0)), InvalidArgument);
}

}  // namespace
}  // namespace lisa
