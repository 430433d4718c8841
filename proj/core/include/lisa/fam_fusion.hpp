#pragma once

#include <utility>

#include "lisa/backbone.hpp"
#include "lisa/fft.hpp"
#include "lisa/layers.hpp"

// Frequency-attention modulated fusion: low-frequency spectral injection from
// the guide stream into the detail stream, followed by a spatial saliency gate
// driven by the guide stream.

namespace lisa {

enum class MaskShape { radial, rectangular };

/// Binary [H, W/2 + 1] mask selecting low-frequency half-spectrum bins.
struct LowFreqMask {
  Tensor mask;
  double gamma = 0.0;
  MaskShape shape = MaskShape::radial;
};

/// Normalized frequency coordinates of half-spectrum bin (u, v):
/// vertical min(u, H - u) / (H / 2), horizontal v / (W / 2).
std::pair<double, double> normalized_frequency(int u, int v, int height, int width);

/// Bin (u, v) is kept when its normalized radius sqrt((fu^2 + fv^2) / 2) is at
/// most gamma (radial), or when both fu and fv are (rectangular). The radius is
/// scaled so that the Nyquist corner sits at 1, hence gamma = 1 keeps
/// everything. `width` defaults to 2 * (half_width - 1).
/// Throws InvalidArgument unless 0 < gamma <= 1.
LowFreqMask build_low_freq_mask(int height, int half_width, double gamma,
                                MaskShape shape = MaskShape::radial, int width = -1);

/// Y_fused = Y_detail * (1 - alpha M) + Y_guide * (alpha M). Bins outside the
/// mask are copied from Y_detail untouched.
SpectralTensor spectral_mix(const SpectralTensor& detail, const SpectralTensor& guide,
                            const LowFreqMask& mask, double alpha);

struct SpectralMixGrad {
  SpectralTensor d_detail;
  SpectralTensor d_guide;
  double d_alpha = 0.0;
};

SpectralMixGrad spectral_mix_backward(const SpectralTensor& grad, const SpectralTensor& detail,
                                      const SpectralTensor& guide, const LowFreqMask& mask,
                                      double alpha);

struct FusionParams {
  double alpha_logit = 0.0;  ///< initial value; alpha = sigmoid(alpha_logit)
  double gamma = 0.25;
  double epsilon = 0.1;
  int gate_hidden_channels = 0;  ///< 0 selects max(4, C / 4)
  MaskShape mask_shape = MaskShape::radial;

  int hidden_for(int channels) const;
};

/// A = sigmoid(Conv2(GELU(Conv1(F_guide)))), F_out = F_freq * (A + epsilon).
/// Both convolutions are 3x3 with padding 1; Conv2 has a single output channel.
class SaliencyGate {
 public:
  struct Output {
    Tensor fused;      ///< [N, C, H, W]
    Tensor attention;  ///< [N, 1, H, W], entries in (0, 1)
  };

  SaliencyGate() = default;
  SaliencyGate(int channels, int hidden_channels, double epsilon);

  void init(Rng& rng);
  Output forward(const Tensor& f_freq, const Tensor& f_guide);
  /// Returns (dL/dF_freq, dL/dF_guide).
  std::pair<Tensor, Tensor> backward(const Tensor& d_out);

  void collect(std::vector<Param*>& out) { conv1.collect(out); conv2.collect(out); }
  double epsilon() const { return epsilon_; }

  Conv2d conv1;
  Conv2d conv2;

 private:
  Gelu act_;
  double epsilon_ = 0.1;
  Tensor f_freq_;
  Tensor attention_;
};

/// The full fusion block. The two switches reproduce the ablations: with
/// spectral injection off the spectral stage passes the detail stream through
/// (Y_fused = Y_detail), with gating off F_out = F_freq.
class FamFusion {
 public:
  FamFusion() = default;
  FamFusion(int channels, const FusionParams& params);

  void init(Rng& rng);
  FeatureMap forward(const FeaturePair& pair);
  /// Returns gradients w.r.t. (F'_detail, F'_guide).
  std::pair<Tensor, Tensor> backward(const Tensor& d_out);

  double alpha() const { return sigmoid(alpha_logit.value[0]); }
  const Tensor& last_attention() const { return attention_; }
  const FusionParams& params() const { return params_; }
  SaliencyGate& gate() { return gate_; }

  void collect(std::vector<Param*>& out);

  Param alpha_logit;  ///< [1]
  bool spectral_injection = true;
  bool saliency_gating = true;

 private:
  FusionParams params_;
  SaliencyGate gate_;
  LowFreqMask mask_;
  SpectralTensor y_detail_;
  SpectralTensor y_guide_;
  Tensor attention_;
  int height_ = 0, width_ = 0;
};

/// Mean over planes of ||a_hat - b_hat||_2 / ||a_hat||_2, where a_hat and
/// b_hat are the L1-normalized amplitude half-spectra of each [H, W] plane.
/// Zero for b = k * a with k > 0. Throws InvalidArgument on shape mismatch or
/// a plane whose spectrum is all zero.
double spectrum_stability(const Tensor& reference, const Tensor& corrupted);

/// The same distance computed on the L1-normalized spatial values.
double spatial_distance(const Tensor& reference, const Tensor& corrupted);

}  // namespace lisa
