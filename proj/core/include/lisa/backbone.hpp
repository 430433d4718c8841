#pragma once

#include <vector>

#include "lisa/layers.hpp"
#include "lisa/tensor.hpp"

namespace lisa {

enum class Tap { detail, guide, aligned, fused, output };

/// A feature tensor tagged with where in the network it came from.
/// `data` is [N, C, H, W].
struct FeatureMap {
  Tensor data;
  Tap tap = Tap::output;
};

/// Aligned detail/guide streams with identical [N, C, H, W] shapes.
struct FeaturePair {
  FeatureMap detail;
  FeatureMap guide;
};

struct BackboneConfig {
  int in_channels = 3;
  /// Stage 0 keeps the input resolution; every later stage halves it.
  std::vector<int> stage_channels{8, 16, 32, 64};
  int detail_stage_index = 1;
  int guide_stage_index = 3;
  int aligned_channels = 64;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  /// Spatial downsampling factor at the output of `stage`.
  int stride_at(int stage) const { return stage == 0 ? 1 : 1 << stage; }
};

struct BackboneTaps {
  FeatureMap detail;
  FeatureMap guide;
};

/// Small CNN standing in for a ResNet trunk: one 3x3 conv + BN + GELU block
/// per stage. Only stages up to the guide tap are evaluated.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init(Rng& rng);
  /// x is [N, in_channels, H, W]; H and W must divide by 2^guide_stage_index.
  BackboneTaps forward(const Tensor& x, Mode mode);
  /// Returns dL/dx when requested.
  Tensor backward(const Tensor& d_detail, const Tensor& d_guide, bool need_input_grad = false);

  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out);
  const BackboneConfig& config() const { return cfg_; }

  /// Throws ShapeError naming the first stage whose input does not halve evenly.
  void check_input_shape(int height, int width) const;

 private:
  BackboneConfig cfg_;
  std::vector<ConvBlock> stages_;
};

/// Per-stream 1x1 conv + BN + GELU to C channels, followed by corner-aligned
/// bilinear upsampling of the guide stream to the detail resolution.
class FeatureAlign {
 public:
  FeatureAlign() = default;
  FeatureAlign(int detail_channels, int guide_channels, int aligned_channels);

  void init(Rng& rng);
  FeaturePair forward(const FeatureMap& detail, const FeatureMap& guide, Mode mode);
  /// Gradients w.r.t. the raw detail and guide taps.
  std::pair<Tensor, Tensor> backward(const Tensor& d_detail, const Tensor& d_guide);

  void collect(std::vector<Param*>& out);
  void collect_buffers(std::vector<Buffer>& out);
  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  ConvBlock detail_proj_;
  ConvBlock guide_proj_;
  int guide_h_ = 0, guide_w_ = 0;
};

}  // namespace lisa
