#pragma once

#include <cstdint>
#include <vector>

#include "lisa/backbone.hpp"
#include "lisa/fam_fusion.hpp"
#include "lisa/regression_head.hpp"
#include "lisa/sdm.hpp"

namespace lisa {

struct AblationFlags {
  bool use_spectral_injection = true;
  bool use_saliency_gating = true;
  bool use_sdm = true;
};

struct ModelConfig {
  BackboneConfig backbone;
  FusionParams fusion;
  HeadConfig head;
  int embed_dim = 64;
  AblationFlags ablation;

  void validate() const;
};

struct ModelOutput {
  Tensor angles;     ///< [N, 2]
  Tensor f_gaze;     ///< [N, C + 2]
  Tensor embedding;  ///< [N, D]; empty when the SDM is disabled
};

/// Backbone -> feature alignment -> fusion -> coordinate-aware head, with the
/// SDM projection on the pooled feature.
class LisaModel {
 public:
  explicit LisaModel(const ModelConfig& cfg);

  void init(std::uint64_t seed);
  ModelOutput forward(const Tensor& images, Mode mode);
  /// Accumulates into every parameter's grad. `d_embedding` is ignored when
  /// the SDM is off. Returns dL/dimages when requested.
  Tensor backward(const Tensor& d_angles, const Tensor& d_embedding,
                  bool need_input_grad = false);

  void zero_grad();
  std::vector<Param*> parameters();
  std::vector<Buffer> buffers();
  std::size_t parameter_count();

  const ModelConfig& config() const { return cfg_; }
  FamFusion& fusion() { return fusion_; }
  Backbone& backbone() { return backbone_; }
  RegressionHead& head() { return head_; }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  FeatureAlign align_;
  FamFusion fusion_;
  RegressionHead head_;
  ProjectionHead projection_;
};

}  // namespace lisa
