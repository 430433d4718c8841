#include "lisa/model.hpp"

#include "lisa/errors.hpp"
#include "lisa/random.hpp"

namespace lisa {

void ModelConfig::validate() const {
  backbone.validate();
  if (!(fusion.gamma > 0.0 && fusion.gamma <= 1.0)) {
    throw InvalidArgument("fusion.gamma must lie in (0, 1]");
  }
  if (fusion.epsilon < 0.0) throw InvalidArgument("fusion.epsilon must be >= 0");
  if (embed_dim < 1) throw InvalidArgument("embed_dim must be >= 1");
  for (int h : head.mlp_hidden) {
    if (h < 1) throw InvalidArgument("head.mlp_hidden entries must be >= 1");
  }
}

LisaModel::LisaModel(const ModelConfig& cfg)
    : cfg_(cfg),
      backbone_((cfg.validate(), cfg.backbone)),
      align_(cfg.backbone.stage_channels[cfg.backbone.detail_stage_index],
             cfg.backbone.stage_channels[cfg.backbone.guide_stage_index],
             cfg.backbone.aligned_channels),
      fusion_(cfg.backbone.aligned_channels, cfg.fusion),
      head_(cfg.backbone.aligned_channels, cfg.head),
      projection_(cfg.backbone.aligned_channels + 2, cfg.embed_dim) {
  fusion_.spectral_injection = cfg.ablation.use_spectral_injection;
  fusion_.saliency_gating = cfg.ablation.use_saliency_gating;
}

void LisaModel::init(std::uint64_t seed) {
  Rng rng(splitmix64(seed));
  backbone_.init(rng);
  align_.init(rng);
  fusion_.init(rng);
  head_.init(rng);
  projection_.init(rng);
  for (Buffer& b : buffers()) {
    const bool is_var = b.name.size() >= 3 && b.name.compare(b.name.size() - 3, 3, "var") == 0;
    b.value->fill(is_var ? 1.0 : 0.0);
  }
  zero_grad();
}

ModelOutput LisaModel::forward(const Tensor& images, Mode mode) {
  BackboneTaps taps = backbone_.forward(images, mode);
  FeaturePair pair = align_.forward(taps.detail, taps.guide, mode);
  FeatureMap fused = fusion_.forward(pair);
  HeadOutput head = head_.forward(fused.data);
  ModelOutput out;
  out.angles = std::move(head.angles);
  if (cfg_.ablation.use_sdm) out.embedding = projection_.forward(head.f_gaze);
  out.f_gaze = std::move(head.f_gaze);
  return out;
}

Tensor LisaModel::backward(const Tensor& d_angles, const Tensor& d_embedding,
                           bool need_input_grad) {
  Tensor d_f_gaze;
  if (cfg_.ablation.use_sdm && !d_embedding.empty()) {
    d_f_gaze = projection_.backward(d_embedding);
  }
  Tensor d_fused = head_.backward(d_angles, d_f_gaze);
  auto [d_detail_aligned, d_guide_aligned] = fusion_.backward(d_fused);
  auto [d_detail, d_guide] = align_.backward(d_detail_aligned, d_guide_aligned);
  return backbone_.backward(d_detail, d_guide, need_input_grad);
}

void LisaModel::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

std::vector<Param*> LisaModel::parameters() {
  std::vector<Param*> out;
  backbone_.collect(out);
  align_.collect(out);
  fusion_.collect(out);
  head_.collect(out);
  projection_.collect(out);
  return out;
}

std::vector<Buffer> LisaModel::buffers() {
  std::vector<Buffer> out;
  backbone_.collect_buffers(out);
  align_.collect_buffers(out);
  return out;
}

std::size_t LisaModel::parameter_count() {
  std::size_t n = 0;
  for (Param* p : parameters()) n += p->value.size();
  return n;
}

}  // namespace lisa
