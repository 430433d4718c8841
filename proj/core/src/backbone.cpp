#include "lisa/backbone.hpp"

#include <string>

#include "lisa/errors.hpp"

namespace lisa {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw InvalidArgument("backbone: in_channels must be >= 1");
  if (stage_channels.empty()) throw InvalidArgument("backbone: no stages configured");
  for (int c : stage_channels) {
    if (c < 1) throw InvalidArgument("backbone: stage channel counts must be >= 1");
  }
  if (aligned_channels < 1) throw InvalidArgument("backbone: aligned_channels must be >= 1");
  const int n = static_cast<int>(stage_channels.size());
  if (detail_stage_index < 0 || guide_stage_index >= n ||
      detail_stage_index >= guide_stage_index) {
    throw InvalidArgument("backbone: need 0 <= detail_stage_index < guide_stage_index < " +
                          std::to_string(n));
  }
}

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  int in = cfg_.in_channels;
  for (int s = 0; s <= cfg_.guide_stage_index; ++s) {
    const int out = cfg_.stage_channels[s];
    stages_.emplace_back("backbone.stage" + std::to_string(s), in, out, 3, s == 0 ? 1 : 2);
    in = out;
  }
}

void Backbone::init(Rng& rng) {
  for (auto& s : stages_) s.init(rng);
}

void Backbone::check_input_shape(int height, int width) const {
  int h = height, w = width;
  for (int s = 1; s <= cfg_.guide_stage_index; ++s) {
    if (h % 2 != 0 || w % 2 != 0) {
      throw ShapeError("backbone stage " + std::to_string(s) + ": input " + std::to_string(h) +
                       "x" + std::to_string(w) + " does not halve evenly (image " +
                       std::to_string(height) + "x" + std::to_string(width) +
                       " must divide by " + std::to_string(1 << cfg_.guide_stage_index) + ")");
    }
    h /= 2;
    w /= 2;
  }
}

BackboneTaps Backbone::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("backbone expects [N, " + std::to_string(cfg_.in_channels) +
                     ", H, W], got " + x.shape_str());
  }
  check_input_shape(x.dim(2), x.dim(3));
  BackboneTaps taps;
  Tensor h = x;
  for (int s = 0; s <= cfg_.guide_stage_index; ++s) {
    h = stages_[s].forward(h, mode);
    if (s == cfg_.detail_stage_index) taps.detail = {h, Tap::detail};
  }
  taps.guide = {std::move(h), Tap::guide};
  return taps;
}

Tensor Backbone::backward(const Tensor& d_detail, const Tensor& d_guide, bool need_input_grad) {
  Tensor grad = d_guide;
  for (int s = cfg_.guide_stage_index; s >= 0; --s) {
    if (s == cfg_.detail_stage_index) grad += d_detail;
    const bool need = s > 0 || need_input_grad;
    grad = stages_[s].backward(grad, need);
  }
  return grad;
}

void Backbone::collect(std::vector<Param*>& out) {
  for (auto& s : stages_) s.collect(out);
}

void Backbone::collect_buffers(std::vector<Buffer>& out) {
  for (auto& s : stages_) s.collect_buffers(out);
}

// ---------------------------------------------------------------------------

FeatureAlign::FeatureAlign(int detail_channels, int guide_channels, int aligned_channels)
    : channels_(aligned_channels),
      detail_proj_("align.detail", detail_channels, aligned_channels, 1, 1),
      guide_proj_("align.guide", guide_channels, aligned_channels, 1, 1) {}

void FeatureAlign::init(Rng& rng) {
  detail_proj_.init(rng);
  guide_proj_.init(rng);
}

FeaturePair FeatureAlign::forward(const FeatureMap& detail, const FeatureMap& guide, Mode mode) {
  if (detail.tap != Tap::detail || guide.tap != Tap::guide) {
    throw InvalidArgument("align: expects a detail tap and a guide tap");
  }
  const Tensor& d = detail.data;
  const Tensor& g = guide.data;
  if (d.rank() != 4 || g.rank() != 4 || d.dim(0) != g.dim(0)) {
    throw ShapeError("align: incompatible taps " + d.shape_str() + " and " + g.shape_str());
  }
  if (g.dim(2) > d.dim(2) || g.dim(3) > d.dim(3)) {
    throw InvalidArgument("align: guide " + g.shape_str() + " is spatially larger than detail " +
                          d.shape_str());
  }
  guide_h_ = g.dim(2);
  guide_w_ = g.dim(3);
  FeaturePair pair;
  pair.detail = {detail_proj_.forward(d, mode), Tap::aligned};
  Tensor gp = guide_proj_.forward(g, mode);
  if (guide_h_ != d.dim(2) || guide_w_ != d.dim(3)) gp = bilinear_resize(gp, d.dim(2), d.dim(3));
  pair.guide = {std::move(gp), Tap::aligned};
  return pair;
}

std::pair<Tensor, Tensor> FeatureAlign::backward(const Tensor& d_detail, const Tensor& d_guide) {
  Tensor dg = d_guide;
  if (guide_h_ != d_guide.dim(2) || guide_w_ != d_guide.dim(3)) {
    dg = bilinear_resize_backward(d_guide, guide_h_, guide_w_);
  }
  return {detail_proj_.backward(d_detail), guide_proj_.backward(dg)};
}

void FeatureAlign::collect(std::vector<Param*>& out) {
  detail_proj_.collect(out);
  guide_proj_.collect(out);
}

void FeatureAlign::collect_buffers(std::vector<Buffer>& out) {
  detail_proj_.collect_buffers(out);
  guide_proj_.collect_buffers(out);
}

}  // namespace lisa
