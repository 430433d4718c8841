#include "lisa/fam_fusion.hpp"

#include <algorithm>
#include <cmath>

#include "lisa/errors.hpp"

namespace lisa {

namespace {

void require_same(const SpectralTensor& a, const SpectralTensor& b, const char* who) {
  a.validate();
  b.validate();
  if (!a.re.same_shape(b.re) || a.width != b.width) {
    throw ShapeError(std::string(who) + ": spectra " + a.re.shape_str() + " and " +
                     b.re.shape_str() + " differ");
  }
}

void require_mask_fits(const SpectralTensor& y, const LowFreqMask& m) {
  if (m.mask.rank() != 2 || m.mask.dim(0) != y.height || m.mask.dim(1) != y.half_width()) {
    throw ShapeError("spectral mix: mask " + m.mask.shape_str() + " does not fit spectrum " +
                     y.re.shape_str());
  }
}

SpectralTensor like(const SpectralTensor& y) {
  SpectralTensor out;
  out.re = Tensor::zeros_like(y.re);
  out.im = Tensor::zeros_like(y.im);
  out.height = y.height;
  out.width = y.width;
  return out;
}

}  // namespace

std::pair<double, double> normalized_frequency(int u, int v, int height, int width) {
  const double fu = std::min(u, height - u) / (0.5 * height);
  const double fv = v / (0.5 * width);
  return {fu, fv};
}

LowFreqMask build_low_freq_mask(int height, int half_width, double gamma, MaskShape shape,
                                int width) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw InvalidArgument("low-frequency ratio gamma must lie in (0, 1], got " +
                          std::to_string(gamma));
  }
  if (height < 1 || half_width < 1) throw InvalidArgument("low-frequency mask: empty spectrum");
  if (width < 0) width = 2 * (half_width - 1);
  if (width / 2 + 1 != half_width) {
    throw InvalidArgument("low-frequency mask: width " + std::to_string(width) +
                          " inconsistent with half width " + std::to_string(half_width));
  }
  LowFreqMask m;
  m.gamma = gamma;
  m.shape = shape;
  m.mask = Tensor({height, half_width});
  for (int u = 0; u < height; ++u) {
    for (int v = 0; v < half_width; ++v) {
      const auto [fu, fv] = normalized_frequency(u, v, height, std::max(width, 1));
      bool keep = false;
      if (shape == MaskShape::radial) {
        keep = std::sqrt(0.5 * (fu * fu + fv * fv)) <= gamma;
      } else {
        keep = fu <= gamma && fv <= gamma;
      }
      m.mask.at(u, v) = keep ? 1.0 : 0.0;
    }
  }
  return m;
}

SpectralTensor spectral_mix(const SpectralTensor& detail, const SpectralTensor& guide,
                            const LowFreqMask& mask, double alpha) {
  require_same(detail, guide, "spectral mix");
  require_mask_fits(detail, mask);
  SpectralTensor out = detail;
  const std::size_t plane = mask.mask.size();
  for (std::size_t i = 0; i < detail.re.size(); ++i) {
    const double m = mask.mask[i % plane];
    if (m == 0.0) continue;
    const double am = alpha * m;
    out.re[i] = detail.re[i] * (1.0 - am) + guide.re[i] * am;
    out.im[i] = detail.im[i] * (1.0 - am) + guide.im[i] * am;
  }
  return out;
}

SpectralMixGrad spectral_mix_backward(const SpectralTensor& grad, const SpectralTensor& detail,
                                      const SpectralTensor& guide, const LowFreqMask& mask,
                                      double alpha) {
  require_same(grad, detail, "spectral mix backward");
  require_same(detail, guide, "spectral mix backward");
  require_mask_fits(detail, mask);
  SpectralMixGrad g{like(grad), like(grad), 0.0};
  const std::size_t plane = mask.mask.size();
  for (std::size_t i = 0; i < grad.re.size(); ++i) {
    const double m = mask.mask[i % plane];
    const double am = alpha * m;
    g.d_detail.re[i] = grad.re[i] * (1.0 - am);
    g.d_detail.im[i] = grad.im[i] * (1.0 - am);
    g.d_guide.re[i] = grad.re[i] * am;
    g.d_guide.im[i] = grad.im[i] * am;
    g.d_alpha += m * ((guide.re[i] - detail.re[i]) * grad.re[i] +
                      (guide.im[i] - detail.im[i]) * grad.im[i]);
  }
  return g;
}

int FusionParams::hidden_for(int channels) const {
  return gate_hidden_channels > 0 ? gate_hidden_channels : std::max(4, channels / 4);
}

// ---------------------------------------------------------------------------

SaliencyGate::SaliencyGate(int channels, int hidden_channels, double epsilon)
    : conv1("fusion.gate.conv1", channels, hidden_channels, 3, 1, 1),
      conv2("fusion.gate.conv2", hidden_channels, 1, 3, 1, 1),
      epsilon_(epsilon) {
  if (epsilon < 0.0) throw InvalidArgument("saliency gate: epsilon must be >= 0");
}

void SaliencyGate::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
}

SaliencyGate::Output SaliencyGate::forward(const Tensor& f_freq, const Tensor& f_guide) {
  Tensor logits = conv2.forward(act_.forward(conv1.forward(f_guide)));
  if (f_freq.rank() != 4 || f_freq.dim(0) != logits.dim(0) || f_freq.dim(2) != logits.dim(2) ||
      f_freq.dim(3) != logits.dim(3)) {
    throw ShapeError("saliency gate: features " + f_freq.shape_str() +
                     " do not match attention map " + logits.shape_str());
  }
  attention_ = logits;
  for (double& a : attention_.values()) a = sigmoid(a);
  f_freq_ = f_freq;

  Tensor out = Tensor::zeros_like(f_freq);
  const int n = f_freq.dim(0), c = f_freq.dim(1);
  const std::size_t plane = static_cast<std::size_t>(f_freq.dim(2)) * f_freq.dim(3);
  for (int b = 0; b < n; ++b) {
    const double* a = attention_.data() + b * plane;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[off + p] = f_freq[off + p] * (a[p] + epsilon_);
    }
  }
  return {std::move(out), attention_};
}

std::pair<Tensor, Tensor> SaliencyGate::backward(const Tensor& d_out) {
  if (!d_out.same_shape(f_freq_)) throw ShapeError("saliency gate backward: shape mismatch");
  const int n = d_out.dim(0), c = d_out.dim(1);
  const std::size_t plane = static_cast<std::size_t>(d_out.dim(2)) * d_out.dim(3);
  Tensor d_freq = Tensor::zeros_like(d_out);
  Tensor d_logits = Tensor::zeros_like(attention_);
  for (int b = 0; b < n; ++b) {
    const double* a = attention_.data() + b * plane;
    double* da = d_logits.data() + b * plane;
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        d_freq[off + p] = d_out[off + p] * (a[p] + epsilon_);
        da[p] += d_out[off + p] * f_freq_[off + p];
      }
    }
    for (std::size_t p = 0; p < plane; ++p) da[p] *= a[p] * (1.0 - a[p]);
  }
  Tensor d_guide = conv1.backward(act_.backward(conv2.backward(d_logits)));
  return {std::move(d_freq), std::move(d_guide)};
}

// ---------------------------------------------------------------------------

FamFusion::FamFusion(int channels, const FusionParams& params)
    : alpha_logit("fusion.alpha_logit", {1}),
      params_(params),
      gate_(channels, params.hidden_for(channels), params.epsilon) {
  if (!(params.gamma > 0.0 && params.gamma <= 1.0)) {
    throw InvalidArgument("fusion: gamma must lie in (0, 1]");
  }
  alpha_logit.value[0] = params.alpha_logit;
}

void FamFusion::init(Rng& rng) {
  alpha_logit.value[0] = params_.alpha_logit;
  gate_.init(rng);
}

void FamFusion::collect(std::vector<Param*>& out) {
  out.push_back(&alpha_logit);
  gate_.collect(out);
}

FeatureMap FamFusion::forward(const FeaturePair& pair) {
  const Tensor& fd = pair.detail.data;
  const Tensor& fg = pair.guide.data;
  if (!fd.same_shape(fg) || fd.rank() != 4) {
    throw ShapeError("fusion: streams are not aligned: " + fd.shape_str() + " vs " +
                     fg.shape_str());
  }
  height_ = fd.dim(2);
  width_ = fd.dim(3);

  Tensor f_freq;
  if (spectral_injection) {
    y_detail_ = rfft2(fd);
    y_guide_ = rfft2(fg);
    if (mask_.mask.rank() != 2 || mask_.mask.dim(0) != height_ ||
        mask_.mask.dim(1) != width_ / 2 + 1) {
      mask_ = build_low_freq_mask(height_, width_ / 2 + 1, params_.gamma, params_.mask_shape,
                                  width_);
    }
    f_freq = irfft2(spectral_mix(y_detail_, y_guide_, mask_, alpha()));
  } else {
    // Y_fused = Y_detail, and irfft2(rfft2(x)) = x.
    f_freq = fd;
  }

  if (!saliency_gating) {
    attention_ = Tensor();
    return {std::move(f_freq), Tap::fused};
  }
  auto out = gate_.forward(f_freq, fg);
  attention_ = std::move(out.attention);
  return {std::move(out.fused), Tap::fused};
}

std::pair<Tensor, Tensor> FamFusion::backward(const Tensor& d_out) {
  Tensor d_freq, d_guide;
  if (saliency_gating) {
    std::tie(d_freq, d_guide) = gate_.backward(d_out);
  } else {
    d_freq = d_out;
    d_guide = Tensor::zeros_like(d_out);
  }
  if (!spectral_injection) return {std::move(d_freq), std::move(d_guide)};

  const double a = alpha();
  SpectralTensor d_fused = irfft2_backward(d_freq, height_, width_);
  SpectralMixGrad g = spectral_mix_backward(d_fused, y_detail_, y_guide_, mask_, a);
  alpha_logit.grad[0] += g.d_alpha * a * (1.0 - a);
  Tensor d_detail = rfft2_backward(g.d_detail);
  d_guide += rfft2_backward(g.d_guide);
  return {std::move(d_detail), std::move(d_guide)};
}

// ---------------------------------------------------------------------------

namespace {

void require_planes(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(who) + ": shapes " + a.shape_str() + " and " +
                          b.shape_str() + " differ");
  }
  if (a.rank() < 2) throw InvalidArgument(std::string(who) + ": need at least two axes");
}

/// Mean over planes of relative L2 distance between L1-normalized vectors.
double normalized_distance(const std::vector<double>& a, const std::vector<double>& b,
                           std::size_t plane, const char* who) {
  const std::size_t planes = a.size() / plane;
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    double la = 0.0, lb = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      la += std::abs(a[p * plane + i]);
      lb += std::abs(b[p * plane + i]);
    }
    if (la == 0.0 || lb == 0.0) {
      throw InvalidArgument(std::string(who) + ": plane " + std::to_string(p) +
                            " is all zero, normalization undefined");
    }
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double x = a[p * plane + i] / la;
      const double y = b[p * plane + i] / lb;
      diff += (x - y) * (x - y);
      ref += x * x;
    }
    total += std::sqrt(diff) / std::sqrt(ref);
  }
  return total / static_cast<double>(planes);
}

std::vector<double> amplitude(const Tensor& f) {
  const SpectralTensor y = rfft2(f);
  std::vector<double> amp(y.re.size());
  for (std::size_t i = 0; i < amp.size(); ++i) amp[i] = std::hypot(y.re[i], y.im[i]);
  return amp;
}

}  // namespace

double spectrum_stability(const Tensor& reference, const Tensor& corrupted) {
  require_planes(reference, corrupted, "spectrum stability");
  const std::size_t plane =
      static_cast<std::size_t>(reference.dim(-2)) * (reference.dim(-1) / 2 + 1);
  return normalized_distance(amplitude(reference), amplitude(corrupted), plane,
                             "spectrum stability");
}

double spatial_distance(const Tensor& reference, const Tensor& corrupted) {
  require_planes(reference, corrupted, "spatial distance");
  const std::size_t plane = static_cast<std::size_t>(reference.dim(-2)) * reference.dim(-1);
  std::vector<double> a(reference.values().begin(), reference.values().end());
  std::vector<double> b(corrupted.values().begin(), corrupted.values().end());
  return normalized_distance(a, b, plane, "spatial distance");
}

}  // namespace lisa
