#include "lisa/regression_head.hpp"

#include <cstring>
#include <string>

#include "lisa/errors.hpp"

namespace lisa {

CoordMaps make_coord_maps(int height, int width) {
  if (height < 2 || width < 2) {
    throw InvalidArgument("coordinate maps need H >= 2 and W >= 2, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
  // 2w/(W-1) - 1 written over an integer numerator: the map is then exactly
  // antisymmetric, cx(W-1-w) == -cx(w) bit for bit.
  CoordMaps m{Tensor({height, width}), Tensor({height, width})};
  for (int h = 0; h < height; ++h) {
    for (int w = 0; w < width; ++w) {
      m.cx.at(h, w) = static_cast<double>(2 * w - (width - 1)) / (width - 1);
      m.cy.at(h, w) = static_cast<double>(2 * h - (height - 1)) / (height - 1);
    }
  }
  return m;
}

Tensor attach_coords(const Tensor& features) {
  if (features.rank() == 3) {
    return batch_slice(attach_coords(features.reshaped(
                           {1, features.dim(0), features.dim(1), features.dim(2)})),
                       0);
  }
  if (features.rank() != 4) {
    throw ShapeError("attach_coords expects [N, C, H, W], got " + features.shape_str());
  }
  const int n = features.dim(0), c = features.dim(1), h = features.dim(2), w = features.dim(3);
  const CoordMaps maps = make_coord_maps(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, c + 2, h, w});
  for (int b = 0; b < n; ++b) {
    double* dst = out.data() + static_cast<std::size_t>(b) * (c + 2) * plane;
    std::memcpy(dst, features.data() + static_cast<std::size_t>(b) * c * plane,
                c * plane * sizeof(double));
    std::memcpy(dst + c * plane, maps.cx.data(), plane * sizeof(double));
    std::memcpy(dst + (c + 1) * plane, maps.cy.data(), plane * sizeof(double));
  }
  return out;
}

Tensor global_mean_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("mean pool expects [N, C, H, W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor out({n, c});
  for (int i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * plane;
    // Point-mirrored pairs are summed first, so an antisymmetric plane such as
    // a coordinate map pools to exactly zero.
    double s = 0.0;
    for (std::size_t k = 0; k < plane / 2; ++k) s += p[k] + p[plane - 1 - k];
    if (plane % 2 == 1) s += p[plane / 2];
    out[i] = s / static_cast<double>(plane);
  }
  return out;
}

RegressionHead::RegressionHead(int in_channels, const HeadConfig& cfg)
    : cfg_(cfg), in_channels_(in_channels) {
  if (cfg.out_dim != 2) throw InvalidArgument("regression head: out_dim must be 2 (yaw, pitch)");
  int in = in_channels + 2;
  for (std::size_t i = 0; i < cfg.mlp_hidden.size(); ++i) {
    layers_.emplace_back("head.fc" + std::to_string(i), in, cfg.mlp_hidden[i]);
    in = cfg.mlp_hidden[i];
  }
  layers_.emplace_back("head.fc" + std::to_string(cfg.mlp_hidden.size()), in, cfg.out_dim);
  acts_.resize(cfg.mlp_hidden.size());
}

void RegressionHead::init(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    // Output layer starts small so initial predictions sit near zero.
    layers_[i].init(rng, i + 1 == layers_.size() ? 0.1 : 2.0);
  }
}

HeadOutput RegressionHead::forward(const Tensor& features) {
  return forward_coord(attach_coords(features));
}

HeadOutput RegressionHead::forward_coord(const Tensor& f_coord) {
  if (f_coord.rank() != 4 || f_coord.dim(1) != in_channels_ + 2) {
    throw ShapeError("regression head expects [N, " + std::to_string(in_channels_ + 2) +
                     ", H, W], got " + f_coord.shape_str());
  }
  coord_shape_ = f_coord.shape();
  HeadOutput out;
  out.f_gaze = global_mean_pool(f_coord);
  Tensor h = out.f_gaze;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i < acts_.size()) h = acts_[i].forward(h);
  }
  out.angles = std::move(h);
  return out;
}

Tensor RegressionHead::backward_coord(const Tensor& d_angles, const Tensor& d_f_gaze) {
  Tensor g = d_angles;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i < acts_.size()) g = acts_[i].backward(g);
    g = layers_[i].backward(g);
  }
  if (!d_f_gaze.empty()) g += d_f_gaze;
  const int n = coord_shape_[0], c = coord_shape_[1];
  const std::size_t plane = static_cast<std::size_t>(coord_shape_[2]) * coord_shape_[3];
  Tensor dx(coord_shape_);
  for (int i = 0; i < n * c; ++i) {
    const double v = g[i] / static_cast<double>(plane);
    double* p = dx.data() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) p[k] = v;
  }
  return dx;
}

Tensor RegressionHead::backward(const Tensor& d_angles, const Tensor& d_f_gaze) {
  const Tensor full = backward_coord(d_angles, d_f_gaze);
  const int n = coord_shape_[0], c = in_channels_;
  const std::size_t plane = static_cast<std::size_t>(coord_shape_[2]) * coord_shape_[3];
  Tensor dx({n, c, coord_shape_[2], coord_shape_[3]});
  for (int b = 0; b < n; ++b) {
    std::memcpy(dx.data() + static_cast<std::size_t>(b) * c * plane,
                full.data() + static_cast<std::size_t>(b) * (c + 2) * plane,
                c * plane * sizeof(double));
  }
  return dx;
}

void RegressionHead::collect(std::vector<Param*>& out) {
  for (auto& l : layers_) l.collect(out);
}

}  // namespace lisa
