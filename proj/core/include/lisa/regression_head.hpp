#pragma once

#include <vector>

#include "lisa/geometry.hpp"
#include "lisa/layers.hpp"
#include "lisa/tensor.hpp"

namespace lisa {

/// C_x(h, w) = 2w / (W - 1) - 1 and C_y(h, w) = 2h / (H - 1) - 1, both [H, W].
struct CoordMaps {
  Tensor cx;
  Tensor cy;
};

/// Throws InvalidArgument when H < 2 or W < 2.
CoordMaps make_coord_maps(int height, int width);

/// Appends C_x and C_y as the last two channels of [N, C, H, W] (or [C, H, W]).
Tensor attach_coords(const Tensor& features);

enum class PoolKind { mean };

struct HeadConfig {
  PoolKind pool = PoolKind::mean;
  std::vector<int> mlp_hidden{128, 64};
  int out_dim = 2;
};

/// Global mean over H x W: [N, C, H, W] -> [N, C].
Tensor global_mean_pool(const Tensor& x);

struct HeadOutput {
  Tensor angles;  ///< [N, 2] raw (yaw, pitch) radians
  Tensor f_gaze;  ///< [N, C + 2] pooled coordinate-augmented feature
};

/// Coordinate-aware regression: attach coordinates, pool, MLP with GELU
/// hidden activations.
class RegressionHead {
 public:
  RegressionHead() = default;
  RegressionHead(int in_channels, const HeadConfig& cfg);

  void init(Rng& rng);
  /// `features` is F_out, [N, C, H, W]; coordinates are attached here.
  HeadOutput forward(const Tensor& features);
  /// Forward on an already coordinate-augmented map.
  HeadOutput forward_coord(const Tensor& f_coord);
  /// Returns dL/dF_out (coordinate channels dropped) given gradients w.r.t.
  /// the predicted angles and the pooled feature.
  Tensor backward(const Tensor& d_angles, const Tensor& d_f_gaze);
  /// Same, but keeps the gradient w.r.t. the coordinate channels.
  Tensor backward_coord(const Tensor& d_angles, const Tensor& d_f_gaze);

  void collect(std::vector<Param*>& out);
  int pooled_features() const { return in_channels_ + 2; }
  std::vector<Linear>& layers() { return layers_; }

 private:
  HeadConfig cfg_;
  int in_channels_ = 0;
  std::vector<Linear> layers_;
  std::vector<Gelu> acts_;
  std::vector<int> coord_shape_;
};

}  // namespace lisa
