#pragma once

#include <string>
#include <vector>

#include "lisa/random.hpp"
#include "lisa/tensor.hpp"

// Layer primitives with hand-written backward passes. Every layer caches what
// its backward pass needs during forward, so each instance is used at most
// once per forward/backward cycle.

namespace lisa {

enum class Mode { train, eval };

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(0.0); }
};

/// Non-trainable state that still belongs in a checkpoint.
struct Buffer {
  std::string name;
  Tensor* value;
};

double gelu(double x);
double gelu_grad(double x);

/// Logistic function clamped to the open interval (0, 1), so the result
/// never rounds to exactly 0 or 1 even for |x| ~ 1e6.
double sigmoid(double x);

class Gelu {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;

 private:
  Tensor input_;
};

/// 2D convolution over [N, C, H, W] with square kernel, zero padding.
/// Implemented as im2col + GEMM.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding);

  /// He-normal weights, zero bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x);
  /// Accumulates parameter gradients; returns dL/dx when requested (else empty).
  Tensor backward(const Tensor& dy, bool need_input_grad = true);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int output_size(int input) const { return (input + 2 * pad_ - k_) / stride_ + 1; }

  void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }

  Param weight;  ///< [out, in * k * k]
  Param bias;    ///< [out]

 private:
  bool pointwise() const;
  void im2col(const double* src, int h, int w);
  void col2im(const double* cols, double* dst, int h, int w) const;

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor input_;
  AlignedBuffer cols_;  ///< per-sample unfold workspace
  int out_h_ = 0, out_w_ = 0;
};

/// Batch normalization over (N, H, W) per channel. In train mode the batch
/// statistics are used (with N = 1 this is exactly per-instance
/// normalization); eval mode uses frozen running statistics.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);

  void collect(std::vector<Param*>& out) { out.push_back(&gamma); out.push_back(&beta); }
  void collect_buffers(std::vector<Buffer>& out);

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;
  /// When false, train-mode forwards leave the running statistics alone.
  bool track_running_stats = true;

 private:
  std::string name_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Mode mode_ = Mode::train;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

/// Fully connected layer on [N, in] -> [N, out].
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  void init(Rng& rng, double gain = 2.0);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }

  Param weight;  ///< [out, in]
  Param bias;    ///< [out]

 private:
  int in_ = 0, out_ = 0;
  Tensor input_;
};

/// Conv -> BatchNorm -> GELU.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

  void init(Rng& rng) { conv.init(rng); }
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy, bool need_input_grad = true);

  void collect(std::vector<Param*>& out) { conv.collect(out); norm.collect(out); }
  void collect_buffers(std::vector<Buffer>& out) { norm.collect_buffers(out); }

  Conv2d conv;
  BatchNorm2d norm;
  Gelu act;
};

/// Bilinear resize with corner-aligned sampling: output pixel i samples the
/// input at i * (in - 1) / (out - 1). Works on the last two axes of a rank-4
/// tensor.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w);

}  // namespace lisa
