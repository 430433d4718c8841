#include "lisa/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eigen_maps.hpp"
#include "lisa/errors.hpp"

namespace lisa {

using detail::ConstMapMat;
using detail::MapMat;
using detail::RowMat;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw ShapeError(std::string(who) + " expects [N, C, H, W], got " + x.shape_str());
  }
}

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

double sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return std::clamp(s, lo, hi);
}

Tensor Gelu::forward(const Tensor& x) {
  input_ = x;
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  return y;
}

Tensor Gelu::backward(const Tensor& dy) const {
  if (!dy.same_shape(input_)) throw ShapeError("gelu backward: gradient shape mismatch");
  Tensor dx = Tensor::zeros_like(dy);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * gelu_grad(input_[i]);
  return dx;
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
               int padding)
    : weight(name + ".weight", {out_channels, in_channels * kernel * kernel}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 || padding < 0) {
    throw InvalidArgument("conv " + name + ": invalid geometry");
  }
}

void Conv2d::init(Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(in_ * k_ * k_));
  for (double& w : weight.value.values()) w = std * rng.normal();
  bias.value.fill(0.0);
}

bool Conv2d::pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

// Range of output columns [lo, hi) whose input column ow * stride - pad + kj
// falls inside [0, w).
static std::pair<int, int> valid_cols(int kj, int stride, int pad, int w, int out_w) {
  int lo = 0;
  while (lo < out_w && lo * stride - pad + kj < 0) ++lo;
  int hi = out_w;
  while (hi > lo && (hi - 1) * stride - pad + kj >= w) --hi;
  return {lo, hi};
}

// Unfolds one sample [in, h, w] into cols_ laid out [in * k * k, out_h * out_w].
void Conv2d::im2col(const double* src, int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(out_h_) * out_w_;
  cols_.resize(static_cast<std::size_t>(in_) * k_ * k_ * plane);
  for (int c = 0; c < in_; ++c) {
    const double* chan = src + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k_; ++ki) {
      for (int kj = 0; kj < k_; ++kj) {
        double* dst = cols_.data() + static_cast<std::size_t>((c * k_ + ki) * k_ + kj) * plane;
        const auto [lo, hi] = valid_cols(kj, stride_, pad_, w, out_w_);
        for (int oh = 0; oh < out_h_; ++oh) {
          double* out = dst + static_cast<std::size_t>(oh) * out_w_;
          const int ih = oh * stride_ - pad_ + ki;
          if (ih < 0 || ih >= h) {
            std::fill(out, out + out_w_, 0.0);
            continue;
          }
          std::fill(out, out + lo, 0.0);
          std::fill(out + hi, out + out_w_, 0.0);
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(ih) * w - pad_ + kj;
          if (stride_ == 1) {
            std::copy(chan + base + lo, chan + base + hi, out + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) out[ow] = chan[base + ow * stride_];
          }
        }
      }
    }
  }
}

void Conv2d::col2im(const double* cols, double* dst, int h, int w) const {
  const std::size_t plane = static_cast<std::size_t>(out_h_) * out_w_;
  for (int c = 0; c < in_; ++c) {
    double* chan = dst + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k_; ++ki) {
      for (int kj = 0; kj < k_; ++kj) {
        const double* src = cols + static_cast<std::size_t>((c * k_ + ki) * k_ + kj) * plane;
        const auto [lo, hi] = valid_cols(kj, stride_, pad_, w, out_w_);
        for (int oh = 0; oh < out_h_; ++oh) {
          const int ih = oh * stride_ - pad_ + ki;
          if (ih < 0 || ih >= h) continue;
          const double* in = src + static_cast<std::size_t>(oh) * out_w_;
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(ih) * w - pad_ + kj;
          for (int ow = lo; ow < hi; ++ow) chan[base + ow * stride_] += in[ow];
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank4(x, "conv2d");
  if (x.dim(1) != in_) {
    throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     x.shape_str());
  }
  const int n_batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  out_h_ = output_size(h);
  out_w_ = output_size(w);
  if (out_h_ < 1 || out_w_ < 1) throw ShapeError(weight.name + ": input too small " + x.shape_str());
  input_ = x;

  const int kk = in_ * k_ * k_;
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h_) * out_w_;
  ConstMapMat wm(weight.value.data(), out_, kk);
  Tensor y({n_batch, out_, out_h_, out_w_});
  // Per-sample GEMMs keep the unfolded input small enough to stay in cache.
  for (int n = 0; n < n_batch; ++n) {
    const double* src = x.data() + static_cast<std::size_t>(n) * in_ * h * w;
    if (!pointwise()) im2col(src, h, w);
    ConstMapMat cm(pointwise() ? src : cols_.data(), kk, plane);
    MapMat ym(y.data() + static_cast<std::size_t>(n) * out_ * plane, out_, plane);
    ym.noalias() = wm * cm;
    for (int o = 0; o < out_; ++o) ym.row(o).array() += bias.value[o];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool need_input_grad) {
  if (input_.empty()) throw ShapeError(weight.name + " backward called before forward");
  const int n_batch = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  if (dy.shape() != std::vector<int>{n_batch, out_, out_h_, out_w_}) {
    throw ShapeError(weight.name + " backward: gradient " + dy.shape_str() +
                     " does not match forward output");
  }
  const int kk = in_ * k_ * k_;
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h_) * out_w_;
  ConstMapMat wm(weight.value.data(), out_, kk);
  MapMat gw(weight.grad.data(), out_, kk);
  Tensor dx;
  if (need_input_grad) dx = Tensor(input_.shape());
  RowMat dcols;

  for (int n = 0; n < n_batch; ++n) {
    const double* src = input_.data() + static_cast<std::size_t>(n) * in_ * h * w;
    ConstMapMat dym(dy.data() + static_cast<std::size_t>(n) * out_ * plane, out_, plane);
    if (!pointwise()) im2col(src, h, w);
    ConstMapMat cm(pointwise() ? src : cols_.data(), kk, plane);
    gw.noalias() += dym * cm.transpose();
    for (int o = 0; o < out_; ++o) bias.grad[o] += dym.row(o).sum();
    if (!need_input_grad) continue;
    double* dst = dx.data() + static_cast<std::size_t>(n) * in_ * h * w;
    if (pointwise()) {
      MapMat(dst, kk, plane).noalias() = wm.transpose() * dym;
    } else {
      dcols.noalias() = wm.transpose() * dym;
      col2im(dcols.data(), dst, h, w);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& name, int channels, double momentum, double eps)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      name_(name),
      momentum_(momentum),
      eps_(eps) {
  gamma.value.fill(1.0);
}

void BatchNorm2d::collect_buffers(std::vector<Buffer>& out) {
  out.push_back({name_ + ".running_mean", &running_mean});
  out.push_back({name_ + ".running_var", &running_var});
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require_rank4(x, "batchnorm");
  const int n_batch = x.dim(0), channels = x.dim(1);
  if (channels != gamma.value.dim(0)) {
    throw ShapeError(name_ + ": expected " + std::to_string(gamma.value.dim(0)) +
                     " channels, got " + x.shape_str());
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(plane * n_batch);
  mode_ = mode;
  xhat_ = Tensor::zeros_like(x);
  inv_std_.assign(channels, 0.0);
  Tensor y = Tensor::zeros_like(x);

  for (int c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= count;
      for (int n = 0; n < n_batch; ++n) {
        const double* p = x.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= count;
      if (track_running_stats) {
        const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
        running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean;
        running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * unbiased;
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const double g = gamma.value[c], b = beta.value[c];
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = xh;
        y[off + i] = g * xh + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  if (!dy.same_shape(xhat_)) throw ShapeError(name_ + " backward: gradient shape mismatch");
  const int n_batch = dy.dim(0), channels = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double count = static_cast<double>(plane * n_batch);
  Tensor dx = Tensor::zeros_like(dy);

  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * xhat_[off + i];
      }
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;
    const double g = gamma.value[c], inv = inv_std_[c];
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::train) {
          dx[off + i] = g * inv / count *
                        (count * dy[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat);
        } else {
          dx[off + i] = g * inv * dy[off + i];
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}),
      bias(name + ".bias", {out_features}),
      in_(in_features),
      out_(out_features) {
  if (in_features < 1 || out_features < 1) throw InvalidArgument("linear " + name + ": bad size");
}

void Linear::init(Rng& rng, double gain) {
  const double std = std::sqrt(gain / static_cast<double>(in_));
  for (double& w : weight.value.values()) w = std * rng.normal();
  bias.value.fill(0.0);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_) {
    throw ShapeError(weight.name + ": expected [N, " + std::to_string(in_) + "], got " +
                     x.shape_str());
  }
  input_ = x;
  const int n = x.dim(0);
  Tensor y({n, out_});
  ConstMapMat xm(x.data(), n, in_);
  ConstMapMat wm(weight.value.data(), out_, in_);
  MapMat ym(y.data(), n, out_);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_; ++o) ym(i, o) += bias.value[o];
  }
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  const int n = input_.dim(0);
  if (dy.shape() != std::vector<int>{n, out_}) {
    throw ShapeError(weight.name + " backward: gradient " + dy.shape_str());
  }
  ConstMapMat dym(dy.data(), n, out_);
  ConstMapMat xm(input_.data(), n, in_);
  MapMat gw(weight.grad.data(), out_, in_);
  gw.noalias() += dym.transpose() * xm;
  for (int o = 0; o < out_; ++o) bias.grad[o] += dym.col(o).sum();
  Tensor dx({n, in_});
  ConstMapMat wm(weight.value.data(), out_, in_);
  MapMat dxm(dx.data(), n, in_);
  dxm.noalias() = dym * wm;
  return dx;
}

// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(const std::string& name, int in_channels, int out_channels, int kernel,
                     int stride)
    : conv(name + ".conv", in_channels, out_channels, kernel, stride, kernel / 2),
      norm(name + ".norm", out_channels) {}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
  return act.forward(norm.forward(conv.forward(x), mode));
}

Tensor ConvBlock::backward(const Tensor& dy, bool need_input_grad) {
  return conv.backward(norm.backward(act.backward(dy)), need_input_grad);
}

// ---------------------------------------------------------------------------

namespace {

struct Tap {
  int i0, i1;
  double t;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int i = 0; i < out; ++i) {
    const double src =
        out > 1 ? static_cast<double>(i) * static_cast<double>(in - 1) / (out - 1) : 0.0;
    int i0 = static_cast<int>(std::floor(src));
    i0 = std::clamp(i0, 0, in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  require_rank4(x, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw InvalidArgument("bilinear_resize: empty output");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = resize_taps(h, out_h);
  const auto tx = resize_taps(w, out_w);
  Tensor y({n, c, out_h, out_w});
  for (int p = 0; p < n * c; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = y.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        const double top = src[a.i0 * w + b.i0] * (1.0 - b.t) + src[a.i0 * w + b.i1] * b.t;
        const double bot = src[a.i1 * w + b.i0] * (1.0 - b.t) + src[a.i1 * w + b.i1] * b.t;
        dst[i * out_w + j] = top * (1.0 - a.t) + bot * a.t;
      }
    }
  }
  return y;
}

Tensor bilinear_resize_backward(const Tensor& dy, int in_h, int in_w) {
  require_rank4(dy, "bilinear_resize_backward");
  const int n = dy.dim(0), c = dy.dim(1), out_h = dy.dim(2), out_w = dy.dim(3);
  const auto ty = resize_taps(in_h, out_h);
  const auto tx = resize_taps(in_w, out_w);
  Tensor dx({n, c, in_h, in_w});
  for (int p = 0; p < n * c; ++p) {
    const double* src = dy.data() + static_cast<std::size_t>(p) * out_h * out_w;
    double* dst = dx.data() + static_cast<std::size_t>(p) * in_h * in_w;
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        const double g = src[i * out_w + j];
        dst[a.i0 * in_w + b.i0] += g * (1.0 - a.t) * (1.0 - b.t);
        dst[a.i0 * in_w + b.i1] += g * (1.0 - a.t) * b.t;
        dst[a.i1 * in_w + b.i0] += g * a.t * (1.0 - b.t);
        dst[a.i1 * in_w + b.i1] += g * a.t * b.t;
      }
    }
  }
  return dx;
}

}  // namespace lisa
