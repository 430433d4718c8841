#include "lisa/fft.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <vector>

#include "lisa/errors.hpp"
#include "lisa/geometry.hpp"

namespace lisa {

namespace {

using cplx = std::complex<double>;

inline cplx mul(cplx a, cplx b) {
  // Plain product; std::complex's operator* carries inf/nan recovery code.
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

/// In-place 1D complex DFT of a fixed length. Radix-2 for powers of two,
/// direct summation with a cached twiddle table otherwise.
class Fft1d {
 public:
  explicit Fft1d(int n) : n_(n), pow2_(n > 0 && (n & (n - 1)) == 0), roots_(n) {
    for (int k = 0; k < n; ++k) {
      const double t = -2.0 * kPi * k / n;
      roots_[k] = {std::cos(t), std::sin(t)};
    }
    if (pow2_) {
      rev_.resize(n);
      int bits = 0;
      while ((1 << bits) < n) ++bits;
      for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
        rev_[i] = r;
      }
      // Twiddles laid out stage by stage so the inner loop reads them in order.
      for (int len = 2; len <= n; len <<= 1) {
        for (int j = 0; j < len / 2; ++j) {
          stage_fwd_.push_back(roots_[j * (n / len)]);
          stage_inv_.push_back(std::conj(roots_[j * (n / len)]));
        }
      }
    } else {
      scratch_.resize(n);
    }
  }

  /// inverse = true uses e^{+i...} and no scaling.
  void run(cplx* a, bool inverse) {
    if (pow2_) {
      for (int i = 0; i < n_; ++i) {
        if (i < rev_[i]) std::swap(a[i], a[rev_[i]]);
      }
      const cplx* tw = inverse ? stage_inv_.data() : stage_fwd_.data();
      for (int len = 2; len <= n_; len <<= 1) {
        const int half = len / 2;
        for (int i = 0; i < n_; i += len) {
          cplx* lo = a + i;
          cplx* hi = a + i + half;
          for (int j = 0; j < half; ++j) {
            const cplx v = mul(hi[j], tw[j]);
            const cplx u = lo[j];
            lo[j] = u + v;
            hi[j] = u - v;
          }
        }
        tw += half;
      }
      return;
    }
    for (int k = 0; k < n_; ++k) {
      cplx acc = 0.0;
      for (int j = 0; j < n_; ++j) {
        const cplx w = roots_[(static_cast<long>(j) * k) % n_];
        acc += mul(a[j], inverse ? std::conj(w) : w);
      }
      scratch_[k] = acc;
    }
    std::copy(scratch_.begin(), scratch_.end(), a);
  }

 private:
  int n_;
  bool pow2_;
  std::vector<cplx> roots_;
  std::vector<int> rev_;
  std::vector<cplx> stage_fwd_;
  std::vector<cplx> stage_inv_;
  std::vector<cplx> scratch_;
};

Fft1d& plan_for(int n) {
  thread_local std::map<int, Fft1d> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fft1d(n)).first;
  return it->second;
}

void check_spatial(const Tensor& f, const char* who) {
  if (f.rank() < 2 || f.dim(-2) < 1 || f.dim(-1) < 1) {
    throw InvalidArgument(std::string(who) + ": need a tensor with two spatial axes, got " +
                          f.shape_str());
  }
}

std::vector<int> half_shape(const std::vector<int>& spatial_shape, int width) {
  std::vector<int> s = spatial_shape;
  s.back() = width / 2 + 1;
  return s;
}

/// Forward half-spectrum transform of every [H, W] plane. Real rows are
/// transformed two at a time as the real and imaginary parts of one complex
/// sequence.
SpectralTensor forward_planes(const Tensor& f) {
  const int h = f.dim(-2), w = f.dim(-1), wh = w / 2 + 1;
  const std::size_t planes = f.size() / (static_cast<std::size_t>(h) * w);
  SpectralTensor y;
  y.height = h;
  y.width = w;
  y.re = Tensor(half_shape(f.shape(), w));
  y.im = Tensor(half_shape(f.shape(), w));

  Fft1d& row_fft = plan_for(w);
  Fft1d& col_fft = plan_for(h);
  std::vector<cplx> row(w), col(h), half(static_cast<std::size_t>(h) * wh);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = f.data() + p * h * w;
    int r = 0;
    for (; r + 1 < h; r += 2) {
      const double* a = src + r * w;
      const double* b = a + w;
      for (int c = 0; c < w; ++c) row[c] = cplx(a[c], b[c]);
      row_fft.run(row.data(), false);
      for (int v = 0; v < wh; ++v) {
        const cplx z = row[v];
        const cplx zc = std::conj(row[(w - v) % w]);
        half[r * wh + v] = 0.5 * (z + zc);
        const cplx d = z - zc;
        half[(r + 1) * wh + v] = cplx(0.5 * d.imag(), -0.5 * d.real());
      }
    }
    if (r < h) {
      for (int c = 0; c < w; ++c) row[c] = src[r * w + c];
      row_fft.run(row.data(), false);
      for (int v = 0; v < wh; ++v) half[r * wh + v] = row[v];
    }
    double* re = y.re.data() + p * h * wh;
    double* im = y.im.data() + p * h * wh;
    for (int v = 0; v < wh; ++v) {
      for (int u = 0; u < h; ++u) col[u] = half[u * wh + v];
      col_fft.run(col.data(), false);
      for (int u = 0; u < h; ++u) {
        re[u * wh + v] = col[u].real();
        im[u * wh + v] = col[u].imag();
      }
    }
  }
  return y;
}

/// Full-length spectrum whose inverse transform is Re sum_{v < wh} g_v e^{+i...}.
void expand_half_row(const cplx* g, int w, int wh, cplx* full) {
  full[0] = g[0].real();
  for (int v = 1; v < wh; ++v) {
    if (2 * v == w) {
      full[v] = g[v].real();
    } else {
      full[v] = 0.5 * g[v];
      full[w - v] = 0.5 * std::conj(g[v]);
    }
  }
}

/// x[h, w] = Re sum_{u, v < W/2+1} scale(v) * Z[u, v] e^{+2 pi i (u h / H + v w / W)}.
Tensor synthesize_planes(const SpectralTensor& z, bool hermitian_weights, double scale) {
  const int h = z.height, w = z.width, wh = z.half_width();
  std::vector<int> shape = z.re.shape();
  shape.back() = w;
  Tensor x(shape);
  const std::size_t planes = z.re.size() / (static_cast<std::size_t>(h) * wh);

  Fft1d& row_fft = plan_for(w);
  Fft1d& col_fft = plan_for(h);
  std::vector<double> weight(wh);
  for (int v = 0; v < wh; ++v) weight[v] = (hermitian_weights ? hermitian_weight(v, w) : 1.0) * scale;
  std::vector<cplx> col(h), fa(w), fb(w), half(static_cast<std::size_t>(h) * wh);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* re = z.re.data() + p * h * wh;
    const double* im = z.im.data() + p * h * wh;
    for (int v = 0; v < wh; ++v) {
      for (int u = 0; u < h; ++u) col[u] = cplx(re[u * wh + v], im[u * wh + v]) * weight[v];
      col_fft.run(col.data(), true);
      for (int r = 0; r < h; ++r) half[r * wh + v] = col[r];
    }
    double* dst = x.data() + p * h * w;
    int r = 0;
    for (; r + 1 < h; r += 2) {
      // Two real outputs from one complex inverse transform.
      expand_half_row(&half[r * wh], w, wh, fa.data());
      expand_half_row(&half[(r + 1) * wh], w, wh, fb.data());
      for (int c = 0; c < w; ++c) fa[c] = cplx(fa[c].real() - fb[c].imag(), fa[c].imag() + fb[c].real());
      row_fft.run(fa.data(), true);
      for (int c = 0; c < w; ++c) {
        dst[r * w + c] = fa[c].real();
        dst[(r + 1) * w + c] = fa[c].imag();
      }
    }
    if (r < h) {
      expand_half_row(&half[r * wh], w, wh, fa.data());
      row_fft.run(fa.data(), true);
      for (int c = 0; c < w; ++c) dst[r * w + c] = fa[c].real();
    }
  }
  return x;
}

}  // namespace

double hermitian_weight(int v, int width) {
  if (v == 0) return 1.0;
  if (width % 2 == 0 && v == width / 2) return 1.0;
  return 2.0;
}

void SpectralTensor::validate() const {
  if (!re.same_shape(im)) {
    throw InvalidArgument("spectral tensor: re " + re.shape_str() + " vs im " + im.shape_str());
  }
  if (height < 1 || width < 1 || re.rank() < 2 || re.dim(-2) != height ||
      re.dim(-1) != half_width()) {
    throw InvalidArgument("spectral tensor: shape " + re.shape_str() +
                          " inconsistent with spatial " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
}

SpectralTensor rfft2(const Tensor& f) {
  check_spatial(f, "rfft2");
  if (!f.all_finite()) throw InvalidArgument("rfft2: non-finite input");
  return forward_planes(f);
}

Tensor irfft2(const SpectralTensor& y) {
  y.validate();
  return synthesize_planes(y, true, 1.0 / (static_cast<double>(y.height) * y.width));
}

Tensor rfft2_backward(const SpectralTensor& grad) {
  grad.validate();
  return synthesize_planes(grad, false, 1.0);
}

SpectralTensor irfft2_backward(const Tensor& grad, int height, int width) {
  check_spatial(grad, "irfft2_backward");
  if (grad.dim(-2) != height || grad.dim(-1) != width) {
    throw ShapeError("irfft2_backward: gradient " + grad.shape_str() + " vs spatial " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  SpectralTensor g = forward_planes(grad);
  const int wh = g.half_width();
  const double inv = 1.0 / (static_cast<double>(height) * width);
  for (std::size_t i = 0; i < g.re.size(); ++i) {
    const double s = hermitian_weight(static_cast<int>(i % wh), width) * inv;
    g.re[i] *= s;
    g.im[i] *= s;
  }
  return g;
}

}  // namespace lisa
