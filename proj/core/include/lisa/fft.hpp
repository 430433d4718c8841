#pragma once

#include "lisa/tensor.hpp"

// 2D real FFT over the last two axes of a tensor, keeping the non-redundant
// half spectrum (W/2 + 1 columns). Forward is unnormalized; the inverse
// carries the 1/(H*W) factor.

namespace lisa {

/// Complex half spectrum carried as explicit real/imaginary tensors of shape
/// [..., H, W/2 + 1]. `width` records the spatial W, which the half-spectrum
/// width alone cannot recover for odd W.
struct SpectralTensor {
  Tensor re;
  Tensor im;
  int height = 0;
  int width = 0;

  int half_width() const { return width / 2 + 1; }
  /// Throws InvalidArgument if re/im or the recorded spatial shape disagree.
  void validate() const;
};

SpectralTensor rfft2(const Tensor& f);
Tensor irfft2(const SpectralTensor& y);

/// Adjoint of rfft2: dL/df given dL/d(re), dL/d(im).
Tensor rfft2_backward(const SpectralTensor& grad);
/// Adjoint of irfft2: dL/d(re), dL/d(im) given dL/df.
SpectralTensor irfft2_backward(const Tensor& grad, int height, int width);

/// Weight of half-spectrum column v when its conjugate mirror is folded in:
/// 1 for the DC column (and the Nyquist column of even W), 2 otherwise.
double hermitian_weight(int v, int width);

}  // namespace lisa
