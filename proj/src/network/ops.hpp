#pragma once

// Per-sample (single image, CHW) convolution primitives. Backward functions
// accumulate into their gradient outputs.

#include <vector>

namespace hybridflow::network::ops {

struct ConvGeometry {
  int in_channels, in_h, in_w;
  int out_channels, out_h, out_w;
  int kernel_h, kernel_w, stride, padding;
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col);

/// Scatter-adds columns back into an image (adjoint of im2col).
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x);

/// y[out, oh*ow] = W[out, in*kh*kw] * im2col(x) + b
template <typename T>
void conv_forward(const T* x, const T* weight, const T* bias, const ConvGeometry& g, T* y, std::vector<T>& scratch);

/// dx may be null.
template <typename T>
void conv_backward(const T* x, const T* weight, const T* dy, const ConvGeometry& g, T* dweight, T* dbias, T* dx,
                   std::vector<T>& scratch);

/// Transposed convolution. `g` describes the equivalent forward convolution
/// from the output (g.in_*) back to the input (g.out_*); weight is (in=g.out_channels,
/// out=g.in_channels, kh, kw). x has g.out_channels x g.out_h x g.out_w values.
template <typename T>
void upconv_forward(const T* x, const T* weight, const T* bias, const ConvGeometry& g, T* y, std::vector<T>& scratch);

template <typename T>
void upconv_backward(const T* x, const T* weight, const T* dy, const ConvGeometry& g, T* dweight, T* dbias, T* dx,
                     std::vector<T>& scratch);

/// Bilinear 2x upsampling with half-pixel centers and edge clamping.
template <typename T>
void upsample2x_forward(const T* x, int channels, int h, int w, T* y);

template <typename T>
void upsample2x_backward(const T* dy, int channels, int h, int w, T* dx);

}  // namespace hybridflow::network::ops
