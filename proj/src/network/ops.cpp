#include "ops.hpp"

#include <algorithm>
#include <cstddef>

#include "hybridflow/kernels.hpp"

namespace hybridflow::network::ops {

namespace {

using std::ptrdiff_t;

// Source index and weight pairs for one output coordinate of the 2x upsample.
struct Taps {
  int i0, i1;
  double w0, w1;
};

Taps upsample_taps(int out, int in_size) {
  double src = (out + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  int i0 = static_cast<int>(src);
  if (i0 > in_size - 1) i0 = in_size - 1;
  const int i1 = std::min(i0 + 1, in_size - 1);
  const double frac = src - i0;
  return {i0, i1, 1.0 - frac, frac};
}

}  // namespace

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const ptrdiff_t plane = static_cast<ptrdiff_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.in_channels; ++c) {
    const T* xc = x + static_cast<ptrdiff_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        T* row = col + ((static_cast<ptrdiff_t>(c) * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* dst = row + static_cast<ptrdiff_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<ptrdiff_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  const ptrdiff_t plane = static_cast<ptrdiff_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.in_channels; ++c) {
    T* xc = x + static_cast<ptrdiff_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel_h; ++ky) {
      for (int kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = col + ((static_cast<ptrdiff_t>(c) * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + static_cast<ptrdiff_t>(oy) * g.out_w;
          T* dst = xc + static_cast<ptrdiff_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const T* x, const T* weight, const T* bias, const ConvGeometry& g, T* y, std::vector<T>& scratch) {
  const int k = g.in_channels * g.kernel_h * g.kernel_w;
  const int p = g.out_h * g.out_w;
  scratch.resize(static_cast<std::size_t>(k) * p);
  im2col(x, g, scratch.data());
  kernels::gemm(false, false, g.out_channels, p, k, weight, k, scratch.data(), p, T(0), y, p);
  for (int o = 0; o < g.out_channels; ++o) {
    T* yo = y + static_cast<ptrdiff_t>(o) * p;
    for (int i = 0; i < p; ++i) yo[i] += bias[o];
  }
}

template <typename T>
void conv_backward(const T* x, const T* weight, const T* dy, const ConvGeometry& g, T* dweight, T* dbias, T* dx,
                   std::vector<T>& scratch) {
  const int k = g.in_channels * g.kernel_h * g.kernel_w;
  const int p = g.out_h * g.out_w;
  scratch.resize(static_cast<std::size_t>(k) * p);
  im2col(x, g, scratch.data());
  kernels::gemm(false, true, g.out_channels, k, p, dy, p, scratch.data(), p, T(1), dweight, k);
  for (int o = 0; o < g.out_channels; ++o) {
    const T* dyo = dy + static_cast<ptrdiff_t>(o) * p;
    T sum = T(0);
    for (int i = 0; i < p; ++i) sum += dyo[i];
    dbias[o] += sum;
  }
  if (dx != nullptr) {
    kernels::gemm(true, false, k, p, g.out_channels, weight, k, dy, p, T(0), scratch.data(), p);
    col2im(scratch.data(), g, dx);
  }
}

template <typename T>
void upconv_forward(const T* x, const T* weight, const T* bias, const ConvGeometry& g, T* y, std::vector<T>& scratch) {
  const int rows = g.in_channels * g.kernel_h * g.kernel_w;  // output channels x kernel taps
  const int p = g.out_h * g.out_w;                           // input pixels
  scratch.resize(static_cast<std::size_t>(rows) * p);
  kernels::gemm(true, false, rows, p, g.out_channels, weight, rows, x, p, T(0), scratch.data(), p);
  const std::size_t out_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  std::fill_n(y, out_size, T(0));
  col2im(scratch.data(), g, y);
  const ptrdiff_t plane = static_cast<ptrdiff_t>(g.in_h) * g.in_w;
  for (int o = 0; o < g.in_channels; ++o) {
    T* yo = y + o * plane;
    for (ptrdiff_t i = 0; i < plane; ++i) yo[i] += bias[o];
  }
}

template <typename T>
void upconv_backward(const T* x, const T* weight, const T* dy, const ConvGeometry& g, T* dweight, T* dbias, T* dx,
                     std::vector<T>& scratch) {
  const int rows = g.in_channels * g.kernel_h * g.kernel_w;
  const int p = g.out_h * g.out_w;
  scratch.resize(static_cast<std::size_t>(rows) * p);
  im2col(dy, g, scratch.data());
  kernels::gemm(false, true, g.out_channels, rows, p, x, p, scratch.data(), p, T(1), dweight, rows);
  if (dx != nullptr) {
    kernels::gemm(false, false, g.out_channels, p, rows, weight, rows, scratch.data(), p, T(1), dx, p);
  }
  const ptrdiff_t plane = static_cast<ptrdiff_t>(g.in_h) * g.in_w;
  for (int o = 0; o < g.in_channels; ++o) {
    const T* dyo = dy + o * plane;
    T sum = T(0);
    for (ptrdiff_t i = 0; i < plane; ++i) sum += dyo[i];
    dbias[o] += sum;
  }
}

template <typename T>
void upsample2x_forward(const T* x, int channels, int h, int w, T* y) {
  const int oh = 2 * h, ow = 2 * w;
  std::vector<Taps> tx(ow);
  for (int i = 0; i < ow; ++i) tx[i] = upsample_taps(i, w);
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<ptrdiff_t>(c) * h * w;
    T* yc = y + static_cast<ptrdiff_t>(c) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const Taps ty = upsample_taps(oy, h);
      const T* r0 = xc + static_cast<ptrdiff_t>(ty.i0) * w;
      const T* r1 = xc + static_cast<ptrdiff_t>(ty.i1) * w;
      for (int ox = 0; ox < ow; ++ox) {
        const Taps& t = tx[ox];
        const T top = T(t.w0) * r0[t.i0] + T(t.w1) * r0[t.i1];
        const T bottom = T(t.w0) * r1[t.i0] + T(t.w1) * r1[t.i1];
        yc[static_cast<ptrdiff_t>(oy) * ow + ox] = T(ty.w0) * top + T(ty.w1) * bottom;
      }
    }
  }
}

template <typename T>
void upsample2x_backward(const T* dy, int channels, int h, int w, T* dx) {
  const int oh = 2 * h, ow = 2 * w;
  std::vector<Taps> tx(ow);
  for (int i = 0; i < ow; ++i) tx[i] = upsample_taps(i, w);
  for (int c = 0; c < channels; ++c) {
    T* dxc = dx + static_cast<ptrdiff_t>(c) * h * w;
    const T* dyc = dy + static_cast<ptrdiff_t>(c) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const Taps ty = upsample_taps(oy, h);
      T* r0 = dxc + static_cast<ptrdiff_t>(ty.i0) * w;
      T* r1 = dxc + static_cast<ptrdiff_t>(ty.i1) * w;
      for (int ox = 0; ox < ow; ++ox) {
        const Taps& t = tx[ox];
        const T g = dyc[static_cast<ptrdiff_t>(oy) * ow + ox];
        const T gt = T(ty.w0) * g;
        const T gb = T(ty.w1) * g;
        r0[t.i0] += T(t.w0) * gt;
        r0[t.i1] += T(t.w1) * gt;
        r1[t.i0] += T(t.w0) * gb;
        r1[t.i1] += T(t.w1) * gb;
      }
    }
  }
}

#define HYBRIDFLOW_INSTANTIATE_OPS(T)                                                                        \
  template void im2col<T>(const T*, const ConvGeometry&, T*);                                               \
  template void col2im<T>(const T*, const ConvGeometry&, T*);                                               \
  template void conv_forward<T>(const T*, const T*, const T*, const ConvGeometry&, T*, std::vector<T>&);    \
  template void conv_backward<T>(const T*, const T*, const T*, const ConvGeometry&, T*, T*, T*,             \
                                 std::vector<T>&);                                                          \
  template void upconv_forward<T>(const T*, const T*, const T*, const ConvGeometry&, T*, std::vector<T>&);  \
  template void upconv_backward<T>(const T*, const T*, const T*, const ConvGeometry&, T*, T*, T*,           \
                                   std::vector<T>&);                                                        \
  template void upsample2x_forward<T>(const T*, int, int, int, T*);                                         \
  template void upsample2x_backward<T>(const T*, int, int, int, T*);

HYBRIDFLOW_INSTANTIATE_OPS(float)
HYBRIDFLOW_INSTANTIATE_OPS(double)

#undef HYBRIDFLOW_INSTANTIATE_OPS

}  // namespace hybridflow::network::ops
