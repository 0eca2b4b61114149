// Built with -mavx2 -mfma. Only reached through the dispatcher after a CPUID
// check, so nothing here may run on a CPU without AVX2.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "hybridflow/kernels.hpp"

namespace hybridflow::kernels::avx2 {

namespace {

constexpr int kMR = 4;
constexpr int kNR = 16;
constexpr int kKC = 256;
constexpr int kMC = 64;
constexpr int kNC = 1024;

inline float op_at(const float* x, int ld, bool trans, int row, int col) {
  return trans ? x[static_cast<std::ptrdiff_t>(col) * ld + row] : x[static_cast<std::ptrdiff_t>(row) * ld + col];
}

// A block [mc x kc] -> panels of kMR rows, k-major inside a panel, zero padded.
void pack_a(bool trans_a, const float* a, int lda, int i0, int mc, int p0, int kc, float* dst) {
  for (int ip = 0; ip < mc; ip += kMR) {
    const int rows = std::min(kMR, mc - ip);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < kMR; ++r) dst[r] = r < rows ? op_at(a, lda, trans_a, i0 + ip + r, p0 + p) : 0.0f;
      dst += kMR;
    }
  }
}

// B block [kc x nc] -> panels of kNR columns, k-major inside a panel, zero padded.
void pack_b(bool trans_b, const float* b, int ldb, int p0, int kc, int j0, int nc, float* dst) {
  for (int jp = 0; jp < nc; jp += kNR) {
    const int cols = std::min(kNR, nc - jp);
    for (int p = 0; p < kc; ++p) {
      if (!trans_b && cols == kNR) {
        std::memcpy(dst, b + static_cast<std::ptrdiff_t>(p0 + p) * ldb + j0 + jp, kNR * sizeof(float));
      } else {
        for (int c = 0; c < kNR; ++c) dst[c] = c < cols ? op_at(b, ldb, trans_b, p0 + p, j0 + jp + c) : 0.0f;
      }
      dst += kNR;
    }
  }
}

// C[rows x cols] += Ap[4 x kc] * Bp[kc x 16]
void micro_kernel(int kc, const float* ap, const float* bp, float* c, int ldc, int rows, int cols) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  for (int p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    ap += kMR;
    bp += kNR;
  }
  if (rows == kMR && cols == kNR) {
    auto accumulate = [](float* dst, __m256 lo, __m256 hi) {
      _mm256_storeu_ps(dst, _mm256_add_ps(_mm256_loadu_ps(dst), lo));
      _mm256_storeu_ps(dst + 8, _mm256_add_ps(_mm256_loadu_ps(dst + 8), hi));
    };
    accumulate(c, c00, c01);
    accumulate(c + ldc, c10, c11);
    accumulate(c + 2 * ldc, c20, c21);
    accumulate(c + 3 * ldc, c30, c31);
    return;
  }
  alignas(32) float tile[kMR][kNR];
  _mm256_store_ps(tile[0], c00);
  _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10);
  _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20);
  _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30);
  _mm256_store_ps(tile[3] + 8, c31);
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) c[static_cast<std::ptrdiff_t>(r) * ldc + j] += tile[r][j];
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
  if (beta == 0.0f) {
    for (int i = 0; i < m; ++i) std::fill_n(c + static_cast<std::ptrdiff_t>(i) * ldc, n, 0.0f);
  }
  if (m == 0 || n == 0 || k == 0) return;

  thread_local std::vector<float> a_pack;
  thread_local std::vector<float> b_pack;
  a_pack.resize(static_cast<std::size_t>(kMC + kMR) * kKC);
  b_pack.resize(static_cast<std::size_t>(kNC + kNR) * kKC);

  for (int j0 = 0; j0 < n; j0 += kNC) {
    const int nc = std::min(kNC, n - j0);
    for (int p0 = 0; p0 < k; p0 += kKC) {
      const int kc = std::min(kKC, k - p0);
      pack_b(trans_b, b, ldb, p0, kc, j0, nc, b_pack.data());
      for (int i0 = 0; i0 < m; i0 += kMC) {
        const int mc = std::min(kMC, m - i0);
        pack_a(trans_a, a, lda, i0, mc, p0, kc, a_pack.data());
        for (int jp = 0; jp < nc; jp += kNR) {
          const float* bp = b_pack.data() + static_cast<std::ptrdiff_t>(jp / kNR) * kNR * kc;
          const int cols = std::min(kNR, nc - jp);
          for (int ip = 0; ip < mc; ip += kMR) {
            const float* ap = a_pack.data() + static_cast<std::ptrdiff_t>(ip / kMR) * kMR * kc;
            const int rows = std::min(kMR, mc - ip);
            float* cblock = c + static_cast<std::ptrdiff_t>(i0 + ip) * ldc + j0 + jp;
            micro_kernel(kc, ap, bp, cblock, ldc, rows, cols);
          }
        }
      }
    }
  }
}

void leaky_relu_forward(std::span<float> x, float slope) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 s = _mm256_set1_ps(slope);
  std::size_t i = 0;
  for (; i + 8 <= x.size(); i += 8) {
    const __m256 v = _mm256_loadu_ps(x.data() + i);
    const __m256 positive = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(x.data() + i, _mm256_blendv_ps(_mm256_mul_ps(s, v), v, positive));
  }
  for (; i < x.size(); ++i) x[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_backward(std::span<const float> out, std::span<float> grad, float slope) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 s = _mm256_set1_ps(slope);
  std::size_t i = 0;
  for (; i + 8 <= grad.size(); i += 8) {
    const __m256 g = _mm256_loadu_ps(grad.data() + i);
    const __m256 positive = _mm256_cmp_ps(_mm256_loadu_ps(out.data() + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(grad.data() + i, _mm256_blendv_ps(_mm256_mul_ps(s, g), g, positive));
  }
  for (; i < grad.size(); ++i) grad[i] = out[i] > 0.0f ? grad[i] : slope * grad[i];
}

// Same operation order as the scalar reference and no fused multiply-add, so
// results are bit-identical to it.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 const AdamStep<float>& step) {
  const float one_minus_b1 = 1.0f - step.beta1;
  const float one_minus_b2 = 1.0f - step.beta2;
  const __m256 b1 = _mm256_set1_ps(step.beta1);
  const __m256 b2 = _mm256_set1_ps(step.beta2);
  const __m256 nb1 = _mm256_set1_ps(one_minus_b1);
  const __m256 nb2 = _mm256_set1_ps(one_minus_b2);
  const __m256 c1 = _mm256_set1_ps(step.bias_correction1);
  const __m256 c2 = _mm256_set1_ps(step.bias_correction2);
  const __m256 lr = _mm256_set1_ps(step.lr);
  const __m256 eps = _mm256_set1_ps(step.epsilon);
  std::size_t i = 0;
  for (; i + 8 <= param.size(); i += 8) {
    const __m256 g = _mm256_loadu_ps(grad.data() + i);
    const __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m.data() + i)), _mm256_mul_ps(nb1, g));
    const __m256 vi = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v.data() + i)),
                                    _mm256_mul_ps(nb2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m.data() + i, mi);
    _mm256_storeu_ps(v.data() + i, vi);
    const __m256 m_hat = _mm256_div_ps(mi, c1);
    const __m256 v_hat = _mm256_div_ps(vi, c2);
    const __m256 update = _mm256_mul_ps(lr, _mm256_div_ps(m_hat, _mm256_add_ps(_mm256_sqrt_ps(v_hat), eps)));
    _mm256_storeu_ps(param.data() + i, _mm256_sub_ps(_mm256_loadu_ps(param.data() + i), update));
  }
  for (; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = step.beta1 * m[i] + one_minus_b1 * g;
    v[i] = step.beta2 * v[i] + one_minus_b2 * (g * g);
    const float m_hat = m[i] / step.bias_correction1;
    const float v_hat = v[i] / step.bias_correction2;
    param[i] = param[i] - step.lr * (m_hat / (std::sqrt(v_hat) + step.epsilon));
  }
}

}  // namespace hybridflow::kernels::avx2
