#include <cmath>

#include "hybridflow/kernels.hpp"

namespace hybridflow::kernels::scalar {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T aip = trans_a ? a[static_cast<std::ptrdiff_t>(p) * lda + i] : a[static_cast<std::ptrdiff_t>(i) * lda + p];
      if (trans_b) {
        for (int j = 0; j < n; ++j) crow[j] += aip * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
      } else {
        const T* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

template <typename T>
void leaky_relu_forward(std::span<T> x, T slope) {
  for (auto& value : x) value = value > T(0) ? value : slope * value;
}

template <typename T>
void leaky_relu_backward(std::span<const T> out, std::span<T> grad, T slope) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = out[i] > T(0) ? grad[i] : slope * grad[i];
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamStep<T>& step) {
  const T one_minus_b1 = T(1) - step.beta1;
  const T one_minus_b2 = T(1) - step.beta2;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    m[i] = step.beta1 * m[i] + one_minus_b1 * g;
    v[i] = step.beta2 * v[i] + one_minus_b2 * (g * g);
    const T m_hat = m[i] / step.bias_correction1;
    const T v_hat = v[i] / step.bias_correction2;
    param[i] = param[i] - step.lr * (m_hat / (std::sqrt(v_hat) + step.epsilon));
  }
}

template void gemm<float>(bool, bool, int, int, int, const float*, int, const float*, int, float, float*, int);
template void gemm<double>(bool, bool, int, int, int, const double*, int, const double*, int, double, double*,
                           int);
template void leaky_relu_forward<float>(std::span<float>, float);
template void leaky_relu_forward<double>(std::span<double>, double);
template void leaky_relu_backward<float>(std::span<const float>, std::span<float>, float);
template void leaky_relu_backward<double>(std::span<const double>, std::span<double>, double);
template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 const AdamStep<float>&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, const AdamStep<double>&);

}  // namespace hybridflow::kernels::scalar
