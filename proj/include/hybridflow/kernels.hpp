#pragma once

// Arithmetic inner loops of the network. Every kernel has a portable scalar
// reference in `kernels::scalar` and, for single precision, an AVX2/FMA
// variant in `kernels::avx2`. The unqualified entry points dispatch at run
// time to the best variant the CPU supports; double precision always uses the
// scalar reference.

#include <cstddef>
#include <span>
#include <string_view>

namespace hybridflow::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view to_string(Backend backend);

/// True when the running CPU reports AVX2 and FMA.
bool avx2_supported();

/// Currently selected backend. Defaults to Avx2 when supported, unless the
/// environment variable HYBRIDFLOW_KERNELS=scalar is set.
Backend active_backend();

/// Forces a backend. Selecting Avx2 on a CPU without it is ignored.
void set_backend(Backend backend);

/// Hyper-parameters of one Adam step. bias_correction1/2 are 1 - beta^t.
template <typename T>
struct AdamStep {
  T lr;
  T beta1;
  T beta2;
  T epsilon;
  T bias_correction1;
  T bias_correction2;
};

namespace scalar {

/// C[m x n] = op(A)[m x k] * op(B)[k x n] + beta * C, row-major, beta in {0, 1}.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

/// In place: x = x > 0 ? x : slope * x.
template <typename T>
void leaky_relu_forward(std::span<T> x, T slope);

/// grad *= (out > 0 ? 1 : slope), where out is the forward output.
template <typename T>
void leaky_relu_backward(std::span<const T> out, std::span<T> grad, T slope);

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 const AdamStep<T>& step);

}  // namespace scalar

namespace avx2 {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc);
void leaky_relu_forward(std::span<float> x, float slope);
void leaky_relu_backward(std::span<const float> out, std::span<float> grad, float slope);
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 const AdamStep<float>& step);

}  // namespace avx2

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc);
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc);

void leaky_relu_forward(std::span<float> x, float slope);
void leaky_relu_forward(std::span<double> x, double slope);
void leaky_relu_backward(std::span<const float> out, std::span<float> grad, float slope);
void leaky_relu_backward(std::span<const double> out, std::span<double> grad, double slope);

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 const AdamStep<float>& step);
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep<double>& step);

}  // namespace hybridflow::kernels
