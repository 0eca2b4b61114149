#include <atomic>
#include <cstdlib>
#include <string>

#include "hybridflow/kernels.hpp"

namespace hybridflow::kernels {

namespace {

bool detect_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("HYBRIDFLOW_KERNELS"); env && std::string(env) == "scalar") {
    return Backend::Scalar;
  }
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

bool use_avx2() { return backend_slot().load(std::memory_order_relaxed) == Backend::Avx2; }

}  // namespace

std::string_view to_string(Backend backend) { return backend == Backend::Avx2 ? "avx2" : "scalar"; }

bool avx2_supported() {
  static const bool supported = detect_avx2();
  return supported;
}

Backend active_backend() { return backend_slot().load(); }

void set_backend(Backend backend) {
  if (backend == Backend::Avx2 && !avx2_supported()) return;
  backend_slot().store(backend);
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
  if (use_avx2()) {
    avx2::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  } else {
    scalar::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  scalar::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

void leaky_relu_forward(std::span<float> x, float slope) {
  if (use_avx2()) avx2::leaky_relu_forward(x, slope);
  else scalar::leaky_relu_forward(x, slope);
}

void leaky_relu_forward(std::span<double> x, double slope) { scalar::leaky_relu_forward(x, slope); }

void leaky_relu_backward(std::span<const float> out, std::span<float> grad, float slope) {
  if (use_avx2()) avx2::leaky_relu_backward(out, grad, slope);
  else scalar::leaky_relu_backward(out, grad, slope);
}

void leaky_relu_backward(std::span<const double> out, std::span<double> grad, double slope) {
  scalar::leaky_relu_backward(out, grad, slope);
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 const AdamStep<float>& step) {
  if (use_avx2()) avx2::adam_update(param, grad, m, v, step);
  else scalar::adam_update(param, grad, m, v, step);
}

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, const AdamStep<double>& step) {
  scalar::adam_update(param, grad, m, v, step);
}

}  // namespace hybridflow::kernels
