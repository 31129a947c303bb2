#include "coic/kernels.hpp"

#include <cstring>
#include <string_view>

#if defined(__x86_64__) || defined(_M_X64)
#define COIC_X86 1
#include <immintrin.h>
#else
#define COIC_X86 0
#endif

#if defined(__aarch64__)
#define COIC_NEON 1
#include <arm_neon.h>
#else
#define COIC_NEON 0
#endif

namespace coic::kernels {

namespace scalar {

void axpy(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

float dot(const float* x, const float* y, std::size_t n) {
  float acc = 0.f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

float sum(const float* x, std::size_t n) {
  float acc = 0.f;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void add(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void scale(float a, float* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace scalar

#if COIC_X86
namespace avx2 {

__attribute__((target("avx2,fma"))) void axpy(float a, const float* x, float* y,
                                              std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) float dot(const float* x, const float* y,
                                              std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  __m128 lo = _mm256_castps256_ps128(acc);
  __m128 hi = _mm256_extractf128_ps(acc, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  float r = _mm_cvtss_f32(lo);
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

__attribute__((target("avx2,fma"))) float sum(const float* x, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  __m128 lo = _mm256_castps256_ps128(acc);
  __m128 hi = _mm256_extractf128_ps(acc, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  float r = _mm_cvtss_f32(lo);
  for (; i < n; ++i) r += x[i];
  return r;
}

__attribute__((target("avx2,fma"))) void add(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

__attribute__((target("avx2,fma"))) void scale(float a, float* x, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) x[i] *= a;
}

__attribute__((target("avx2,fma"))) void mul(const float* a, const float* b, float* out,
                                             std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace avx2
#endif  // COIC_X86

#if COIC_NEON
namespace neon {

void axpy(float a, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

float dot(const float* x, const float* y, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
  float r = vaddvq_f32(acc);
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

}  // namespace neon
#endif  // COIC_NEON

namespace {

struct Dispatch {
  void (*axpy)(float, const float*, float*, std::size_t);
  float (*dot)(const float*, const float*, std::size_t);
  float (*sum)(const float*, std::size_t);
  void (*add)(const float*, float*, std::size_t);
  void (*scale)(float, float*, std::size_t);
  void (*mul)(const float*, const float*, float*, std::size_t);
  const char* name;
};

constexpr Dispatch kScalar = {scalar::axpy, scalar::dot,   scalar::sum,
                              scalar::add,  scalar::scale, scalar::mul, "scalar"};

#if COIC_X86
constexpr Dispatch kAvx2 = {avx2::axpy, avx2::dot,   avx2::sum,
                            avx2::add,  avx2::scale, avx2::mul, "avx2"};
#endif

#if COIC_NEON
constexpr Dispatch kNeon = {neon::axpy,  neon::dot,     scalar::sum,
                            scalar::add, scalar::scale, scalar::mul, "neon"};
#endif

Dispatch detect() {
#if COIC_X86
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return kAvx2;
#endif
#if COIC_NEON
  return kNeon;
#endif
  return kScalar;
}

Dispatch g_dispatch = detect();

}  // namespace

void axpy(float a, const float* x, float* y, std::size_t n) { g_dispatch.axpy(a, x, y, n); }
float dot(const float* x, const float* y, std::size_t n) { return g_dispatch.dot(x, y, n); }
float sum(const float* x, std::size_t n) { return g_dispatch.sum(x, n); }
void add(const float* x, float* y, std::size_t n) { g_dispatch.add(x, y, n); }
void scale(float a, float* x, std::size_t n) { g_dispatch.scale(a, x, n); }
void mul(const float* a, const float* b, float* out, std::size_t n) {
  g_dispatch.mul(a, b, out, n);
}

const char* active_target() { return g_dispatch.name; }

bool force_target(const char* name) {
  std::string_view want(name);
  if (want == "scalar") {
    g_dispatch = kScalar;
    return true;
  }
#if COIC_X86
  if (want == "avx2" && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    g_dispatch = kAvx2;
    return true;
  }
#endif
#if COIC_NEON
  if (want == "neon") {
    g_dispatch = kNeon;
    return true;
  }
#endif
  return false;
}

}  // namespace coic::kernels
