#pragma once
// Hot inner-loop kernels shared by conv, pooling, and reductions.
// Scalar reference implementations plus AVX2 variants selected at runtime.

#include <cstddef>

namespace coic::kernels {

// y[i] += a * x[i]
void axpy(float a, const float* x, float* y, std::size_t n);
// sum_i x[i] * y[i]
float dot(const float* x, const float* y, std::size_t n);
// sum_i x[i]
float sum(const float* x, std::size_t n);
// y[i] += x[i]
void add(const float* x, float* y, std::size_t n);
// x[i] *= a
void scale(float a, float* x, std::size_t n);
// out[i] = a[i] * b[i]
void mul(const float* a, const float* b, float* out, std::size_t n);

// Scalar reference path, exposed for equivalence tests.
namespace scalar {
void axpy(float a, const float* x, float* y, std::size_t n);
float dot(const float* x, const float* y, std::size_t n);
float sum(const float* x, std::size_t n);
void add(const float* x, float* y, std::size_t n);
void scale(float a, float* x, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
}  // namespace scalar

// Name of the active dispatch target: "avx2" or "scalar".
const char* active_target();
// Force a target for testing ("avx2" / "scalar"); returns false if unavailable.
bool force_target(const char* name);

}  // namespace coic::kernels
