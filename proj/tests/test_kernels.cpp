// Scalar vs SIMD kernel equivalence on random arrays, including awkward
// lengths around the vector width.

#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "coic/kernels.hpp"
#include "coic/rng.hpp"

namespace kn = coic::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, coic::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-2.0, 2.0));
  return v;
}

}  // namespace

TEST_CASE("simd kernels match scalar reference") {
  bool has_simd = kn::force_target("avx2") || kn::force_target("neon");
  if (!has_simd) {
    MESSAGE("no SIMD target available, skipping");
    return;
  }
  const char* simd = kn::active_target();
  coic::Rng rng(42);

  for (std::size_t n : {0u, 1u, 3u, 7u, 8u, 9u, 15u, 16u, 31u, 100u, 1023u}) {
    auto x = random_vec(n, rng);
    auto y = random_vec(n, rng);
    float a = static_cast<float>(rng.uniform(-3.0, 3.0));

    // axpy
    auto y1 = y, y2 = y;
    kn::force_target(simd);
    kn::axpy(a, x.data(), y1.data(), n);
    kn::force_target("scalar");
    kn::axpy(a, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));

    // dot / sum reassociate, so compare with a small relative tolerance
    kn::force_target(simd);
    float d1 = kn::dot(x.data(), y.data(), n);
    float s1 = kn::sum(x.data(), n);
    kn::force_target("scalar");
    float d2 = kn::dot(x.data(), y.data(), n);
    float s2 = kn::sum(x.data(), n);
    CHECK(d1 == doctest::Approx(d2).epsilon(1e-4));
    CHECK(s1 == doctest::Approx(s2).epsilon(1e-4));

    // add / scale / mul are elementwise, exact
    y1 = y;
    y2 = y;
    kn::force_target(simd);
    kn::add(x.data(), y1.data(), n);
    kn::force_target("scalar");
    kn::add(x.data(), y2.data(), n);
    CHECK(y1 == y2);

    y1 = y;
    y2 = y;
    kn::force_target(simd);
    kn::scale(a, y1.data(), n);
    kn::force_target("scalar");
    kn::scale(a, y2.data(), n);
    CHECK(y1 == y2);

    std::vector<float> o1(n), o2(n);
    kn::force_target(simd);
    kn::mul(x.data(), y.data(), o1.data(), n);
    kn::force_target("scalar");
    kn::mul(x.data(), y.data(), o2.data(), n);
    CHECK(o1 == o2);
  }
}

TEST_CASE("force_target round trip") {
  CHECK(kn::force_target("scalar"));
  CHECK(std::string(kn::active_target()) == "scalar");
  CHECK_FALSE(kn::force_target("no-such-isa"));
  // restore best available for other tests
  if (!kn::force_target("avx2")) kn::force_target("neon");
}
