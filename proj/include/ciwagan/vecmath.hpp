// Copyright 2026 The CiwaGAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Batched elementwise sin/cos/exp/log over contiguous doubles. AVX2 builds on
// glibc call the libmvec kernels four lanes at a time; everything else (and
// the tail of each span) goes through scalar libm.

#include <cmath>
#include <cstddef>
#include <span>

#if defined(__AVX2__) && defined(__GLIBC__) && defined(__x86_64__) && !defined(CIWAGAN_NO_MVEC)
#define CIWAGAN_HAVE_MVEC 1
#include <immintrin.h>
extern "C" {
__m256d _ZGVdN4v_sin(__m256d);
__m256d _ZGVdN4v_cos(__m256d);
__m256d _ZGVdN4v_exp(__m256d);
__m256d _ZGVdN4v_log(__m256d);
}
#else
#define CIWAGAN_HAVE_MVEC 0
#endif

namespace ciwagan::vecmath {

namespace detail {

template <class Vec, class Scalar>
void apply(std::span<const double> x, std::span<double> y, [[maybe_unused]] Vec vec, Scalar scalar) {
  std::size_t i = 0;
#if CIWAGAN_HAVE_MVEC
  for (; i + 4 <= x.size(); i += 4) _mm256_storeu_pd(&y[i], vec(_mm256_loadu_pd(&x[i])));
#endif
  for (; i < x.size(); ++i) y[i] = scalar(x[i]);
}

}  // namespace detail

#if CIWAGAN_HAVE_MVEC
#define CIWAGAN_VEC(fn) [](__m256d v) { return _ZGVdN4v_##fn(v); }
#else
#define CIWAGAN_VEC(fn) nullptr
#endif

inline void sin(std::span<const double> x, std::span<double> y) {
  detail::apply(x, y, CIWAGAN_VEC(sin), [](double v) { return std::sin(v); });
}
inline void cos(std::span<const double> x, std::span<double> y) {
  detail::apply(x, y, CIWAGAN_VEC(cos), [](double v) { return std::cos(v); });
}
inline void exp(std::span<const double> x, std::span<double> y) {
  detail::apply(x, y, CIWAGAN_VEC(exp), [](double v) { return std::exp(v); });
}
inline void log(std::span<const double> x, std::span<double> y) {
  detail::apply(x, y, CIWAGAN_VEC(log), [](double v) { return std::log(v); });
}

#undef CIWAGAN_VEC

}  // namespace ciwagan::vecmath
