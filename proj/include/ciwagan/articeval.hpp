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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ciwagan/corpus.hpp"
#include "ciwagan/physmodel.hpp"

namespace ciwagan {

/// Local polynomial regression with tricube weights. The neighbourhood at
/// each point is its q = max(degree+1, round(span*n)) nearest indices;
/// d_max is the q-th smallest distance.
inline std::vector<double> loess_smooth(std::span<const double> y, double span = 0.2, int degree = 2) {
  const std::size_t n = y.size();
  if (!(span > 0.0 && span <= 1.0)) throw std::invalid_argument("loess span must be in (0, 1]");
  if (degree < 0) throw std::invalid_argument("loess degree must be >= 0");
  const std::size_t p = static_cast<std::size_t>(degree) + 1;
  if (n < p) {
    throw std::invalid_argument("loess needs at least degree+1 = " + std::to_string(p) + " points, got " +
                                std::to_string(n));
  }
  const std::size_t q = std::max<std::size_t>(p, static_cast<std::size_t>(std::llround(span * static_cast<double>(n))));
  std::vector<double> out(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = std::abs(static_cast<double>(j) - static_cast<double>(i));
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(std::min(q, n) - 1), sorted.end());
    double dmax = sorted[std::min(q, n) - 1];
    if (dmax <= 0.0) dmax = 1.0;
    std::vector<std::size_t> idx;
    std::vector<double> w;
    for (std::size_t j = 0; j < n; ++j) {
      const double r = dist[j] / dmax;
      if (r < 1.0) {
        const double t = 1.0 - r * r * r;
        idx.push_back(j);
        w.push_back(t * t * t);
      }
    }
    Eigen::MatrixXd a(idx.size(), p);
    Eigen::VectorXd b(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double x = (static_cast<double>(idx[k]) - static_cast<double>(i)) / dmax;
      const double sw = std::sqrt(w[k]);
      double xp = 1.0;
      for (std::size_t d = 0; d < p; ++d, xp *= x) a(k, d) = sw * xp;
      b(k) = sw * y[idx[k]];
    }
    Eigen::VectorXd beta = a.completeOrthogonalDecomposition().solve(b);
    out[i] = beta(0);
  }
  return out;
}

struct DtwResult {
  double distance = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> path;
};

/// Symmetric DTW over an n x m local-cost function: diagonal steps weigh the
/// local cost twice, horizontal and vertical steps once, full window.
/// Backtracking prefers diagonal, then left (j-1), then up (i-1) on ties.
inline DtwResult dtw_from_cost(std::size_t n, std::size_t m,
                               const std::function<double(std::size_t, std::size_t)>& cost,
                               bool want_path = true) {
  if (n == 0 || m == 0) throw std::invalid_argument("dtw: series must be non-empty");
  std::vector<double> d(n * m), acc(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) d[i * m + j] = cost(i, j);
  }
  auto D = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = d[i * m + j];
      if (i == 0 && j == 0) {
        D(i, j) = c;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      if (i > 0 && j > 0) best = std::min(best, D(i - 1, j - 1) + 2.0 * c);
      if (j > 0) best = std::min(best, D(i, j - 1) + c);
      if (i > 0) best = std::min(best, D(i - 1, j) + c);
      D(i, j) = best;
    }
  }
  DtwResult r;
  r.distance = D(n - 1, m - 1);
  if (!want_path) return r;
  std::size_t i = n - 1, j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    const double c = d[i * m + j];
    const double here = D(i, j);
    if (i > 0 && j > 0 && D(i - 1, j - 1) + 2.0 * c == here) {
      --i;
      --j;
    } else if (j > 0 && D(i, j - 1) + c == here) {
      --j;
    } else {
      --i;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

/// DTW with local cost |a_i - b_j|.
inline DtwResult dtw_align(std::span<const double> a, std::span<const double> b) {
  return dtw_from_cost(a.size(), b.size(), [&](std::size_t i, std::size_t j) { return std::abs(a[i] - b[j]); });
}

struct Correlation {
  double r = 0.0;
  bool degenerate = false;  // zero variance in an expanded series; r is 0
};

/// Pearson r between a and b expanded along an alignment path.
inline Correlation pearson_aligned(std::span<const double> a, std::span<const double> b,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& path) {
  const double n = static_cast<double>(path.size());
  double ma = 0, mb = 0;
  for (auto [i, j] : path) {
    ma += a[i];
    mb += b[j];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (auto [i, j] : path) {
    const double x = a[i] - ma, y = b[j] - mb;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  // Variance at rounding level counts as zero.
  const double tiny_a = 1e-24 * n * (1.0 + ma * ma), tiny_b = 1e-24 * n * (1.0 + mb * mb);
  if (saa <= tiny_a || sbb <= tiny_b) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

inline std::vector<std::pair<std::size_t, std::size_t>> identity_path(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> p;
  for (std::size_t i = 0; i < n; ++i) p.emplace_back(i, i);
  return p;
}

struct ChannelResult {
  std::string name;
  double dtw_distance = 0.0;
  Correlation correlation;
};

struct ChannelReport {
  std::vector<ChannelResult> channels;  // 12 EMA channels in file order
};

/// Smooths each generated EMA channel, scales the reference, aligns the two
/// with DTW and correlates along the path.
inline ChannelReport compare_ema(const Trajectory& generated, const Trajectory& reference, double scale = 5.0,
                                 double span = 0.2) {
  validate(generated);
  validate(reference);
  ChannelReport report;
  report.channels.resize(kEmaChannels);
  for (std::size_t c = 0; c < kEmaChannels; ++c) {
    const auto smooth = loess_smooth(generated.channel(c), span);
    auto ref = reference.channel(c);
    for (double& v : ref) v *= scale;
    const auto dtw = dtw_align(smooth, ref);
    report.channels[c] = {kChannelNames[c], dtw.distance, pearson_aligned(smooth, ref, dtw.path)};
  }
  return report;
}

/// Table with one row per articulator: place,x.DTW,x.Cor,y.DTW,y.Cor.
/// Degenerate correlations are written as "NA".
inline void write_channel_report_csv(std::ostream& os, const ChannelReport& r) {
  os << "place,x.DTW,x.Cor,y.DTW,y.Cor\n";
  char buf[64];
  auto cor = [&](const Correlation& c) {
    if (c.degenerate) return std::string("NA");
    std::snprintf(buf, sizeof buf, "%.6f", c.r);
    return std::string(buf);
  };
  for (std::size_t p = 0; p < kEmaChannels / 2; ++p) {
    const auto& x = r.channels[2 * p];
    const auto& y = r.channels[2 * p + 1];
    std::string place = x.name.substr(0, x.name.find('_'));
    os << place;
    std::snprintf(buf, sizeof buf, ",%.6f", x.dtw_distance);
    os << buf << ',' << cor(x.correlation);
    std::snprintf(buf, sizeof buf, ",%.6f", y.dtw_distance);
    os << buf << ',' << cor(y.correlation) << '\n';
  }
}

}  // namespace ciwagan
