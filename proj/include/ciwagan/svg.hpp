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
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace ciwagan::svg {

inline constexpr const char* kToolComment = "<!-- ciwagan 0.1.0 -->";

struct Series {
  std::string label;
  std::vector<double> y;
  std::string color = "#1f77b4";
};

struct Path2D {
  std::string label;
  std::vector<std::pair<double, double>> points;
  std::string color = "#1f77b4";
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double width = 640, height = 320, margin = 40;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  double px(double x) const { return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin); }
};

inline void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
}

inline std::string open(const Frame& f, const std::string& title) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" +
                  num(f.height) + "\">\n" + kToolComment + "\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(f.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(title) + "</text>\n";
  s += "<rect x=\"" + num(f.margin) + "\" y=\"" + num(f.margin) + "\" width=\"" + num(f.width - 2 * f.margin) +
       "\" height=\"" + num(f.height - 2 * f.margin) + "\" fill=\"none\" stroke=\"#888\"/>\n";
  s += "<text x=\"4\" y=\"" + num(f.margin + 4) + "\" font-size=\"10\">" + num(f.ymax) + "</text>\n";
  s += "<text x=\"4\" y=\"" + num(f.height - f.margin) + "\" font-size=\"10\">" + num(f.ymin) + "</text>\n";
  return s;
}

inline std::string legend(const Frame& f, const std::vector<std::pair<std::string, std::string>>& items) {
  std::string s;
  double y = f.margin + 12;
  for (const auto& [label, color] : items) {
    s += "<text x=\"" + num(f.width - f.margin - 4) + "\" y=\"" + num(y) +
         "\" text-anchor=\"end\" font-size=\"10\" fill=\"" + color + "\">" + escape(label) + "</text>\n";
    y += 12;
  }
  return s;
}

}  // namespace detail

/// Overlaid line chart over a shared sample index axis.
inline std::string line_chart(const std::string& title, const std::vector<Series>& series) {
  detail::Frame f;
  f.ymin = std::numeric_limits<double>::infinity();
  f.ymax = -f.ymin;
  std::size_t len = 1;
  for (const auto& s : series) {
    len = std::max(len, s.y.size());
    for (double v : s.y) {
      f.ymin = std::min(f.ymin, v);
      f.ymax = std::max(f.ymax, v);
    }
  }
  if (!std::isfinite(f.ymin)) f.ymin = f.ymax = 0;
  detail::pad_range(f.ymin, f.ymax);
  f.xmax = static_cast<double>(std::max<std::size_t>(len - 1, 1));
  std::string out = detail::open(f, title);
  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& s : series) {
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" points=\"";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      out += detail::num(f.px(static_cast<double>(i))) + "," + detail::num(f.py(s.y[i])) + " ";
    }
    out += "\"/>\n";
    items.emplace_back(s.label, s.color);
  }
  return out + detail::legend(f, items) + "</svg>\n";
}

/// 2-D trajectories (x against y).
inline std::string path_chart(const std::string& title, const std::vector<Path2D>& paths) {
  detail::Frame f;
  f.width = f.height = 400;
  f.xmin = f.ymin = std::numeric_limits<double>::infinity();
  f.xmax = f.ymax = -f.xmin;
  for (const auto& p : paths) {
    for (auto [x, y] : p.points) {
      f.xmin = std::min(f.xmin, x);
      f.xmax = std::max(f.xmax, x);
      f.ymin = std::min(f.ymin, y);
      f.ymax = std::max(f.ymax, y);
    }
  }
  if (!std::isfinite(f.xmin)) f.xmin = f.xmax = f.ymin = f.ymax = 0;
  detail::pad_range(f.xmin, f.xmax);
  detail::pad_range(f.ymin, f.ymax);
  std::string out = detail::open(f, title);
  std::vector<std::pair<std::string, std::string>> items;
  for (const auto& p : paths) {
    out += "<polyline fill=\"none\" stroke=\"" + p.color + "\" points=\"";
    for (auto [x, y] : p.points) out += detail::num(f.px(x)) + "," + detail::num(f.py(y)) + " ";
    out += "\"/>\n";
    items.emplace_back(p.label, p.color);
  }
  return out + detail::legend(f, items) + "</svg>\n";
}

/// Vertical bars with category labels; values expected in [0, ymax].
inline std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<double>& values, double ymax = 1.0) {
  detail::Frame f;
  f.ymin = 0;
  f.ymax = ymax;
  f.xmax = static_cast<double>(std::max<std::size_t>(values.size(), 1));
  std::string out = detail::open(f, title);
  const double w = (f.width - 2 * f.margin) / f.xmax;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = f.px(static_cast<double>(i)), top = f.py(std::clamp(values[i], 0.0, ymax));
    out += "<rect x=\"" + detail::num(x + 0.1 * w) + "\" y=\"" + detail::num(top) + "\" width=\"" +
           detail::num(0.8 * w) + "\" height=\"" + detail::num(f.py(0) - top) + "\" fill=\"#4c72b0\"/>\n";
    if (i < labels.size()) {
      out += "<text x=\"" + detail::num(x + 0.5 * w) + "\" y=\"" + detail::num(f.height - f.margin + 14) +
             "\" text-anchor=\"middle\" font-size=\"10\">" + detail::escape(labels[i]) + "</text>\n";
    }
  }
  return out + "</svg>\n";
}

}  // namespace ciwagan::svg
