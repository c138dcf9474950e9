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
#include <cstdio>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace ciwagan {

/// codes x (words + else) tally of classified samples.
struct CountTable {
  std::size_t num_words = 9;
  std::vector<std::vector<std::size_t>> counts;  // [code][word], column num_words = else

  CountTable() = default;
  CountTable(std::size_t codes, std::size_t words)
      : num_words(words), counts(codes, std::vector<std::size_t>(words + 1, 0)) {}

  std::size_t num_codes() const { return counts.size(); }
  std::size_t else_column() const { return num_words; }
  std::size_t row_total(std::size_t code) const {
    std::size_t s = 0;
    for (auto v : counts.at(code)) s += v;
    return s;
  }
};

inline std::string column_label(std::size_t col, std::size_t num_words) {
  return col == num_words ? std::string("else") : "word" + std::to_string(col);
}

inline void write_count_table_csv(std::ostream& os, const CountTable& t) {
  os << "code";
  for (std::size_t c = 0; c <= t.num_words; ++c) os << ',' << column_label(c, t.num_words);
  os << '\n';
  for (std::size_t k = 0; k < t.num_codes(); ++k) {
    os << k;
    for (auto v : t.counts[k]) os << ',' << v;
    os << '\n';
  }
}

inline CountTable read_count_table_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("count table: empty input");
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (cols < 1 || line.rfind("code,", 0) != 0) throw std::invalid_argument("count table: line 1: bad header");
  CountTable t(0, cols - 1);
  for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::size_t> row;
    std::size_t pos = line.find(',');
    if (pos == std::string::npos) throw std::invalid_argument("count table: line " + std::to_string(lineno) + ": no fields");
    if (line.substr(0, pos) != std::to_string(t.num_codes())) {
      throw std::invalid_argument("count table: line " + std::to_string(lineno) + ": expected code " +
                                  std::to_string(t.num_codes()));
    }
    while (pos != std::string::npos) {
      const std::size_t next = line.find(',', pos + 1);
      const std::string cell = line.substr(pos + 1, next == std::string::npos ? std::string::npos : next - pos - 1);
      if (cell.empty() || cell.find_first_not_of("0123456789") != std::string::npos) {
        throw std::invalid_argument("count table: line " + std::to_string(lineno) + ": bad count '" + cell + "'");
      }
      row.push_back(std::stoull(cell));
      pos = next;
    }
    if (row.size() != cols) {
      throw std::invalid_argument("count table: line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(cols) + " counts");
    }
    t.counts.push_back(std::move(row));
  }
  if (t.num_codes() == 0) throw std::invalid_argument("count table: no rows");
  return t;
}

/// Multinomial logit with a categorical predictor in treatment coding.
/// Outcome categories that never occur are dropped; the lowest observed
/// category is the reference.
struct MultinomialFit {
  std::vector<int> categories;  // observed outcome labels, ascending
  std::vector<int> levels;      // observed predictor levels, ascending
  // coef[k-1][d]: contrast k (category k vs reference), design column d
  // (0 = intercept, d >= 1 = indicator of levels[d]).
  std::vector<std::vector<double>> coef;
  double log_likelihood = 0.0;  // unpenalized, at the fitted coefficients
  std::size_t parameter_count = 0;
  bool converged = false;
  bool separated = false;
  std::size_t iterations = 0;

  /// Fitted category probabilities for a predictor level, aligned with
  /// `categories`.
  std::vector<double> probabilities(int level) const {
    const auto it = std::find(levels.begin(), levels.end(), level);
    if (it == levels.end()) throw std::out_of_range("unknown predictor level " + std::to_string(level));
    const std::size_t l = static_cast<std::size_t>(it - levels.begin());
    std::vector<double> eta(categories.size(), 0.0);
    for (std::size_t k = 1; k < categories.size(); ++k) {
      eta[k] = coef[k - 1][0] + (l > 0 ? coef[k - 1][l] : 0.0);
    }
    const double mx = *std::max_element(eta.begin(), eta.end());
    double z = 0;
    for (double& e : eta) z += (e = std::exp(e - mx));
    for (double& e : eta) e /= z;
    return eta;
  }
};

namespace detail {

struct GroupedData {
  std::vector<int> categories, levels;
  Eigen::MatrixXd counts;  // levels x categories
};

inline GroupedData group(std::span<const int> outcomes, std::span<const int> predictor) {
  if (outcomes.size() != predictor.size()) throw std::invalid_argument("outcomes and predictor differ in length");
  if (outcomes.empty()) throw std::invalid_argument("multinomial fit needs at least one observation");
  GroupedData g;
  g.categories.assign(outcomes.begin(), outcomes.end());
  g.levels.assign(predictor.begin(), predictor.end());
  for (auto* v : {&g.categories, &g.levels}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  g.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.levels.size()),
                                   static_cast<Eigen::Index>(g.categories.size()));
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto l = std::lower_bound(g.levels.begin(), g.levels.end(), predictor[i]) - g.levels.begin();
    const auto k = std::lower_bound(g.categories.begin(), g.categories.end(), outcomes[i]) - g.categories.begin();
    g.counts(l, k) += 1.0;
  }
  return g;
}

}  // namespace detail

/// Penalized maximum likelihood by Newton ascent with step halving; stops when
/// the largest gradient entry is below 1e-8 or after 200 iterations.
inline MultinomialFit fit_multinomial(std::span<const int> outcomes, std::span<const int> predictor,
                                      double ridge = 1e-6) {
  if (ridge < 0) throw std::invalid_argument("ridge must be >= 0");
  auto g = detail::group(outcomes, predictor);
  const std::size_t K = g.categories.size(), L = g.levels.size();
  const std::size_t C = K - 1, P = C * L;
  MultinomialFit fit;
  fit.categories = g.categories;
  fit.levels = g.levels;
  fit.parameter_count = P;
  fit.coef.assign(C, std::vector<double>(L, 0.0));
  if (C == 0) {
    fit.converged = ridge > 0.0;
    fit.separated = ridge == 0.0;
    return fit;
  }
  // beta index: k * L + d
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
  auto design = [&](std::size_t l, std::size_t d) { return d == 0 || d == l ? 1.0 : 0.0; };
  auto probs = [&](const Eigen::VectorXd& b, std::size_t l) {
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
    for (std::size_t k = 1; k < K; ++k) {
      eta(k) = b((k - 1) * L) + (l > 0 ? b((k - 1) * L + l) : 0.0);
    }
    const double mx = eta.maxCoeff();
    Eigen::VectorXd p = (eta.array() - mx).exp();
    return Eigen::VectorXd(p / p.sum());
  };
  auto loglik = [&](const Eigen::VectorXd& b) {
    double ll = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const Eigen::VectorXd p = probs(b, l);
      for (std::size_t k = 0; k < K; ++k) {
        if (g.counts(l, k) > 0) ll += g.counts(l, k) * std::log(p(k));
      }
    }
    return ll;
  };
  auto objective = [&](const Eigen::VectorXd& b) { return loglik(b) - 0.5 * ridge * b.squaredNorm(); };

  double obj = objective(beta);
  for (fit.iterations = 0; fit.iterations < 200; ++fit.iterations) {
    Eigen::VectorXd grad = -ridge * beta;
    Eigen::MatrixXd hess = -ridge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
    for (std::size_t l = 0; l < L; ++l) {
      const Eigen::VectorXd p = probs(beta, l);
      const double n = g.counts.row(l).sum();
      for (std::size_t a = 1; a < K; ++a) {
        const double r = g.counts(l, a) - n * p(a);
        for (std::size_t d = 0; d < L; ++d) {
          const double xd = design(l, d);
          if (xd == 0.0) continue;
          grad((a - 1) * L + d) += r * xd;
          for (std::size_t b = 1; b < K; ++b) {
            const double w = n * ((a == b ? p(a) : 0.0) - p(a) * p(b));
            for (std::size_t e = 0; e < L; ++e) {
              const double xe = design(l, e);
              if (xe != 0.0) hess((a - 1) * L + d, (b - 1) * L + e) -= w * xd * xe;
            }
          }
        }
      }
    }
    if (grad.cwiseAbs().maxCoeff() < 1e-8) {
      fit.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
    Eigen::VectorXd step = ldlt.info() == Eigen::Success ? Eigen::VectorXd(ldlt.solve(grad)) : grad;
    if (!step.allFinite()) step = grad;
    double t = 1.0;
    bool improved = false;
    for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
      const Eigen::VectorXd cand = beta + t * step;
      const double o = objective(cand);
      if (o >= obj) {
        beta = cand;
        improved = o > obj;
        obj = o;
        break;
      }
    }
    if (!improved) {
      // No ascent direction left at double precision.
      fit.converged = grad.cwiseAbs().maxCoeff() < 1e-6;
      break;
    }
  }
  for (std::size_t k = 0; k < C; ++k) {
    for (std::size_t d = 0; d < L; ++d) fit.coef[k][d] = beta(k * L + d);
  }
  fit.log_likelihood = loglik(beta);
  // Without a penalty, coefficients running off to infinity signal complete
  // separation; the MLE does not exist.
  if (ridge == 0.0 && beta.cwiseAbs().maxCoeff() > 25.0) {
    fit.separated = true;
    fit.converged = false;
  }
  return fit;
}

struct AicResult {
  double value = 0.0;
  bool flagged = false;  // fit did not converge
};

inline double aic(std::size_t parameter_count, double log_likelihood) {
  return 2.0 * static_cast<double>(parameter_count) - 2.0 * log_likelihood;
}

inline AicResult aic(const MultinomialFit& fit) {
  return {aic(fit.parameter_count, fit.log_likelihood), !fit.converged};
}

struct ModelComparison {
  double aic_full = 0, aic_null = 0;
  std::size_t df_full = 0, df_null = 0;
  double loglik_full = 0, loglik_null = 0;
  bool converged = true;
  MultinomialFit full, null;
};

/// Expands a count table into (code, column) records and fits the model
/// with code as predictor against the intercept-only model.
inline ModelComparison compare_models(const CountTable& table, double ridge = 1e-6) {
  std::vector<int> outcome, code, none;
  for (std::size_t k = 0; k < table.num_codes(); ++k) {
    for (std::size_t c = 0; c < table.counts[k].size(); ++c) {
      for (std::size_t n = 0; n < table.counts[k][c]; ++n) {
        outcome.push_back(static_cast<int>(c));
        code.push_back(static_cast<int>(k));
        none.push_back(0);
      }
    }
  }
  ModelComparison m;
  m.full = fit_multinomial(outcome, code, ridge);
  m.null = fit_multinomial(outcome, none, ridge);
  m.aic_full = aic(m.full).value;
  m.aic_null = aic(m.null).value;
  m.df_full = m.full.parameter_count;
  m.df_null = m.null.parameter_count;
  m.loglik_full = m.full.log_likelihood;
  m.loglik_null = m.null.log_likelihood;
  m.converged = m.full.converged && m.null.converged;
  return m;
}

inline nlohmann::ordered_json to_json(const ModelComparison& m) {
  nlohmann::ordered_json j;
  j["aic_full"] = m.aic_full;
  j["aic_null"] = m.aic_null;
  j["df_full"] = m.df_full;
  j["df_null"] = m.df_null;
  j["loglik_full"] = m.loglik_full;
  j["loglik_null"] = m.loglik_null;
  j["converged"] = m.converged;
  return j;
}

/// Fitted probability of every table column per code (0 for columns never
/// observed).
inline std::vector<std::vector<double>> fitted_table(const ModelComparison& m, const CountTable& t) {
  std::vector<std::vector<double>> out(t.num_codes(), std::vector<double>(t.num_words + 1, 0.0));
  for (std::size_t k = 0; k < t.num_codes(); ++k) {
    if (t.row_total(k) == 0) continue;
    const auto p = m.full.probabilities(static_cast<int>(k));
    for (std::size_t i = 0; i < p.size(); ++i) out[k][static_cast<std::size_t>(m.full.categories[i])] = p[i];
  }
  return out;
}

inline void write_probability_csv(std::ostream& os, const ModelComparison& m, const CountTable& t) {
  os << "code";
  for (std::size_t c = 0; c <= t.num_words; ++c) os << ',' << column_label(c, t.num_words);
  os << '\n';
  const auto probs = fitted_table(m, t);
  char buf[32];
  for (std::size_t k = 0; k < probs.size(); ++k) {
    os << k;
    for (double p : probs[k]) {
      std::snprintf(buf, sizeof buf, ",%.6f", p);
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace ciwagan
