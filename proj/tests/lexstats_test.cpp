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

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "ciwagan/lexstats.hpp"
#include "oracles.hpp"
#include "ciwagan/rng.hpp"

namespace ciwagan {
namespace {

using oracle::binary_logit;

CountTable diagonal(std::size_t n, std::size_t per_code) {
  CountTable t(n, n);
  for (std::size_t k = 0; k < n; ++k) t.counts[k][k] = per_code;
  return t;
}

TEST(Multinomial, InterceptOnlyEqualsEmpiricalFrequencies) {
  Rng rng(1);
  std::vector<int> y, x;
  std::vector<double> freq(5, 0.0);
  for (int i = 0; i < 237; ++i) {
    const int c = static_cast<int>(rng.below(5));
    y.push_back(c * 2);  // labels need not be contiguous
    x.push_back(0);
    freq[c] += 1.0 / 237;
  }
  auto fit = fit_multinomial(y, x);
  ASSERT_TRUE(fit.converged);
  auto p = fit.probabilities(0);
  ASSERT_EQ(p.size(), 5u);
  double total = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(p[k], freq[k], 1e-6);
    total += p[k];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_LE(fit.log_likelihood, 0.0);
}

TEST(Multinomial, BinaryCaseMatchesLogisticRegression) {
  Rng rng(2);
  std::vector<int> y, x;
  const double rate[3] = {0.2, 0.5, 0.85};
  for (int i = 0; i < 600; ++i) {
    const int l = static_cast<int>(rng.below(3));
    x.push_back(l);
    y.push_back(rng.uniform() < rate[l] ? 1 : 0);
  }
  auto fit = fit_multinomial(y, x);
  ASSERT_TRUE(fit.converged);
  auto oracle = binary_logit(y, x, 3, 1e-6);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(fit.coef[0][d], oracle[d], 1e-6) << d;
}

TEST(Multinomial, SeparableDataFitsObservedCells) {
  std::vector<int> y, x;
  for (int k = 0; k < 4; ++k) {
    for (int n = 0; n < 50; ++n) {
      y.push_back(k);
      x.push_back(k);
    }
  }
  auto fit = fit_multinomial(y, x);
  for (int k = 0; k < 4; ++k) EXPECT_GT(fit.probabilities(k)[k], 0.99);
}

TEST(Multinomial, AllOutcomesIdenticalWithoutRidgeIsFlagged) {
  std::vector<int> y(10, 3), x(10, 0);
  for (int i = 0; i < 5; ++i) x[i] = 1;
  auto fit = fit_multinomial(y, x, 0.0);
  EXPECT_FALSE(fit.converged);
  EXPECT_TRUE(fit.separated);
  EXPECT_TRUE(aic(fit).flagged);
}

TEST(Multinomial, SeparationWithoutRidgeIsFlagged) {
  std::vector<int> y{0, 0, 0, 1, 1, 1}, x{0, 0, 0, 1, 1, 1};
  auto fit = fit_multinomial(y, x, 0.0);
  EXPECT_TRUE(fit.separated);
  EXPECT_FALSE(fit.converged);
}

TEST(Multinomial, InvariantToReferenceRelabelling) {
  Rng rng(3);
  std::vector<int> y, x, relabelled;
  for (int i = 0; i < 400; ++i) {
    const int l = static_cast<int>(rng.below(4));
    const int c = l == 2 && rng.uniform() < 0.5 ? 2 : static_cast<int>(rng.below(3));
    x.push_back(l);
    y.push_back(c);
    relabelled.push_back(2 - c);  // reverses category order, new reference
  }
  // The unpenalized MLE is exactly invariant; the ridge is not
  // reparameterization-invariant, so the default fit agrees to its order.
  for (auto [ridge, tol] : {std::pair{0.0, 1e-8}, std::pair{1e-6, 1e-6}}) {
    auto a = fit_multinomial(y, x, ridge), b = fit_multinomial(relabelled, x, ridge);
    ASSERT_TRUE(a.converged && b.converged);
    for (int l = 0; l < 4; ++l) {
      auto pa = a.probabilities(l), pb = b.probabilities(l);
      for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_NEAR(pa[k], pb[pa.size() - 1 - k], tol);
    }
    EXPECT_NEAR(a.log_likelihood, b.log_likelihood, tol);
  }
}

TEST(Multinomial, Deterministic) {
  std::vector<int> y{0, 1, 2, 1, 0, 2, 2}, x{0, 0, 1, 1, 2, 2, 2};
  auto a = fit_multinomial(y, x), b = fit_multinomial(y, x);
  EXPECT_EQ(a.coef, b.coef);
  EXPECT_THROW(fit_multinomial(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
}

TEST(Aic, Arithmetic) {
  EXPECT_EQ(aic(2, -10.0), 24.0);
  EXPECT_EQ(aic(0, 0.0), 0.0);
}

TEST(CompareModels, DiagonalTable) {
  auto m = compare_models(diagonal(9, 100));
  EXPECT_GT(m.aic_null - m.aic_full, 100.0);
  EXPECT_EQ(m.df_full, 72u);
  EXPECT_EQ(m.df_null, 8u);
  EXPECT_NEAR(m.aic_null, 2 * 8 + 2 * 900 * std::log(9.0), 1e-4);
  EXPECT_EQ(m.aic_full, aic(m.df_full, m.loglik_full));
}

TEST(CompareModels, UniformTableGainsNothing) {
  CountTable t(9, 9);
  for (auto& row : t.counts) std::fill(row.begin(), row.end(), 10);
  auto m = compare_models(t);
  EXPECT_NEAR(m.loglik_full, m.loglik_null, 1e-6);
  EXPECT_GT(m.aic_full, m.aic_null);
  EXPECT_NEAR(m.aic_full - m.aic_null, 2.0 * (m.df_full - m.df_null), 1e-5);
}

TEST(CompareModels, SingleRowModelsCoincide) {
  CountTable t(1, 9);
  t.counts[0] = {5, 0, 3, 0, 0, 7, 0, 0, 0, 2};
  auto m = compare_models(t);
  EXPECT_EQ(m.df_full, m.df_null);
  EXPECT_NEAR(m.aic_full, m.aic_null, 1e-9);
}

TEST(CompareModels, NestedLikelihoodOrder) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    CountTable t(3, 3);
    for (auto& row : t.counts) {
      for (auto& v : row) v = rng.below(20);
    }
    t.counts[0][0] += 1;
    auto m = compare_models(t);
    EXPECT_GE(m.loglik_full, m.loglik_null - 1e-9);
  }
}

TEST(CountTableCsv, RoundTripAndProbabilities) {
  auto t = diagonal(3, 7);
  t.counts[1][3] = 2;
  std::stringstream ss;
  write_count_table_csv(ss, t);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "code,word0,word1,word2,else");
  auto back = read_count_table_csv(ss);
  EXPECT_EQ(back.counts, t.counts);
  EXPECT_EQ(back.num_words, 3u);

  std::ostringstream probs;
  auto m = compare_models(t);
  write_probability_csv(probs, m, t);
  auto fitted = fitted_table(m, t);
  EXPECT_NEAR(fitted[1][3], 2.0 / 9.0, 1e-4);
  std::istringstream bad("code,word0,else\n0,1\n");
  EXPECT_THROW(read_count_table_csv(bad), std::invalid_argument);
}

}  // namespace
}  // namespace ciwagan
