// Copyright 2026 The saecv Authors
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

#include <cmath>
#include <numeric>
#include <optional>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "latent_gaussian.hpp"
#include "saecv/direct.hpp"
#include "saecv/error.hpp"
#include "saecv/models.hpp"

using namespace saecv;
using saecv::testing::random_dataset;
using saecv::testing::unit;

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Beta-binomial pmf through Beta functions, a = p(1-d)/d, b = (1-p)(1-d)/d.
double bb_pmf_oracle(int y, int n, double p, double d) {
  const double a = p * (1 - d) / d, b = (1 - p) * (1 - d) / d;
  auto lbeta = [](double x, double z) { return std::lgamma(x) + std::lgamma(z) - std::lgamma(x + z); };
  const double lc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
  return std::exp(lc + lbeta(y + a, n - y + b) - lbeta(a, b));
}

// E[expit(X)] for X ~ N(m, v) by a fine trapezoid rule.
double expit_mean_trapezoid(double m, double v) {
  const double s = std::sqrt(v);
  const int n = 20000;
  const double lo = m - 12 * s, h = 24 * s / n;
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double x = lo + k * h;
    const double f = expit(x) * std::exp(-0.5 * (x - m) * (x - m) / v);
    acc += (k == 0 || k == n ? 0.5 : 1.0) * f;
  }
  return acc * h / (s * std::sqrt(2 * M_PI));
}

template <typename F>
double bisect(F f, double lo, double hi) {
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if ((fm < 0) == (flo < 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct BinomialArea {
  int y, n;
};

// Mode of the penalized binomial log likelihood
//   sum_i [y_i eta_i - n_i log(1 + e^eta_i)] - sum u_i^2 / 2 s^2 - alpha^2 / 2 tau^2
// with eta_i = alpha + u_i, by nested one-dimensional root finding on the
// score equations (each is monotone in its argument).
std::pair<double, std::vector<double>> penalized_mode(const std::vector<BinomialArea>& areas,
                                                      double sigma, double tau) {
  auto u_given = [&](double alpha, const BinomialArea& a) {
    return bisect([&](double u) { return a.y - a.n * expit(alpha + u) - u / (sigma * sigma); }, -40, 40);
  };
  const double alpha = bisect(
      [&](double al) {
        double g = -al / (tau * tau);
        for (const auto& a : areas) g += a.y - a.n * expit(al + u_given(al, a));
        return g;
      },
      -30, 30);
  std::vector<double> u;
  for (const auto& a : areas) u.push_back(u_given(alpha, a));
  return {alpha, u};
}

SurveyDataset dataset_from_counts(const std::vector<BinomialArea>& areas) {
  // One cluster per unit: the beta-binomial with d = 0 is then a logistic
  // random-intercept model.
  std::vector<UnitRecord> units;
  for (std::size_t a = 0; a < areas.size(); ++a)
    for (int j = 0; j < areas[a].n; ++j)
      units.push_back(unit("s", fmt::format("a{}u{}", a, j), "h", fmt::format("A{}", a), 1.0,
                           j < areas[a].y ? 1 : 0));
  return SurveyDataset::create(units);
}

}  // namespace

TEST(PcPrior, Rates) {
  EXPECT_NEAR(pc_rate(1.0, 0.01), 4.605170185988091, 1e-12);
  EXPECT_NEAR(pc_rate(0.01, 0.01), 460.5170185988091, 1e-9);
  EXPECT_NEAR(pc_rate(1.0, std::exp(-1.0)), 1.0, 1e-15);
  EXPECT_THROW(pc_rate(0.0, 0.01), DomainError);
  EXPECT_THROW(pc_rate(1.0, 1.0), DomainError);
  EXPECT_THROW(pc_rate(1.0, 0.0), DomainError);
  const auto p = PCPrior::make(1.0, 0.01);
  EXPECT_NEAR(std::exp(-p.rate * 1.0), 0.01, 1e-15);
  EXPECT_NEAR(p.quantile(0.99), 1.0, 1e-12);
}

TEST(BetaBinomial, BinomialReduction) {
  EXPECT_NEAR(betabinomial_logpmf(1, 2, 0.5, 0.0), std::log(0.5), 1e-15);
  for (int n = 0; n <= 10; ++n)
    for (int y = 0; y <= n; ++y)
      for (double p : {0.1, 0.37, 0.5, 0.93}) {
        const double lc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
        const double ref = std::exp(lc + y * std::log(p) + (n - y) * std::log1p(-p));
        EXPECT_NEAR(std::exp(betabinomial_logpmf(y, n, p, 0.0)), ref, 1e-12);
      }
}

TEST(BetaBinomial, DomainErrors) {
  EXPECT_THROW(betabinomial_logpmf(1, 2, 0.5, 1.0), DomainError);
  EXPECT_THROW(betabinomial_logpmf(1, 2, 0.5, -0.1), DomainError);
}

TEST(BetaBinomial, EnumerationLattice) {
  double worst = 0.0;
  for (int n = 1; n <= 10; ++n)
    for (int ip = 1; ip <= 9; ++ip)
      for (int id = 1; id <= 9; ++id) {
        const double p = ip / 10.0, d = id / 10.0 - 0.05;
        double mass = 0, m1 = 0, m2 = 0;
        for (int y = 0; y <= n; ++y) {
          const double f = std::exp(betabinomial_logpmf(y, n, p, d));
          worst = std::max(worst, std::abs(f - bb_pmf_oracle(y, n, p, d)));
          mass += f;
          m1 += y * f;
          m2 += y * y * f;
        }
        worst = std::max(worst, std::abs(mass - 1.0));
        worst = std::max(worst, std::abs(m1 - n * p));
        worst = std::max(worst, std::abs(m2 - m1 * m1 - n * p * (1 - p) * (1 + (n - 1) * d)));
      }
  EXPECT_LT(worst, 1e-10);
}

TEST(ExpitNormal, MatchesTrapezoid) {
  for (double m : {-3.0, -0.4, 0.0, 1.1, 4.0})
    for (double v : {1e-4, 0.05, 0.5, 2.0})
      EXPECT_NEAR(expit_normal_moments(m, v).mean, expit_mean_trapezoid(m, v), 1e-10);
  EXPECT_EQ(expit_normal_moments(0.3, 0.0).mean, expit(0.3));
}

TEST(FayHerriot, FixedSigmaClosedForm) {
  const auto ds = random_dataset(21, 6, 5, 8);
  const auto directs = hajek_all(ds);
  for (double sigma : {0.05, 0.3, 1.5}) {
    ModelSpec spec;
    spec.name = "fh";
    spec.family = Family::kFayHerriot;
    spec.fixed_sigma = sigma;
    const auto fit = fit_fay_herriot(directs, spec, 1);
    const double tau2 = spec.alpha_prior_sd * spec.alpha_prior_sd, s2 = sigma * sigma;
    double P = 1.0 / tau2, num = 0.0;
    for (const auto& d : directs) {
      P += 1.0 / (s2 + *d.logit_variance);
      num += *d.logit_point / (s2 + *d.logit_variance);
    }
    const double m = num / P;
    for (const auto& d : directs) {
      const double V = *d.logit_variance, g = s2 / (s2 + V);
      const double mean = g * *d.logit_point + (1 - g) * m;
      const double var = g * V + (1 - g) * (1 - g) / P;
      EXPECT_NEAR(fit.at(d.area_id).mean, expit_mean_trapezoid(mean, var), 1e-9) << sigma;
    }
  }
}

TEST(FayHerriot, CompletePoolingLimit) {
  const auto ds = random_dataset(4, 5, 5, 8);
  ModelSpec spec;
  spec.name = "fh0";
  spec.family = Family::kFayHerriot;
  spec.fixed_sigma = 0.0;
  const auto fit = fit_model(ds, spec, 1);
  for (const auto& a : fit.areas) EXPECT_NEAR(a.mean, fit.areas[0].mean, 1e-14);
  const auto directs = hajek_all(ds);
  double P = 1.0 / (spec.alpha_prior_sd * spec.alpha_prior_sd), num = 0.0;
  for (const auto& d : directs) {
    P += 1.0 / *d.logit_variance;
    num += *d.logit_point / *d.logit_variance;
  }
  EXPECT_NEAR(fit.areas[0].mean, expit_mean_trapezoid(num / P, 1.0 / P), 1e-9);
}

TEST(FayHerriot, HomogeneousAreas) {
  std::vector<DirectEstimate> directs;
  for (int a = 0; a < 8; ++a) {
    DirectEstimate d;
    d.area_id = fmt::format("A{}", a);
    d.present = true;
    d.point = expit(0.4);
    d.variance = 0.002;
    const auto l = logit_transform(d.point, d.variance);
    d.logit_point = l.point;
    d.logit_variance = l.variance;
    directs.push_back(d);
  }
  ModelSpec spec;
  spec.name = "fh";
  spec.family = Family::kFayHerriot;
  const auto fit = fit_fay_herriot(directs, spec, 3);
  for (const auto& a : fit.areas) EXPECT_NEAR(a.mean, expit(0.4), 3 * std::sqrt(a.variance));
}

TEST(FayHerriot, NeedsTwoAreas) {
  std::vector<UnitRecord> u{unit("s", "c1", "h1", "A", 1, 1), unit("s", "c1", "h2", "A", 1, 0)};
  ModelSpec spec;
  spec.name = "fh";
  spec.family = Family::kFayHerriot;
  EXPECT_THROW(fit_model(SurveyDataset::create(u), spec, 1), FitError);
}

TEST(BetaBinomialFit, ModeMatchesIndependentOptimizer) {
  const std::vector<BinomialArea> areas{{12, 40}, {25, 40}, {3, 30}, {30, 35}, {18, 50}};
  const auto ds = dataset_from_counts(areas);
  for (double sigma : {0.2, 0.7, 2.0}) {
    ModelSpec spec;
    spec.name = "bb";
    spec.fixed_sigma = sigma;
    spec.fixed_d = 0.0;
    spec.alpha_prior_sd = 3.0;
    const auto fit = fit_betabinomial(ds, spec, 1);
    const auto [alpha, u] = penalized_mode(areas, sigma, spec.alpha_prior_sd);
    ASSERT_EQ(fit.nodes.size(), 1u);
    EXPECT_NEAR(fit.nodes[0].alpha_mean, alpha, 1e-6) << sigma;
  }
}

TEST(BetaBinomialFit, LaplaceNodeModeMatchesIndependentOptimizer) {
  const std::vector<BinomialArea> areas{{12, 40}, {25, 40}, {3, 30}, {30, 35}, {18, 50}};
  detail::LatentProblem problem;
  problem.model = "logistic";
  for (std::size_t a = 0; a < areas.size(); ++a) {
    problem.universe.push_back(fmt::format("A{}", a));
    problem.data_areas.push_back(static_cast<int>(a));
  }
  problem.alpha_sd = 3.0;
  problem.likelihood = [&](std::optional<double>, std::span<const double> eta,
                           std::span<detail::LikTerm> out) {
    for (std::size_t k = 0; k < areas.size(); ++k) {
      const double p = expit(eta[k]);
      out[k].value = areas[k].y * eta[k] - areas[k].n * std::log1p(std::exp(eta[k]));
      out[k].d1 = areas[k].y - areas[k].n * p;
      out[k].d2 = -areas[k].n * p * (1 - p);
    }
  };
  for (double sigma : {0.2, 0.7, 2.0}) {
    std::vector<double> start(areas.size() + 1, 0.0);
    const auto node = detail::laplace_node(problem, sigma, std::nullopt, start);
    const auto [alpha, u] = penalized_mode(areas, sigma, problem.alpha_sd);
    EXPECT_NEAR(node.alpha, alpha, 1e-6);
    for (std::size_t k = 0; k < u.size(); ++k) EXPECT_NEAR(node.u[k], u[k], 1e-6);
  }
}

TEST(BetaBinomialFit, AllOnesAreaStaysBelowOne) {
  std::vector<UnitRecord> units;
  for (int c = 0; c < 20; ++c)
    for (int h = 0; h < 10; ++h) {
      units.push_back(unit("s", fmt::format("a{}", c), fmt::format("{}", h), "A", 1, 1));
      units.push_back(unit("s", fmt::format("b{}", c), fmt::format("{}", h), "B", 1, h < 6 + c % 3));
      units.push_back(unit("s", fmt::format("c{}", c), fmt::format("{}", h), "C", 1, h < 7 + c % 2));
    }
  ModelSpec spec;
  spec.name = "bb";
  const auto fit = fit_model(SurveyDataset::create(units), spec, 1);
  const auto& a = *fit.find("A");
  EXPECT_GT(a.mean, fit.find("C")->mean);
  EXPECT_LT(a.mean, 1.0);
  EXPECT_TRUE(std::isfinite(a.variance));
}

TEST(BetaBinomialFit, EmptyDatasetIsFitError) {
  ModelSpec spec;
  spec.name = "bb";
  EXPECT_THROW(fit_betabinomial(SurveyDataset{}, spec, 1), FitError);
}

TEST(Models, QuadratureAndMonteCarloAgree) {
  const auto ds = random_dataset(8, 5, 6, 8);
  for (Family family : {Family::kFayHerriot, Family::kBetaBinomial}) {
    ModelSpec q;
    q.name = "m";
    q.family = family;
    ModelSpec mc = q;
    mc.summary = SummaryMethod::kMonteCarlo;
    mc.mc.samples = 40000;
    const auto a = fit_model(ds, q, 5);
    const auto b = fit_model(ds, mc, 5);
    for (std::size_t i = 0; i < a.areas.size(); ++i) {
      const double se = std::sqrt(a.areas[i].variance / mc.mc.samples);
      EXPECT_NEAR(a.areas[i].mean, b.areas[i].mean, 4 * se + 1e-9) << family_name(family);
      EXPECT_NEAR(a.areas[i].variance, b.areas[i].variance, 0.05 * a.areas[i].variance);
    }
  }
}

TEST(Models, DeterministicUnderSeed) {
  const auto ds = random_dataset(12);
  ModelSpec spec;
  spec.name = "bb";
  spec.summary = SummaryMethod::kMonteCarlo;
  const auto a = fit_model(ds, spec, 77), b = fit_model(ds, spec, 77);
  for (std::size_t i = 0; i < a.areas.size(); ++i) {
    EXPECT_EQ(a.areas[i].mean, b.areas[i].mean);
    EXPECT_EQ(a.areas[i].variance, b.areas[i].variance);
  }
}

TEST(Models, TightPriorShrinksHarder) {
  const auto ds = random_dataset(30, 8, 10, 15);
  ModelSpec loose;
  loose.name = "M1";
  ModelSpec tight = loose;
  tight.name = "M3";
  tight.sigma_prior = PCPrior::make(0.01, 0.01);
  auto spread = [](const AreaEstimates& f) {
    double lo = 1, hi = 0;
    for (const auto& a : f.areas) {
      lo = std::min(lo, a.mean);
      hi = std::max(hi, a.mean);
    }
    return hi - lo;
  };
  EXPECT_LT(spread(fit_model(ds, tight, 1)), spread(fit_model(ds, loose, 1)));
}

TEST(HeldOutPrediction, NoHeterogeneityLimit) {
  const auto ds = random_dataset(6, 5, 6, 8).without_area("area2");
  ModelSpec spec;
  spec.name = "bb0";
  spec.fixed_sigma = 0.0;
  const auto fit = fit_model(ds, spec, 1);
  const auto pred = predict_held_out_area(fit, "area2");
  EXPECT_NEAR(pred.mean, fit.at("area0").mean, 1e-12);
  EXPECT_THROW(predict_held_out_area(fit, "area0"), ContractError);
}

TEST(ModelSpec, ValidationErrors) {
  ModelSpec spec;
  spec.name = "x";
  spec.grid.sigma_nodes = 3;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = ModelSpec{};
  spec.fixed_d = 1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(parse_family("gaussian"), ConfigError);
}
