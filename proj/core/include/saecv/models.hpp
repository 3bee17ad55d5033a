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

// Candidate small area estimators behind one interface: an area-level
// Fay-Herriot model on logit direct estimates and a cluster-level
// beta-binomial model, both with iid normal area effects under a
// penalised-complexity prior on their standard deviation.
//
// Posteriors are computed by deterministic integration over a grid of
// hyperparameters (log sigma_u, and logit d for the beta-binomial). At each
// node the latent field (alpha, u) is Gaussian: exactly for Fay-Herriot, by a
// Laplace approximation at the Newton mode for the beta-binomial.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "saecv/direct.hpp"
#include "saecv/survey.hpp"

namespace saecv {

/// PC(U, alpha) prior on a standard deviation: exponential with
/// Pr(sigma > U) = alpha.
struct PCPrior {
  double U = 1.0;
  double alpha = 0.01;
  double rate = 0.0;

  static PCPrior make(double U, double alpha);
  double log_density(double sigma) const;
  /// Quantile of the exponential distribution at probability p.
  double quantile(double p) const;
};

/// -ln(alpha) / U. Throws DomainError unless U > 0 and 0 < alpha < 1.
double pc_rate(double U, double alpha);

/// Log pmf of BetaBinomial(n, p, d) in the intra-cluster-correlation
/// parameterization a = p(1-d)/d, b = (1-p)(1-d)/d: mean np, variance
/// np(1-p)(1+(n-1)d). d = 0 is the binomial.
double betabinomial_logpmf(int y, int n, double p, double d);

enum class Family { kFayHerriot, kBetaBinomial };
enum class SummaryMethod { kQuadrature, kMonteCarlo };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

struct NormalPrior {
  double mean = 0.0;
  double sd = 10.0;
};

/// Hyperparameter grid. Zero node counts mean "family default" (31 for the
/// Fay-Herriot sigma axis, 21 x 21 for the beta-binomial).
struct GridSpec {
  int sigma_nodes = 0;
  int d_nodes = 0;
  int pilot_nodes = 13;
  double logit_d_min = -14.0;
  double logit_d_max = 1.0;
  /// Nodes whose log posterior falls this far below the maximum bound the
  /// integration box.
  double log_density_drop = 12.0;
};

struct McSpec {
  int samples = 2000;
};

struct ModelSpec {
  std::string name;
  Family family = Family::kBetaBinomial;
  PCPrior sigma_prior = PCPrior::make(1.0, 0.01);
  NormalPrior logit_d_prior{};       // beta-binomial only
  double alpha_prior_sd = 1000.0;    // proper stand-in for a flat prior
  GridSpec grid{};
  McSpec mc{};
  SummaryMethod summary = SummaryMethod::kQuadrature;
  std::optional<double> fixed_sigma;  // pins sigma_u (0 = complete pooling)
  std::optional<double> fixed_d;      // pins the overdispersion

  int sigma_nodes() const;
  int d_nodes() const;
  /// Throws ConfigError on out-of-range settings.
  void validate() const;
};

struct AreaEstimate {
  std::string area_id;
  bool present = false;  // the area's data entered the likelihood
  double mean = 0.0;     // posterior mean of theta_i
  double variance = 0.0; // posterior variance of theta_i
};

/// One hyperparameter grid node with its Gaussian latent-field summary.
struct HyperNode {
  double sigma = 0.0;
  std::optional<double> d;
  double log_marginal = 0.0;   // log p(data | sigma, d)
  double log_posterior = 0.0;  // log_marginal + log prior, unnormalized
  double weight = 0.0;         // normalized quadrature weight
  double alpha_mean = 0.0;
  double alpha_var = 0.0;
};

struct HyperSummary {
  double sigma_mean = 0.0;
  double alpha_mean = 0.0;
  std::optional<double> d_mean;
};

struct AreaEstimates {
  std::string model;
  Family family = Family::kBetaBinomial;
  std::vector<AreaEstimate> areas;  // identifier order, whole area universe
  HyperSummary hyper;
  std::vector<HyperNode> nodes;

  const AreaEstimate* find(std::string_view area) const;
  const AreaEstimate& at(std::string_view area) const;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance of expit(X) for X ~ N(mean, var), by Gauss-Hermite quadrature.
Prediction expit_normal_moments(double mean, double var);

/// Fay-Herriot fit on logit direct estimates. Areas without a defined logit
/// estimate receive the predictive distribution of a new area.
AreaEstimates fit_fay_herriot(const std::vector<DirectEstimate>& directs, const ModelSpec& spec,
                              std::uint64_t seed);

/// Beta-binomial fit on cluster counts (Y_c, n_c); design weights are unused.
AreaEstimates fit_betabinomial(const SurveyDataset& dataset, const ModelSpec& spec,
                               std::uint64_t seed);

/// Dispatches on spec.family; Fay-Herriot computes its direct estimates first.
AreaEstimates fit_model(const SurveyDataset& dataset, const ModelSpec& spec, std::uint64_t seed,
                        const DirectOptions& direct_options = {});

/// Predictive summary of expit(alpha + u_new), u_new ~ N(0, sigma_u^2),
/// integrated over the hyperparameter grid. Throws ContractError if the
/// area's data were part of the fit.
Prediction predict_held_out_area(const AreaEstimates& fit, std::string_view area);

void write_estimates_csv(std::ostream& out, const AreaEstimates& fit);
nlohmann::json hyper_to_json(const AreaEstimates& fit);

}  // namespace saecv
