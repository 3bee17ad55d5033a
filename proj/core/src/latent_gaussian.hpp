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

// Shared machinery for models of the form
//   eta_a = alpha + u_a,  u_a ~ N(0, sigma^2),  alpha ~ N(0, tau^2),
//   data_a | eta_a ~ L_a(eta_a; d)
// integrated over a hyperparameter grid in (log sigma, logit d).

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "saecv/models.hpp"

namespace saecv::detail {

struct LikTerm {
  double value = 0.0;
  double d1 = 0.0;  // d/d eta
  double d2 = 0.0;  // d^2/d eta^2
};

/// Fills out[k] with the log-likelihood of data area k at eta[k].
using FieldLikelihood =
    std::function<void(std::optional<double> d, std::span<const double> eta, std::span<LikTerm> out)>;

struct LatentProblem {
  std::string model;
  Family family = Family::kBetaBinomial;
  std::vector<std::string> universe;  // every area, identifier order
  std::vector<int> data_areas;        // universe positions of areas with data
  FieldLikelihood likelihood;
  double alpha_sd = 1000.0;
  double alpha_start = 0.0;
};

/// Gaussian approximation of (alpha, u) at one hyperparameter node.
struct NodeFit {
  double log_marginal = 0.0;
  double alpha = 0.0;
  std::vector<double> u;      // per data area
  std::vector<double> curv;   // -d2 log L_a at the mode
  double schur = 0.0;         // precision of alpha after eliminating u
};

/// Damped Newton mode search plus Laplace marginal at (sigma, d). `start`
/// holds (alpha, u...) and is overwritten with the mode.
NodeFit laplace_node(const LatentProblem& problem, double sigma, std::optional<double> d,
                     std::vector<double>& start);

/// Integrates the latent model over the hyperparameter grid described by
/// `spec` and summarizes theta = expit(eta) per area of the universe.
AreaEstimates integrate_grid(const LatentProblem& problem, const ModelSpec& spec,
                             std::uint64_t seed);

}  // namespace saecv::detail
