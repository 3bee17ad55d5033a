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

#include "saecv/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "latent_gaussian.hpp"
#include "saecv/error.hpp"

namespace saecv {
namespace {

constexpr int kHermiteNodes = 40;

struct HermiteRule {
  std::vector<double> x, w;  // physicists' nodes; weights already divided by sqrt(pi)
};

// Golub-Welsch on the Jacobi matrix of the Hermite polynomials.
const HermiteRule& hermite_rule() {
  static const HermiteRule rule = [] {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(kHermiteNodes, kHermiteNodes);
    for (int k = 1; k < kHermiteNodes; ++k) {
      J(k, k - 1) = J(k - 1, k) = std::sqrt(k / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    HermiteRule r;
    for (int k = 0; k < kHermiteNodes; ++k) {
      r.x.push_back(es.eigenvalues()(k));
      const double v0 = es.eigenvectors()(0, k);
      r.w.push_back(v0 * v0);
    }
    return r;
  }();
  return rule;
}

double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Cluster counts of one area grouped by (n, y).
struct CountCell {
  int n = 0, y = 0;
  double count = 0.0;
  double log_choose = 0.0;
};

struct AreaCounts {
  std::vector<CountCell> cells;
  int max_y = 0, max_fail = 0, max_n = 0;
};

// Prefix sums over k < j of log(c + k), 1/(c + k), 1/(c + k)^2.
struct Rising {
  std::vector<double> log, inv, inv2;
  void fill(double c, int upto) {
    log.assign(upto + 1, 0.0);
    inv.assign(upto + 1, 0.0);
    inv2.assign(upto + 1, 0.0);
    for (int k = 0; k < upto; ++k) {
      const double t = c + k;
      log[k + 1] = log[k] + std::log(t);
      inv[k + 1] = inv[k] + 1.0 / t;
      inv2[k + 1] = inv2[k] + 1.0 / (t * t);
    }
  }
};

}  // namespace

PCPrior PCPrior::make(double U, double alpha) {
  return PCPrior{U, alpha, pc_rate(U, alpha)};
}

double PCPrior::log_density(double sigma) const {
  if (sigma < 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(rate) - rate * sigma;
}

double PCPrior::quantile(double p) const { return -std::log1p(-p) / rate; }

double pc_rate(double U, double alpha) {
  if (!(U > 0.0) || !std::isfinite(U)) {
    throw DomainError(fmt::format("PC prior threshold U must be positive, got {}", U));
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError(fmt::format("PC prior tail probability must lie in (0,1), got {}", alpha));
  }
  return -std::log(alpha) / U;
}

double betabinomial_logpmf(int y, int n, double p, double d) {
  if (n < 0 || y < 0 || y > n) {
    throw DomainError(fmt::format("beta-binomial needs 0 <= y <= n, got y={}, n={}", y, n));
  }
  if (!(d >= 0.0 && d < 1.0)) {
    throw DomainError(fmt::format("overdispersion d must lie in [0,1), got {}", d));
  }
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError(fmt::format("probability p must lie in (0,1), got {}", p));
  }
  const double lc = log_choose(n, y);
  if (d == 0.0) return lc + y * std::log(p) + (n - y) * std::log1p(-p);
  const double s = (1.0 - d) / d;
  const double a = p * s, b = (1.0 - p) * s;
  // Ratio of rising factorials: B(y+a, n-y+b) / B(a, b).
  double out = lc;
  for (int k = 0; k < y; ++k) out += std::log(a + k);
  for (int k = 0; k < n - y; ++k) out += std::log(b + k);
  for (int k = 0; k < n; ++k) out -= std::log(s + k);
  return out;
}

std::string_view family_name(Family f) {
  return f == Family::kFayHerriot ? "fay-herriot" : "beta-binomial";
}

Family parse_family(std::string_view name) {
  if (name == "fay-herriot" || name == "fh") return Family::kFayHerriot;
  if (name == "beta-binomial" || name == "betabinomial" || name == "bb") {
    return Family::kBetaBinomial;
  }
  throw ConfigError(fmt::format("unknown model family '{}' (fay-herriot|beta-binomial)", name));
}

int ModelSpec::sigma_nodes() const {
  if (grid.sigma_nodes > 0) return grid.sigma_nodes;
  return family == Family::kFayHerriot ? 31 : 21;
}

int ModelSpec::d_nodes() const { return grid.d_nodes > 0 ? grid.d_nodes : 21; }

void ModelSpec::validate() const {
  const std::string who = name.empty() ? std::string("model") : "model '" + name + "'";
  if (std::abs(sigma_prior.rate - pc_rate(sigma_prior.U, sigma_prior.alpha)) >
      1e-12 * std::max(1.0, sigma_prior.rate)) {
    throw ConfigError(who + ": PC prior rate inconsistent with (U, alpha)");
  }
  if (sigma_nodes() < 15 || d_nodes() < 15) {
    throw ConfigError(who + ": grid needs at least 15 nodes per dimension");
  }
  if (grid.pilot_nodes < 5) throw ConfigError(who + ": pilot grid needs at least 5 nodes");
  if (!(grid.logit_d_min < grid.logit_d_max)) {
    throw ConfigError(who + ": logit d range is empty");
  }
  if (mc.samples < 500) throw ConfigError(who + ": Monte Carlo summaries need >= 500 samples");
  if (!(alpha_prior_sd > 0.0)) throw ConfigError(who + ": alpha prior sd must be positive");
  if (!(logit_d_prior.sd > 0.0)) throw ConfigError(who + ": logit d prior sd must be positive");
  if (fixed_sigma && !(*fixed_sigma >= 0.0)) {
    throw ConfigError(who + ": fixed sigma_u must be >= 0");
  }
  if (fixed_d && !(*fixed_d >= 0.0 && *fixed_d < 1.0)) {
    throw ConfigError(who + ": fixed d must lie in [0,1)");
  }
}

Prediction expit_normal_moments(double mean, double var) {
  if (!(var > 0.0)) {
    return {expit(mean), 0.0};
  }
  const HermiteRule& rule = hermite_rule();
  const double scale = std::sqrt(2.0 * var);
  double m1 = 0.0;
  for (int k = 0; k < kHermiteNodes; ++k) m1 += rule.w[k] * expit(mean + scale * rule.x[k]);
  double v = 0.0;
  for (int k = 0; k < kHermiteNodes; ++k) {
    const double dv = expit(mean + scale * rule.x[k]) - m1;
    v += rule.w[k] * dv * dv;
  }
  return {m1, v};
}

const AreaEstimate* AreaEstimates::find(std::string_view area) const {
  auto it = std::lower_bound(areas.begin(), areas.end(), area,
                             [](const AreaEstimate& e, std::string_view id) {
                               return e.area_id < id;
                             });
  if (it == areas.end() || it->area_id != area) return nullptr;
  return &*it;
}

const AreaEstimate& AreaEstimates::at(std::string_view area) const {
  const AreaEstimate* e = find(area);
  if (!e) throw ContractError(fmt::format("model '{}' has no estimate for area '{}'", model, area));
  return *e;
}

AreaEstimates fit_fay_herriot(const std::vector<DirectEstimate>& directs, const ModelSpec& spec,
                              std::uint64_t seed) {
  spec.validate();
  detail::LatentProblem problem;
  problem.model = spec.name;
  problem.family = Family::kFayHerriot;
  problem.alpha_sd = spec.alpha_prior_sd;
  std::vector<double> phi, V;
  for (std::size_t a = 0; a < directs.size(); ++a) {
    problem.universe.push_back(directs[a].area_id);
    if (directs[a].present && directs[a].logit_point && directs[a].logit_variance) {
      problem.data_areas.push_back(static_cast<int>(a));
      phi.push_back(*directs[a].logit_point);
      V.push_back(*directs[a].logit_variance);
    }
  }
  if (!std::is_sorted(problem.universe.begin(), problem.universe.end())) {
    throw ContractError("direct estimates must be in area identifier order");
  }
  if (phi.size() < 2) {
    throw FitError(fmt::format("{}: Fay-Herriot needs at least 2 areas with logit direct "
                               "estimates, found {}",
                               spec.name, phi.size()));
  }
  double sum = 0.0;
  for (double p : phi) sum += p;
  problem.alpha_start = sum / static_cast<double>(phi.size());
  problem.likelihood = [phi, V](std::optional<double>, std::span<const double> eta,
                                std::span<detail::LikTerm> out) {
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    for (std::size_t k = 0; k < phi.size(); ++k) {
      const double r = phi[k] - eta[k];
      out[k].value = -0.5 * (kLog2Pi + std::log(V[k])) - 0.5 * r * r / V[k];
      out[k].d1 = r / V[k];
      out[k].d2 = -1.0 / V[k];
    }
  };
  return detail::integrate_grid(problem, spec, seed);
}

AreaEstimates fit_betabinomial(const SurveyDataset& dataset, const ModelSpec& spec,
                               std::uint64_t seed) {
  spec.validate();
  if (dataset.num_psus() == 0) {
    throw FitError(fmt::format("{}: beta-binomial fit on an empty dataset", spec.name));
  }
  detail::LatentProblem problem;
  problem.model = spec.name;
  problem.family = Family::kBetaBinomial;
  problem.alpha_sd = spec.alpha_prior_sd;
  problem.universe = dataset.area_ids();

  std::vector<std::map<std::pair<int, int>, double>> cells(dataset.num_areas());
  double total_y = 0.0, total_n = 0.0;
  for (std::size_t c = 0; c < dataset.num_psus(); ++c) {
    const auto& rows = dataset.rows_in_psu(static_cast<int>(c));
    int y = 0;
    for (std::size_t r : rows) y += dataset.units()[r].y;
    const int n = static_cast<int>(rows.size());
    cells[dataset.psu_area(static_cast<int>(c))][{n, y}] += 1.0;
    total_y += y;
    total_n += n;
  }
  std::vector<AreaCounts> counts;
  for (std::size_t a = 0; a < cells.size(); ++a) {
    if (cells[a].empty()) continue;
    problem.data_areas.push_back(static_cast<int>(a));
    AreaCounts ac;
    for (const auto& [ny, cnt] : cells[a]) {
      ac.cells.push_back({ny.first, ny.second, cnt, log_choose(ny.first, ny.second)});
      ac.max_y = std::max(ac.max_y, ny.second);
      ac.max_fail = std::max(ac.max_fail, ny.first - ny.second);
      ac.max_n = std::max(ac.max_n, ny.first);
    }
    counts.push_back(std::move(ac));
  }
  const double pbar = std::clamp((total_y + 0.5) / (total_n + 1.0), 1e-6, 1.0 - 1e-6);
  problem.alpha_start = std::log(pbar / (1.0 - pbar));

  problem.likelihood = [counts](std::optional<double> dopt, std::span<const double> eta,
                                std::span<detail::LikTerm> out) {
    const double d = dopt.value_or(0.0);
    Rising ra, rb, rs;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const AreaCounts& ac = counts[k];
      const double p = expit(eta[k]);
      const double g = p * (1.0 - p);
      detail::LikTerm t;
      if (d == 0.0) {
        const double log_p = -std::log1p(std::exp(-eta[k]));
        const double log_q = -std::log1p(std::exp(eta[k]));
        for (const auto& c : ac.cells) {
          t.value += c.count * (c.log_choose + c.y * log_p + (c.n - c.y) * log_q);
          t.d1 += c.count * (c.y - c.n * p);
          t.d2 -= c.count * c.n * g;
        }
      } else {
        const double s = (1.0 - d) / d;
        ra.fill(p * s, ac.max_y);
        rb.fill((1.0 - p) * s, ac.max_fail);
        rs.fill(s, ac.max_n);
        double dp = 0.0, dpp = 0.0;
        for (const auto& c : ac.cells) {
          const int f = c.n - c.y;
          t.value += c.count * (c.log_choose + ra.log[c.y] + rb.log[f] - rs.log[c.n]);
          dp += c.count * s * (ra.inv[c.y] - rb.inv[f]);
          dpp -= c.count * s * s * (ra.inv2[c.y] + rb.inv2[f]);
        }
        t.d1 = dp * g;
        t.d2 = dpp * g * g + dp * g * (1.0 - 2.0 * p);
      }
      out[k] = t;
    }
  };
  return detail::integrate_grid(problem, spec, seed);
}

AreaEstimates fit_model(const SurveyDataset& dataset, const ModelSpec& spec, std::uint64_t seed,
                        const DirectOptions& direct_options) {
  if (spec.family == Family::kFayHerriot) {
    return fit_fay_herriot(hajek_all(dataset, direct_options), spec, seed);
  }
  return fit_betabinomial(dataset, spec, seed);
}

Prediction predict_held_out_area(const AreaEstimates& fit, std::string_view area) {
  if (const AreaEstimate* e = fit.find(area); e && e->present) {
    throw ContractError(fmt::format("area '{}' was part of the data for model '{}'", area,
                                    fit.model));
  }
  if (fit.nodes.empty()) throw ContractError("fit carries no hyperparameter nodes");
  std::vector<Prediction> per_node(fit.nodes.size());
  double mean = 0.0;
  for (std::size_t k = 0; k < fit.nodes.size(); ++k) {
    const HyperNode& n = fit.nodes[k];
    if (n.weight == 0.0) continue;
    per_node[k] = expit_normal_moments(n.alpha_mean, n.alpha_var + n.sigma * n.sigma);
    mean += n.weight * per_node[k].mean;
  }
  double var = 0.0;
  for (std::size_t k = 0; k < fit.nodes.size(); ++k) {
    if (fit.nodes[k].weight == 0.0) continue;
    const double dm = per_node[k].mean - mean;
    var += fit.nodes[k].weight * (per_node[k].variance + dm * dm);
  }
  return {mean, var};
}

void write_estimates_csv(std::ostream& out, const AreaEstimates& fit) {
  out << "area,mean,variance,present\n";
  for (const auto& a : fit.areas) {
    out << a.area_id << ',' << fmt::format("{}", a.mean) << ',' << fmt::format("{}", a.variance)
        << ',' << (a.present ? 1 : 0) << '\n';
  }
}

nlohmann::json hyper_to_json(const AreaEstimates& fit) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : fit.nodes) {
    nlohmann::json j{{"sigma_u", n.sigma},         {"log_marginal", n.log_marginal},
                     {"log_posterior", n.log_posterior}, {"weight", n.weight},
                     {"alpha_mean", n.alpha_mean}, {"alpha_var", n.alpha_var}};
    if (n.d) j["d"] = *n.d;
    nodes.push_back(std::move(j));
  }
  nlohmann::json out{{"model", fit.model},
                     {"family", family_name(fit.family)},
                     {"sigma_u_mean", fit.hyper.sigma_mean},
                     {"alpha_mean", fit.hyper.alpha_mean},
                     {"nodes", nodes}};
  if (fit.hyper.d_mean) out["d_mean"] = *fit.hyper.d_mean;
  return out;
}

}  // namespace saecv
