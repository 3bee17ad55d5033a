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

#include "latent_gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <fmt/format.h>

#include "saecv/error.hpp"
#include "saecv/rng.hpp"

namespace saecv::detail {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kGradTol = 1e-8;
constexpr double kStallGradTol = 1e-5;
constexpr int kMaxNewton = 100;
constexpr int kMaxHalvings = 30;

double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::string node_label(double sigma, std::optional<double> d) {
  if (d) return fmt::format("(sigma_u={:.6g}, d={:.6g})", sigma, *d);
  return fmt::format("(sigma_u={:.6g})", sigma);
}

struct Objective {
  const LatentProblem& problem;
  double sigma;
  std::optional<double> d;
  std::vector<double> eta;
  std::vector<LikTerm> terms;

  // theta = (alpha, u_1..u_m); u is ignored when sigma == 0.
  double operator()(const std::vector<double>& theta) {
    const std::size_t m = problem.data_areas.size();
    const bool pooled = sigma == 0.0;
    for (std::size_t k = 0; k < m; ++k) eta[k] = theta[0] + (pooled ? 0.0 : theta[k + 1]);
    problem.likelihood(d, eta, terms);
    const double tau2 = problem.alpha_sd * problem.alpha_sd;
    double f = -0.5 * theta[0] * theta[0] / tau2;
    for (std::size_t k = 0; k < m; ++k) {
      f += terms[k].value;
      if (!pooled) f -= 0.5 * theta[k + 1] * theta[k + 1] / (sigma * sigma);
    }
    return f;
  }
};

}  // namespace

NodeFit laplace_node(const LatentProblem& problem, double sigma, std::optional<double> d,
                     std::vector<double>& start) {
  const std::size_t m = problem.data_areas.size();
  const bool pooled = sigma == 0.0;
  const double tau2 = problem.alpha_sd * problem.alpha_sd;
  const double prec_u = pooled ? 0.0 : 1.0 / (sigma * sigma);
  Objective obj{problem, sigma, d, std::vector<double>(m), std::vector<LikTerm>(m)};

  if (start.size() != m + 1) {
    start.assign(m + 1, 0.0);
    start[0] = problem.alpha_start;
  }
  if (pooled) std::fill(start.begin() + 1, start.end(), 0.0);
  std::vector<double> theta = start, trial(m + 1, 0.0), grad(m + 1), step(m + 1, 0.0);
  std::vector<double> curv(m);
  double f = obj(theta);
  if (!std::isfinite(f)) {
    throw FitError(fmt::format("{}: non-finite likelihood at node {}", problem.model,
                               node_label(sigma, d)));
  }

  bool converged = false;
  for (int it = 0; it < kMaxNewton; ++it) {
    double gmax = 0.0;
    grad[0] = -theta[0] / tau2;
    for (std::size_t k = 0; k < m; ++k) {
      grad[0] += obj.terms[k].d1;
      if (!pooled) {
        grad[k + 1] = obj.terms[k].d1 - theta[k + 1] * prec_u;
        gmax = std::max(gmax, std::abs(grad[k + 1]));
      }
    }
    gmax = std::max(gmax, std::abs(grad[0]));
    if (gmax < kGradTol) {
      converged = true;
      break;
    }

    // Newton direction from the arrow-shaped negative Hessian
    //   [ A   c^T ]     A = sum c + 1/tau^2
    //   [ c   D   ]     D = c + 1/sigma^2 (diagonal)
    // with non-positive curvature clipped so the direction is an ascent.
    double A = 1.0 / tau2, schur_rhs = grad[0];
    for (std::size_t k = 0; k < m; ++k) {
      curv[k] = std::max(-obj.terms[k].d2, 1e-12);
      A += curv[k];
    }
    double S = A;
    if (!pooled) {
      for (std::size_t k = 0; k < m; ++k) {
        const double D = curv[k] + prec_u;
        S -= curv[k] * curv[k] / D;
        schur_rhs -= curv[k] * grad[k + 1] / D;
      }
    }
    step[0] = schur_rhs / S;
    if (!pooled) {
      for (std::size_t k = 0; k < m; ++k) {
        step[k + 1] = (grad[k + 1] - curv[k] * step[0]) / (curv[k] + prec_u);
      }
    }

    double t = 1.0;
    bool accepted = false;
    std::vector<LikTerm> saved_terms = obj.terms;
    for (int h = 0; h < kMaxHalvings; ++h, t *= 0.5) {
      for (std::size_t i = 0; i <= m; ++i) trial[i] = theta[i] + t * step[i];
      const double ft = obj(trial);
      if (std::isfinite(ft) && ft >= f - 1e-12 * (1.0 + std::abs(f))) {
        theta.swap(trial);
        f = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      obj.terms = std::move(saved_terms);
      if (gmax < kStallGradTol) {
        converged = true;
        break;
      }
      throw FitError(fmt::format("{}: Newton line search failed at node {} (gradient {:.3g})",
                                 problem.model, node_label(sigma, d), gmax));
    }
  }
  if (!converged) {
    double gmax = 0.0;
    // Accept a mode stuck just above tolerance by rounding.
    for (std::size_t k = 0; k < m; ++k) {
      if (!pooled) gmax = std::max(gmax, std::abs(obj.terms[k].d1 - theta[k + 1] * prec_u));
    }
    if (gmax >= kStallGradTol) {
      throw FitError(fmt::format("{}: Newton did not converge in {} iterations at node {}",
                                 problem.model, kMaxNewton, node_label(sigma, d)));
    }
  }

  NodeFit out;
  out.alpha = theta[0];
  out.u.assign(m, 0.0);
  out.curv.resize(m);
  double A = 1.0 / tau2, log_det = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    out.curv[k] = -obj.terms[k].d2;
    A += out.curv[k];
    if (!pooled) {
      out.u[k] = theta[k + 1];
      const double D = out.curv[k] + prec_u;
      if (!(D > 0.0)) {
        throw FitError(fmt::format("{}: Hessian not negative definite at node {}",
                                   problem.model, node_label(sigma, d)));
      }
      log_det += std::log(D);
    }
  }
  double S = A;
  if (!pooled) {
    for (std::size_t k = 0; k < m; ++k) {
      S -= out.curv[k] * out.curv[k] / (out.curv[k] + prec_u);
    }
  }
  if (!(S > 0.0)) {
    throw FitError(fmt::format("{}: Hessian not negative definite at node {}", problem.model,
                               node_label(sigma, d)));
  }
  out.schur = S;
  log_det += std::log(S);
  const double dim = pooled ? 1.0 : static_cast<double>(m + 1);
  out.log_marginal = f + 0.5 * dim * kLog2Pi - 0.5 * log_det - 0.5 * (kLog2Pi + std::log(tau2));
  if (!pooled) out.log_marginal -= 0.5 * static_cast<double>(m) * (kLog2Pi + 2.0 * std::log(sigma));
  if (!std::isfinite(out.log_marginal)) {
    throw FitError(fmt::format("{}: non-finite marginal likelihood at node {}", problem.model,
                               node_label(sigma, d)));
  }
  start = theta;
  return out;
}

namespace {

struct Axis {
  bool active = false;
  double fixed = 0.0;  // value when inactive
  double lo = 0.0, hi = 0.0;
  int n = 1;

  double value(int i) const {
    if (!active) return fixed;
    if (n == 1) return 0.5 * (lo + hi);
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  double step() const { return n > 1 ? (hi - lo) / static_cast<double>(n - 1) : 0.0; }
  int count() const { return active ? n : 1; }
};

struct Evaluated {
  double x = 0.0, z = 0.0;  // log sigma (or sigma when fixed), logit d
  double log_prior = 0.0;
  NodeFit fit;
};

class GridIntegrator {
 public:
  GridIntegrator(const LatentProblem& problem, const ModelSpec& spec)
      : problem_(problem), spec_(spec) {}

  std::vector<Evaluated> evaluate(const Axis& ax, const Axis& az) {
    std::vector<Evaluated> out(static_cast<std::size_t>(ax.count() * az.count()));
    for (int i = 0; i < ax.count(); ++i) {
      for (int jj = 0; jj < az.count(); ++jj) {
        // Serpentine order keeps consecutive nodes adjacent for warm starts.
        const int j = (i % 2 == 0) ? jj : az.count() - 1 - jj;
        Evaluated& e = out[static_cast<std::size_t>(i * az.count() + j)];
        e.x = ax.value(i);
        e.z = az.value(j);
        const double sigma = ax.active ? std::exp(e.x) : e.x;
        std::optional<double> d;
        if (spec_.family == Family::kBetaBinomial) d = az.active ? expit(e.z) : e.z;
        try {
          e.fit = laplace_node(problem_, sigma, d, warm_);
        } catch (const FitError&) {
          warm_.clear();  // retry from a cold start
          e.fit = laplace_node(problem_, sigma, d, warm_);
        }
        e.log_prior = 0.0;
        if (ax.active) {
          // PC prior on sigma, carried to log sigma.
          e.log_prior += spec_.sigma_prior.log_density(sigma) + e.x;
        }
        if (az.active) {
          const auto& p = spec_.logit_d_prior;
          const double r = (e.z - p.mean) / p.sd;
          e.log_prior += -0.5 * r * r - std::log(p.sd) - 0.5 * kLog2Pi;
        }
      }
    }
    return out;
  }

  // Bounding box (in node indices) of nodes within `drop` of the maximum.
  static void support(const std::vector<Evaluated>& ev, const Axis& ax, const Axis& az,
                      double drop, int& i0, int& i1, int& j0, int& j1) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : ev) best = std::max(best, e.fit.log_marginal + e.log_prior);
    i0 = ax.count();
    j0 = az.count();
    i1 = j1 = -1;
    for (int i = 0; i < ax.count(); ++i) {
      for (int j = 0; j < az.count(); ++j) {
        const auto& e = ev[static_cast<std::size_t>(i * az.count() + j)];
        if (e.fit.log_marginal + e.log_prior >= best - drop) {
          i0 = std::min(i0, i);
          i1 = std::max(i1, i);
          j0 = std::min(j0, j);
          j1 = std::max(j1, j);
        }
      }
    }
  }

  static Axis narrowed(const Axis& a, int i0, int i1, int nodes) {
    if (!a.active) return a;
    Axis out = a;
    out.lo = a.value(std::max(i0 - 1, 0));
    out.hi = a.value(std::min(i1 + 1, a.count() - 1));
    out.n = nodes;
    return out;
  }

 private:
  const LatentProblem& problem_;
  const ModelSpec& spec_;
  std::vector<double> warm_;
};

}  // namespace

AreaEstimates integrate_grid(const LatentProblem& problem, const ModelSpec& spec,
                             std::uint64_t seed) {
  GridIntegrator integrator(problem, spec);
  const bool bb = spec.family == Family::kBetaBinomial;

  Axis ax, az;
  if (spec.fixed_sigma) {
    ax.fixed = *spec.fixed_sigma;
  } else {
    ax.active = true;
    ax.lo = std::log(spec.sigma_prior.quantile(0.001));
    ax.hi = std::log(std::max(spec.sigma_prior.quantile(0.999), 5.0));
    ax.n = spec.grid.pilot_nodes;
  }
  if (bb && !spec.fixed_d) {
    az.active = true;
    az.lo = spec.grid.logit_d_min;
    az.hi = spec.grid.logit_d_max;
    az.n = spec.grid.pilot_nodes;
  } else if (bb) {
    az.fixed = *spec.fixed_d;
  }

  const double drop = spec.grid.log_density_drop;
  std::vector<Evaluated> ev;
  if (ax.active || az.active) {
    ev = integrator.evaluate(ax, az);
    int i0, i1, j0, j1;
    GridIntegrator::support(ev, ax, az, drop, i0, i1, j0, j1);
    ax = GridIntegrator::narrowed(ax, i0, i1, spec.sigma_nodes());
    az = GridIntegrator::narrowed(az, j0, j1, spec.d_nodes());
    ev = integrator.evaluate(ax, az);
    // Zoom while the posterior mass sits on too few nodes of an axis.
    for (int round = 0; round < 3; ++round) {
      GridIntegrator::support(ev, ax, az, drop, i0, i1, j0, j1);
      const bool thin_x = ax.active && (i1 - i0) < 6;
      const bool thin_z = az.active && (j1 - j0) < 6;
      if (!thin_x && !thin_z) break;
      if (thin_x) ax = GridIntegrator::narrowed(ax, i0, i1, ax.n);
      if (thin_z) az = GridIntegrator::narrowed(az, j0, j1, az.n);
      ev = integrator.evaluate(ax, az);
    }
  } else {
    ev = integrator.evaluate(ax, az);
  }

  // Trapezoid weights times posterior density.
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : ev) best = std::max(best, e.fit.log_marginal + e.log_prior);
  std::vector<double> w(ev.size());
  double wsum = 0.0;
  for (int i = 0; i < ax.count(); ++i) {
    for (int j = 0; j < az.count(); ++j) {
      const std::size_t k = static_cast<std::size_t>(i * az.count() + j);
      double trap = 1.0;
      if (ax.active && (i == 0 || i == ax.count() - 1)) trap *= 0.5;
      if (az.active && (j == 0 || j == az.count() - 1)) trap *= 0.5;
      w[k] = trap * std::exp(ev[k].fit.log_marginal + ev[k].log_prior - best);
      wsum += w[k];
    }
  }
  for (auto& v : w) v /= wsum;

  AreaEstimates out;
  out.model = problem.model;
  out.family = spec.family;
  const std::size_t n_univ = problem.universe.size();
  std::vector<int> data_pos(n_univ, -1);
  for (std::size_t k = 0; k < problem.data_areas.size(); ++k) {
    data_pos[problem.data_areas[k]] = static_cast<int>(k);
  }

  // Per node, per area: Gaussian summary of eta.
  const std::size_t n_nodes = ev.size();
  std::vector<double> eta_mean(n_nodes * n_univ), eta_var(n_nodes * n_univ);
  out.nodes.resize(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) {
    const Evaluated& e = ev[k];
    const double sigma = ax.active ? std::exp(e.x) : e.x;
    const double prec_u = sigma > 0.0 ? 1.0 / (sigma * sigma) : 0.0;
    HyperNode& node = out.nodes[k];
    node.sigma = sigma;
    if (bb) node.d = az.active ? expit(e.z) : e.z;
    node.log_marginal = e.fit.log_marginal;
    node.log_posterior = e.fit.log_marginal + e.log_prior;
    node.weight = w[k];
    node.alpha_mean = e.fit.alpha;
    node.alpha_var = 1.0 / e.fit.schur;
    for (std::size_t a = 0; a < n_univ; ++a) {
      double mean = e.fit.alpha, var = 1.0 / e.fit.schur;
      if (data_pos[a] >= 0) {
        if (sigma > 0.0) {
          const std::size_t q = static_cast<std::size_t>(data_pos[a]);
          const double D = e.fit.curv[q] + prec_u;
          const double lever = 1.0 - e.fit.curv[q] / D;
          mean += e.fit.u[q];
          var = lever * lever / e.fit.schur + 1.0 / D;
        }
      } else {
        var += sigma * sigma;
      }
      eta_mean[k * n_univ + a] = mean;
      eta_var[k * n_univ + a] = var;
    }
  }

  for (const auto& node : out.nodes) {
    out.hyper.sigma_mean += node.weight * node.sigma;
    out.hyper.alpha_mean += node.weight * node.alpha_mean;
    if (node.d) out.hyper.d_mean = out.hyper.d_mean.value_or(0.0) + node.weight * *node.d;
  }

  out.areas.resize(n_univ);
  if (spec.summary == SummaryMethod::kQuadrature) {
    std::vector<Prediction> per_node(n_nodes);
    for (std::size_t a = 0; a < n_univ; ++a) {
      double mean = 0.0;
      for (std::size_t k = 0; k < n_nodes; ++k) {
        if (w[k] == 0.0) continue;
        per_node[k] = expit_normal_moments(eta_mean[k * n_univ + a], eta_var[k * n_univ + a]);
        mean += w[k] * per_node[k].mean;
      }
      double var = 0.0;
      for (std::size_t k = 0; k < n_nodes; ++k) {
        if (w[k] == 0.0) continue;
        const double dm = per_node[k].mean - mean;
        var += w[k] * (per_node[k].variance + dm * dm);
      }
      out.areas[a] = {problem.universe[a], data_pos[a] >= 0, mean, std::max(var, 0.0)};
    }
  } else {
    Engine eng = make_engine(derive_seed(seed, "mc"));
    std::normal_distribution<double> normal;
    std::vector<double> cum(n_nodes);
    double acc = 0.0;
    for (std::size_t k = 0; k < n_nodes; ++k) cum[k] = (acc += w[k]);
    for (std::size_t a = 0; a < n_univ; ++a) {
      double mean = 0.0, m2 = 0.0;
      for (int s = 0; s < spec.mc.samples; ++s) {
        const double u = uniform01(eng) * acc;
        std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) -
                                                 cum.begin());
        k = std::min(k, n_nodes - 1);
        const double eta =
            eta_mean[k * n_univ + a] + std::sqrt(eta_var[k * n_univ + a]) * normal(eng);
        const double theta = expit(eta);
        const double delta = theta - mean;
        mean += delta / (s + 1);
        m2 += delta * (theta - mean);
      }
      out.areas[a] = {problem.universe[a], data_pos[a] >= 0, mean, m2 / spec.mc.samples};
    }
  }
  return out;
}

}  // namespace saecv::detail
