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

#include "saecv/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saecv/error.hpp"
#include "saecv/rng.hpp"

namespace saecv {

void ScenarioConfig::validate() const {
  if (areas.empty()) throw ConfigError("scenario: no areas configured");
  std::set<std::string> ids;
  std::map<std::string, int> frame_per_stratum;
  std::map<std::string, std::string> stratum_of_area;
  for (const auto& a : areas) {
    if (a.area_id.empty()) throw ConfigError("scenario.areas: empty area id");
    if (!ids.insert(a.area_id).second)
      throw ConfigError(fmt::format("scenario.areas: duplicate area '{}'", a.area_id));
    if (a.stratum_id.empty())
      throw ConfigError(fmt::format("scenario.areas.{}: empty stratum id", a.area_id));
    auto check_p = [&](double p) {
      if (!(p > 0.0 && p < 1.0))
        throw ConfigError(fmt::format("scenario.areas.{}: prevalence {} outside (0, 1)", a.area_id, p));
    };
    check_p(a.prevalence);
    for (double p : a.subarea_prevalences) check_p(p);
    if (a.frame_clusters <= 0)
      throw ConfigError(fmt::format("scenario.areas.{}: frame_clusters must be positive", a.area_id));
    if (a.size_min <= 0 || a.size_max < a.size_min)
      throw ConfigError(fmt::format("scenario.areas.{}: invalid cluster size range [{}, {}]",
                                    a.area_id, a.size_min, a.size_max));
    frame_per_stratum[a.stratum_id] += a.frame_clusters;
  }
  if (!(d_pop >= 0.0 && d_pop < 1.0)) throw ConfigError("scenario.d_pop must lie in [0, 1)");
  if (clusters_per_stratum <= 0) throw ConfigError("scenario.clusters_per_stratum must be positive");
  if (households_per_cluster <= 0)
    throw ConfigError("scenario.households_per_cluster must be positive");
  for (const auto& [stratum, count] : frame_per_stratum) {
    if (clusters_per_stratum > count)
      throw ConfigError(fmt::format(
          "scenario: stratum '{}' has {} frame clusters, fewer than clusters_per_stratum = {}",
          stratum, count, clusters_per_stratum));
  }
  if (replicates <= 0) throw ConfigError("scenario.replicates must be positive");
  std::set<std::string> names;
  for (const auto& m : models) {
    if (!names.insert(m.name).second)
      throw ConfigError(fmt::format("models: duplicate model name '{}'", m.name));
    m.validate();
  }
  for (const auto& [a, b] : comparisons) {
    for (const auto& n : {a, b}) {
      if (!names.count(n))
        throw ConfigError(fmt::format("cv.compare: model '{}' is not defined", n));
    }
  }
  if (cv.scheme != Scheme::kTwoFold && cv.K < 2) throw ConfigError("cv.k must be at least 2");
  if (cv.scheme == Scheme::kTwoFold && cv.resplits < 1)
    throw ConfigError("cv.resplits must be at least 1");
}

const ModelSpec& ScenarioConfig::model(std::string_view name) const {
  for (const auto& m : models) {
    if (m.name == name) return m;
  }
  throw ConfigError(fmt::format("model '{}' is not defined", name));
}

void SyntheticPopulation::summarize() {
  truth.clear();
  population.clear();
  std::map<std::string, double> events;
  for (const auto& c : clusters) {
    population[c.area_id] += c.N;
    events[c.area_id] += c.Y;
  }
  for (const auto& [area, n] : population) truth[area] = n > 0 ? events[area] / n : 0.0;
}

Frame build_frame(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Frame frame;
  for (const auto& a : config.areas) {
    Engine eng = make_engine(derive_seed(seed, a.area_id));
    std::uniform_int_distribution<int> size(a.size_min, a.size_max);
    for (int c = 0; c < a.frame_clusters; ++c) {
      FrameCluster fc;
      fc.cluster_id = fmt::format("{}-{:04d}", a.area_id, c);
      fc.area_id = a.area_id;
      fc.stratum_id = a.stratum_id;
      fc.prevalence = a.subarea_prevalences.empty()
                          ? a.prevalence
                          : a.subarea_prevalences[c % a.subarea_prevalences.size()];
      fc.size = size(eng);
      frame.clusters.push_back(std::move(fc));
    }
  }
  return frame;
}

SyntheticPopulation generate_population(const Frame& frame, const ScenarioConfig& config,
                                        std::uint64_t seed) {
  if (!(config.d_pop >= 0.0 && config.d_pop < 1.0))
    throw ConfigError("scenario.d_pop must lie in [0, 1)");
  SyntheticPopulation pop;
  const double d = config.d_pop;
  std::map<std::string, Engine> engines;
  for (const auto& fc : frame.clusters) {
    auto it = engines.find(fc.area_id);
    if (it == engines.end())
      it = engines.emplace(fc.area_id, make_engine(derive_seed(seed, fc.area_id))).first;
    Engine& eng = it->second;
    double p = fc.prevalence;
    if (d > 0.0) {
      const double s = (1.0 - d) / d;
      std::gamma_distribution<double> ga(p * s, 1.0), gb((1.0 - p) * s, 1.0);
      const double x = ga(eng), y = gb(eng);
      p = x / (x + y);
    }
    std::binomial_distribution<int> bin(fc.size, p);
    pop.clusters.push_back({fc.cluster_id, fc.area_id, fc.stratum_id, fc.size, bin(eng)});
  }
  pop.summarize();
  return pop;
}

std::vector<double> pps_inclusion_probabilities(const std::vector<int>& sizes, int n) {
  if (n < 0 || static_cast<std::size_t>(n) > sizes.size())
    throw DomainError(fmt::format("cannot select {} of {} clusters", n, sizes.size()));
  std::vector<double> pi(sizes.size(), 0.0);
  std::vector<bool> certain(sizes.size(), false);
  int remaining = n;
  for (;;) {
    double total = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (!certain[i]) total += sizes[i];
    }
    bool capped = false;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (certain[i]) continue;
      pi[i] = total > 0 ? remaining * sizes[i] / total : 0.0;
      if (pi[i] >= 1.0) {
        certain[i] = true;
        pi[i] = 1.0;
        --remaining;
        capped = true;
      }
    }
    if (!capped) break;
  }
  return pi;
}

std::vector<std::size_t> systematic_select(const std::vector<double>& pi, double u) {
  const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
  const long n = std::lround(total);
  std::vector<std::size_t> picked;
  double cum = 0.0;
  long k = 0;
  for (std::size_t i = 0; i < pi.size() && k < n; ++i) {
    const double next = cum + pi[i];
    // Certainty units always qualify; the tolerance absorbs summation error.
    while (k < n && u + static_cast<double>(k) < next - 1e-12) {
      if (picked.empty() || picked.back() != i) picked.push_back(i);
      ++k;
    }
    cum = next;
  }
  // Rounding can leave the last point just past the final cumulative total.
  if (k < n && !pi.empty() && (picked.empty() || picked.back() != pi.size() - 1))
    picked.push_back(pi.size() - 1);
  return picked;
}

SurveyDataset draw_survey(const SyntheticPopulation& population, const ScenarioConfig& config,
                          std::uint64_t seed, std::vector<std::string>* warnings) {
  std::map<std::string, std::vector<std::size_t>> by_stratum;
  for (std::size_t i = 0; i < population.clusters.size(); ++i)
    by_stratum[population.clusters[i].stratum_id].push_back(i);

  const int m = config.households_per_cluster;
  std::vector<UnitRecord> units;
  for (auto& [stratum, members] : by_stratum) {
    Engine eng = make_engine(derive_seed(seed, stratum));
    // Randomized systematic PPS: a fresh frame order per draw, so the frame's
    // layout does not act as implicit stratification.
    std::shuffle(members.begin(), members.end(), eng);
    std::vector<int> sizes;
    for (std::size_t i : members) sizes.push_back(population.clusters[i].N);
    const auto pi = pps_inclusion_probabilities(sizes, config.clusters_per_stratum);
    const auto picked = systematic_select(pi, uniform01(eng));
    for (std::size_t s : picked) {
      const auto& c = population.clusters[members[s]];
      const int take = std::min(m, c.N);
      if (take < m && warnings) {
        warnings->push_back(fmt::format("cluster {} has {} households, fewer than the take of {}; "
                                        "taking all",
                                        c.cluster_id, c.N, m));
      }
      const double pi2 = static_cast<double>(take) / c.N;
      const double w = 1.0 / (pi[s] * pi2);
      int left = c.N, events = c.Y;
      for (int h = 0; h < take; ++h) {
        // Sequential draw without replacement from the remaining households.
        const int y = uniform01(eng) * left < events ? 1 : 0;
        events -= y;
        --left;
        const std::string ssu = fmt::format("h{:03d}", h);
        units.push_back({c.cluster_id + "/" + ssu, stratum, c.cluster_id, ssu, c.area_id, w, y});
      }
    }
  }
  std::vector<std::string> universe;
  for (const auto& [area, n] : population.population) universe.push_back(area);
  return SurveyDataset::create(std::move(units), universe);
}

double oracle_error(const std::map<std::string, double>& estimates,
                    const std::map<std::string, double>& truth, const AreaWeights& q) {
  double s = 0.0;
  for (const auto& [area, qi] : q.q) {
    if (qi == 0.0) continue;
    const auto e = estimates.find(area);
    const auto t = truth.find(area);
    if (e == estimates.end() || t == truth.end())
      throw ContractError(fmt::format("oracle error: area '{}' lacks an estimate or truth", area));
    s += qi * (e->second - t->second) * (e->second - t->second);
  }
  return s;
}

void write_frame_csv(std::ostream& out, const Frame& frame) {
  out << "cluster,area,stratum,prevalence,size\n";
  for (const auto& c : frame.clusters)
    out << fmt::format("{},{},{},{},{}\n", c.cluster_id, c.area_id, c.stratum_id, c.prevalence,
                       c.size);
}

void write_population_csv(std::ostream& out, const SyntheticPopulation& population) {
  out << "cluster,area,stratum,N,Y\n";
  for (const auto& c : population.clusters)
    out << fmt::format("{},{},{},{},{}\n", c.cluster_id, c.area_id, c.stratum_id, c.N, c.Y);
}

void write_truth_csv(std::ostream& out, const SyntheticPopulation& population) {
  out << "area,population,prevalence\n";
  for (const auto& [area, theta] : population.truth)
    out << fmt::format("{},{},{}\n", area, population.population.at(area), theta);
}

}  // namespace saecv
