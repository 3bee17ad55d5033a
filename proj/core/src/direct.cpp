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

#include "saecv/direct.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saecv/error.hpp"

namespace saecv {
namespace {

struct PsuTotals {
  std::vector<double> w, wy;
};

PsuTotals psu_totals(const SurveyDataset& ds) {
  PsuTotals t{std::vector<double>(ds.num_psus(), 0.0), std::vector<double>(ds.num_psus(), 0.0)};
  for (std::size_t c = 0; c < ds.num_psus(); ++c) {
    for (std::size_t r : ds.rows_in_psu(static_cast<int>(c))) {
      const auto& u = ds.units()[r];
      t.w[c] += u.weight;
      t.wy[c] += u.weight * u.y;
    }
  }
  return t;
}

// Variance strata as lists of PSU codes. Singleton strata are either left
// alone (they contribute nothing) or merged pairwise in identifier order.
std::vector<std::vector<int>> variance_strata(const SurveyDataset& ds, SingletonStrata mode) {
  std::vector<std::vector<int>> groups;
  std::vector<int> singletons;
  for (std::size_t h = 0; h < ds.num_strata(); ++h) {
    const auto& psus = ds.psus_in_stratum(static_cast<int>(h));
    if (psus.size() == 1 && mode == SingletonStrata::kCollapse) {
      singletons.push_back(static_cast<int>(h));
    } else {
      if (psus.size() == 1) {
        spdlog::warn("stratum '{}' has a single PSU; it contributes zero variance",
                     ds.stratum_ids()[h]);
      }
      groups.push_back(psus);
    }
  }
  if (singletons.size() == 1) {
    spdlog::warn("stratum '{}' is the only singleton stratum and cannot be collapsed",
                 ds.stratum_ids()[singletons[0]]);
    groups.push_back(ds.psus_in_stratum(singletons[0]));
  } else {
    for (std::size_t i = 0; i + 1 < singletons.size(); i += 2) {
      std::vector<int> merged = ds.psus_in_stratum(singletons[i]);
      const auto& next = ds.psus_in_stratum(singletons[i + 1]);
      merged.insert(merged.end(), next.begin(), next.end());
      // An odd one out joins the last pair.
      if (i + 3 == singletons.size()) {
        const auto& last = ds.psus_in_stratum(singletons[i + 2]);
        merged.insert(merged.end(), last.begin(), last.end());
      }
      groups.push_back(std::move(merged));
    }
  }
  return groups;
}

struct AreaMoments {
  std::vector<double> w, wy, variance;
  std::vector<std::size_t> n_psus;
};

AreaMoments compute_moments(const SurveyDataset& ds, const DirectOptions& options) {
  const std::size_t m = ds.num_areas();
  AreaMoments am{std::vector<double>(m, 0.0), std::vector<double>(m, 0.0),
                 std::vector<double>(m, 0.0), std::vector<std::size_t>(m, 0)};
  const PsuTotals pt = psu_totals(ds);
  for (std::size_t c = 0; c < ds.num_psus(); ++c) {
    const int a = ds.psu_area(static_cast<int>(c));
    am.w[a] += pt.w[c];
    am.wy[a] += pt.wy[c];
    ++am.n_psus[a];
  }
  // Linearized PSU totals e_c = (sum wy - theta * sum w) / W_area.
  std::vector<double> e(ds.num_psus(), 0.0);
  for (std::size_t c = 0; c < ds.num_psus(); ++c) {
    const int a = ds.psu_area(static_cast<int>(c));
    const double theta = am.wy[a] / am.w[a];
    e[c] = (pt.wy[c] - theta * pt.w[c]) / am.w[a];
  }
  std::vector<double> s1(m), s2(m);
  for (const auto& group : variance_strata(ds, options.singleton)) {
    const double n_h = static_cast<double>(group.size());
    if (group.size() < 2) continue;
    std::fill(s1.begin(), s1.end(), 0.0);
    std::fill(s2.begin(), s2.end(), 0.0);
    for (int c : group) {
      const int a = ds.psu_area(c);
      s1[a] += e[c];
      s2[a] += e[c] * e[c];
    }
    for (std::size_t a = 0; a < m; ++a) {
      if (s2[a] == 0.0) continue;
      // Sum over all n_h PSUs of (e_c - mean)^2, PSUs of other areas having e_c = 0.
      am.variance[a] += n_h / (n_h - 1.0) * (s2[a] - s1[a] * s1[a] / n_h);
    }
  }
  for (auto& v : am.variance) v = std::max(v, 0.0);
  return am;
}

int require_area(const SurveyDataset& ds, std::string_view area) {
  const int a = ds.area_index(area);
  if (a < 0 || ds.rows_in_area(a).empty()) {
    throw NoDataError(fmt::format("area '{}' has no sampled units", area));
  }
  return a;
}

}  // namespace

double hajek(const SurveyDataset& dataset, std::string_view area) {
  const int a = require_area(dataset, area);
  double w = 0.0, wy = 0.0;
  for (std::size_t r : dataset.rows_in_area(a)) {
    const auto& u = dataset.units()[r];
    w += u.weight;
    wy += u.weight * u.y;
  }
  return wy / w;
}

double design_variance(const SurveyDataset& dataset, std::string_view area,
                       const DirectOptions& options) {
  const int a = require_area(dataset, area);
  return compute_moments(dataset, options).variance[a];
}

LogitEstimate logit_transform(double point, double variance) {
  LogitEstimate out;
  if (!(point > 0.0 && point < 1.0) || !(variance > 0.0)) return out;
  out.point = std::log(point / (1.0 - point));
  const double slope = point * (1.0 - point);
  double v = variance / (slope * slope);
  if (v < kLogitVarianceFloor) {
    v = kLogitVarianceFloor;
    out.floored = true;
  }
  out.variance = v;
  return out;
}

std::vector<DirectEstimate> hajek_all(const SurveyDataset& dataset, const DirectOptions& options) {
  const AreaMoments am = compute_moments(dataset, options);
  std::vector<DirectEstimate> out;
  out.reserve(dataset.num_areas());
  for (std::size_t a = 0; a < dataset.num_areas(); ++a) {
    DirectEstimate d;
    d.area_id = dataset.area_ids()[a];
    d.n_units = dataset.rows_in_area(static_cast<int>(a)).size();
    d.n_psus = am.n_psus[a];
    if (d.n_units > 0) {
      d.present = true;
      d.point = am.wy[a] / am.w[a];
      d.variance = am.variance[a];
      const LogitEstimate l = logit_transform(d.point, d.variance);
      d.logit_point = l.point;
      d.logit_variance = l.variance;
      d.variance_floored = l.floored;
    }
    out.push_back(std::move(d));
  }
  return out;
}

const DirectEstimate* find_direct(const std::vector<DirectEstimate>& directs,
                                  std::string_view area) {
  auto it = std::lower_bound(directs.begin(), directs.end(), area,
                             [](const DirectEstimate& d, std::string_view id) {
                               return d.area_id < id;
                             });
  if (it == directs.end() || it->area_id != area) return nullptr;
  return &*it;
}

void write_directs_csv(std::ostream& out, const std::vector<DirectEstimate>& directs) {
  out << "area,point,variance,logit_point,logit_variance,n_units,n_psus\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{}", *v) : std::string("NA");
  };
  for (const auto& d : directs) {
    if (!d.present) {
      out << d.area_id << ",NA,NA,NA,NA,0,0\n";
      continue;
    }
    out << d.area_id << ',' << fmt::format("{}", d.point) << ',' << fmt::format("{}", d.variance)
        << ',' << opt(d.logit_point) << ',' << opt(d.logit_variance) << ',' << d.n_units << ','
        << d.n_psus << '\n';
  }
}

nlohmann::json directs_to_json(const std::vector<DirectEstimate>& directs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : directs) {
    nlohmann::json j{{"area", d.area_id}, {"present", d.present}, {"n_units", d.n_units},
                     {"n_psus", d.n_psus}};
    if (d.present) {
      j["point"] = d.point;
      j["variance"] = d.variance;
      j["logit_point"] = d.logit_point ? nlohmann::json(*d.logit_point) : nlohmann::json();
      j["logit_variance"] =
          d.logit_variance ? nlohmann::json(*d.logit_variance) : nlohmann::json();
      j["variance_floored"] = d.variance_floored;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace saecv
