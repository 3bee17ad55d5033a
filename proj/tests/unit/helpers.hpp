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

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "saecv/rng.hpp"
#include "saecv/sim.hpp"
#include "saecv/survey.hpp"

namespace saecv::testing {

inline UnitRecord unit(std::string stratum, std::string psu, std::string ssu, std::string area,
                       double w, int y) {
  return {psu + "/" + ssu, std::move(stratum), std::move(psu), std::move(ssu), std::move(area), w, y};
}

// Random two-stage sample: `areas` areas, one stratum per area, `psus`
// clusters per area and `ssus` households per cluster with varying weights.
inline SurveyDataset random_dataset(std::uint64_t seed, int areas = 4, int psus = 6, int ssus = 8) {
  Engine eng = make_engine(seed);
  std::vector<UnitRecord> units;
  for (int a = 0; a < areas; ++a) {
    const double p = 0.2 + 0.6 * uniform01(eng);
    for (int c = 0; c < psus; ++c) {
      const double w = 1.0 + 9.0 * uniform01(eng);
      const double pc = std::clamp(p + 0.2 * (uniform01(eng) - 0.5), 0.01, 0.99);
      for (int h = 0; h < ssus; ++h) {
        units.push_back(unit(fmt::format("s{}", a), fmt::format("a{}c{:02d}", a, c),
                             fmt::format("h{:02d}", h), fmt::format("area{}", a), w,
                             uniform01(eng) < pc ? 1 : 0));
      }
    }
  }
  return SurveyDataset::create(std::move(units));
}

// Small synthetic scenario: `areas` areas in their own strata.
inline ScenarioConfig small_scenario(int areas = 4, int clusters = 10, int households = 10) {
  ScenarioConfig cfg;
  for (int a = 0; a < areas; ++a) {
    AreaConfig ac;
    ac.area_id = fmt::format("area{}", a);
    ac.stratum_id = fmt::format("s{}", a);
    ac.prevalence = 0.3 + 0.1 * a;
    ac.frame_clusters = 40;
    cfg.areas.push_back(ac);
  }
  cfg.clusters_per_stratum = clusters;
  cfg.households_per_cluster = households;
  cfg.replicates = 2;
  cfg.run_loao = false;
  return cfg;
}

}  // namespace saecv::testing

#include <map>

#include "saecv/cv.hpp"

namespace saecv::testing {

// Counts violations of the partition properties of one fold assignment:
// every splitting unit of the dataset in exactly one fold in [0, K), no
// foreign keys, and balanced dealing (fold sizes within a cluster for SSU
// splits, within a stratum for PSU splits, differ by at most one).
inline int partition_violations(const SurveyDataset& ds, const FoldAssignment& fa) {
  int bad = 0;
  std::size_t expected = 0;
  for (const auto& [stratum, psus] : ds.design_index()) {
    std::vector<int> stratum_sizes(fa.K, 0);
    for (const auto& [psu, ssus] : psus) {
      std::vector<int> sizes(fa.K, 0);
      if (fa.unit == SplitUnit::kPsu) {
        ++expected;
        const auto it = fa.assignment.find(psu);
        if (it == fa.assignment.end() || it->second < 0 || it->second >= fa.K) {
          ++bad;
          continue;
        }
        ++stratum_sizes[it->second];
        continue;
      }
      for (const auto& [ssu, rows] : ssus) {
        ++expected;
        const auto it = fa.assignment.find(FoldAssignment::ssu_key(psu, ssu));
        if (it == fa.assignment.end() || it->second < 0 || it->second >= fa.K) {
          ++bad;
          continue;
        }
        ++sizes[it->second];
      }
      if (fa.unit == SplitUnit::kSsu) {
        const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
        if (*hi - *lo > 1) ++bad;
      }
    }
    if (fa.unit == SplitUnit::kPsu) {
      const auto [lo, hi] = std::minmax_element(stratum_sizes.begin(), stratum_sizes.end());
      if (*hi - *lo > 1) ++bad;
    }
  }
  if (fa.assignment.size() != expected) ++bad;
  // Row folds must agree with the unit map.
  const auto folds = fa.row_folds(ds);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const auto& u = ds.units()[r];
    const auto key = fa.unit == SplitUnit::kSsu ? FoldAssignment::ssu_key(u.psu_id, u.ssu_id) : u.psu_id;
    if (fa.assignment.at(key) != folds[r]) ++bad;
  }
  return bad;
}

}  // namespace saecv::testing
