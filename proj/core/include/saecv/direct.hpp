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

// Hajek direct estimates of area prevalence and their design-based variances.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "saecv/survey.hpp"

namespace saecv {

/// Smallest logit-scale variance handed to area-level models.
inline constexpr double kLogitVarianceFloor = 1e-8;

enum class SingletonStrata {
  kZero,      // a stratum with one PSU contributes no variance (warned)
  kCollapse,  // singleton strata are merged pairwise in identifier order
};

struct DirectOptions {
  SingletonStrata singleton = SingletonStrata::kZero;
};

struct DirectEstimate {
  std::string area_id;
  bool present = false;  // false: no sampled units, every other field is meaningless
  double point = 0.0;
  double variance = 0.0;
  std::optional<double> logit_point;
  std::optional<double> logit_variance;
  bool variance_floored = false;
  std::size_t n_units = 0;
  std::size_t n_psus = 0;
};

struct LogitEstimate {
  std::optional<double> point;
  std::optional<double> variance;
  bool floored = false;
};

/// sum(w*y) / sum(w) over the area's units. Throws NoDataError for an empty area.
double hajek(const SurveyDataset& dataset, std::string_view area);

/// Stratified with-replacement ultimate-cluster linearization variance of the
/// Hajek ratio for one area (domain estimation: PSUs of other areas in the
/// same stratum enter with zero totals).
double design_variance(const SurveyDataset& dataset, std::string_view area,
                       const DirectOptions& options = {});

/// One entry per area of the universe, in identifier order; empty areas come
/// back with present = false.
std::vector<DirectEstimate> hajek_all(const SurveyDataset& dataset,
                                      const DirectOptions& options = {});

/// Delta-method logit transform; undefined at the boundary or at zero variance.
LogitEstimate logit_transform(double point, double variance);

const DirectEstimate* find_direct(const std::vector<DirectEstimate>& directs,
                                  std::string_view area);

void write_directs_csv(std::ostream& out, const std::vector<DirectEstimate>& directs);
nlohmann::json directs_to_json(const std::vector<DirectEstimate>& directs);

}  // namespace saecv
