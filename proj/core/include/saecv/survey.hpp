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

// Survey data model: unit records, the stratum/PSU/SSU design index, area
// aggregation weights and design-weight rescaling.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace saecv {

/// One sampled respondent.
struct UnitRecord {
  std::string unit_id;
  std::string stratum_id;
  std::string psu_id;   // cluster
  std::string ssu_id;   // household
  std::string area_id;
  double weight = 1.0;  // 1 / inclusion probability
  int y = 0;

  friend bool operator==(const UnitRecord&, const UnitRecord&) = default;
};

using Metadata = std::map<std::string, std::string>;

/// stratum -> PSU -> SSU -> row indices into SurveyDataset::units().
using DesignIndex =
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<std::size_t>>>>;

/// Immutable, validated survey sample.
///
/// Identifiers are opaque strings. Areas, strata and PSUs are also exposed as
/// dense integer codes assigned in lexicographic identifier order, which is
/// the order every computation iterates in. The area universe may contain
/// areas without sampled units (declared up front or left empty by a subset).
class SurveyDataset {
 public:
  SurveyDataset() = default;

  /// Validates and indexes `units`. `declared_areas` extends the area universe
  /// beyond the areas that actually have units.
  static SurveyDataset create(std::vector<UnitRecord> units,
                              const std::vector<std::string>& declared_areas = {},
                              Metadata metadata = {});

  const std::vector<UnitRecord>& units() const noexcept { return units_; }
  std::size_t size() const noexcept { return units_.size(); }
  bool empty() const noexcept { return units_.empty(); }
  const Metadata& metadata() const noexcept { return metadata_; }

  const std::vector<std::string>& area_ids() const noexcept { return areas_; }
  const std::vector<std::string>& stratum_ids() const noexcept { return strata_; }
  const std::vector<std::string>& psu_ids() const noexcept { return psus_; }
  std::size_t num_areas() const noexcept { return areas_.size(); }
  std::size_t num_strata() const noexcept { return strata_.size(); }
  std::size_t num_psus() const noexcept { return psus_.size(); }

  /// Code of an area id, or -1.
  int area_index(std::string_view area_id) const;

  int area_of(std::size_t row) const { return row_area_[row]; }
  int stratum_of(std::size_t row) const { return row_stratum_[row]; }
  int psu_of(std::size_t row) const { return row_psu_[row]; }
  int psu_area(int psu) const { return psu_area_[psu]; }
  int psu_stratum(int psu) const { return psu_stratum_[psu]; }

  const std::vector<std::size_t>& rows_in_area(int area) const { return area_rows_[area]; }
  const std::vector<std::size_t>& rows_in_psu(int psu) const { return psu_rows_[psu]; }
  /// PSU codes of one stratum, in identifier order.
  const std::vector<int>& psus_in_stratum(int stratum) const { return stratum_psus_[stratum]; }

  const DesignIndex& design_index() const noexcept { return design_; }

  /// Areas of the universe with no sampled units.
  std::vector<std::string> empty_areas() const;

  /// New dataset holding the given rows (in the given order) with the same
  /// area universe and metadata.
  SurveyDataset subset(const std::vector<std::size_t>& rows) const;

  /// Same units minus every unit of `area_id`; the area stays in the universe.
  SurveyDataset without_area(std::string_view area_id) const;

  friend bool operator==(const SurveyDataset& a, const SurveyDataset& b) {
    return a.units_ == b.units_ && a.areas_ == b.areas_;
  }

 private:
  std::vector<UnitRecord> units_;
  Metadata metadata_;
  std::vector<std::string> areas_, strata_, psus_;
  std::vector<int> row_area_, row_stratum_, row_psu_;
  std::vector<int> psu_area_, psu_stratum_;
  std::vector<std::vector<std::size_t>> area_rows_, psu_rows_;
  std::vector<std::vector<int>> stratum_psus_;
  DesignIndex design_;
};

/// Column names of the delimited survey table.
struct CsvColumns {
  std::string stratum = "stratum";
  std::string psu = "psu";
  std::string ssu = "ssu";
  std::string area = "area";
  std::string weight = "weight";
  std::string y = "y";
  /// Optional; when absent unit ids are "r<line number>".
  std::string unit = "unit";
  char delimiter = ',';
};

SurveyDataset load_survey(std::istream& in, const CsvColumns& columns = {});
SurveyDataset load_survey(const std::filesystem::path& path, const CsvColumns& columns = {});

/// Writes `stratum,psu,ssu,area,weight,y`, plus a trailing `unit` column when
/// `with_unit_ids` is set. Weights are printed with round-trip precision.
void export_survey(std::ostream& out, const SurveyDataset& dataset, bool with_unit_ids = false);
void export_survey(const std::filesystem::path& path, const SurveyDataset& dataset,
                   bool with_unit_ids = false);

/// Counts per stratum, PSU and area, plus the list of empty areas.
nlohmann::json validation_report(const SurveyDataset& dataset);

/// Aggregation weights q_i over areas; always sums to one.
struct AreaWeights {
  std::map<std::string, double> q;

  double at(const std::string& area) const;
  bool contains(const std::string& area) const { return q.count(area) > 0; }
  /// Keeps only `areas` and renormalizes. Throws DomainError if their total is 0.
  AreaWeights restricted_to(const std::vector<std::string>& areas) const;
  /// Throws DomainError unless q_i >= 0 and sum(q) = 1 within 1e-12.
  void validate() const;
};

enum class WeightMode { kEqual, kPopulation };

WeightMode parse_weight_mode(std::string_view name);

/// Equal mode: q_i = 1/M over the dataset's area universe. Population mode:
/// q_i = N_i / sum N, where pop_counts must cover every area with N_i > 0.
AreaWeights area_weights(WeightMode mode, const SurveyDataset& dataset,
                         const std::optional<std::map<std::string, double>>& pop_counts = std::nullopt);

/// Multiplies every design weight by `factor` (> 0).
SurveyDataset rescale_weights(const SurveyDataset& dataset, double factor);

}  // namespace saecv
