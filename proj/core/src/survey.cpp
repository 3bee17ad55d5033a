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

#include "saecv/survey.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saecv/error.hpp"

namespace saecv {
namespace {

template <typename T>
std::vector<std::string> sorted_keys(const std::map<std::string, T>& m) {
  std::vector<std::string> out;
  out.reserve(m.size());
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

int code_of(const std::vector<std::string>& sorted, const std::string& id) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
  return static_cast<int>(it - sorted.begin());
}

std::vector<std::string> split_line(const std::string& line, char delim, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no);
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& text, std::string_view column, std::size_t line_no) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ParseError(fmt::format("column '{}': '{}' is not a number", column, text), line_no);
  }
  return value;
}

}  // namespace

SurveyDataset SurveyDataset::create(std::vector<UnitRecord> units,
                                    const std::vector<std::string>& declared_areas,
                                    Metadata metadata) {
  SurveyDataset ds;
  ds.metadata_ = std::move(metadata);

  std::map<std::string, int> areas, strata;
  std::map<std::string, std::pair<std::string, std::string>> psu_home;  // psu -> (stratum, area)
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& a : declared_areas) areas.emplace(a, 0);

  for (std::size_t r = 0; r < units.size(); ++r) {
    const UnitRecord& u = units[r];
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw DomainError(fmt::format("unit {} (row {}): weight must be positive and finite, got {}",
                                    u.unit_id, r, u.weight));
    }
    if (u.y != 0 && u.y != 1) {
      throw DomainError(fmt::format("unit {} (row {}): outcome must be 0 or 1, got {}", u.unit_id,
                                    r, u.y));
    }
    if (!seen.emplace(u.psu_id, u.ssu_id, u.unit_id).second) {
      throw ConsistencyError(fmt::format("duplicate unit (psu={}, ssu={}, unit={})", u.psu_id,
                                         u.ssu_id, u.unit_id));
    }
    auto [it, inserted] = psu_home.emplace(u.psu_id, std::make_pair(u.stratum_id, u.area_id));
    if (!inserted) {
      if (it->second.second != u.area_id) {
        throw ConsistencyError(fmt::format("cluster '{}' straddles areas '{}' and '{}'", u.psu_id,
                                           it->second.second, u.area_id));
      }
      if (it->second.first != u.stratum_id) {
        throw ConsistencyError(fmt::format("cluster '{}' straddles strata '{}' and '{}'",
                                           u.psu_id, it->second.first, u.stratum_id));
      }
    }
    areas.emplace(u.area_id, 0);
    strata.emplace(u.stratum_id, 0);
  }

  ds.areas_ = sorted_keys(areas);
  ds.strata_ = sorted_keys(strata);
  ds.psus_ = sorted_keys(psu_home);

  const std::size_t n = units.size();
  ds.row_area_.resize(n);
  ds.row_stratum_.resize(n);
  ds.row_psu_.resize(n);
  ds.area_rows_.assign(ds.areas_.size(), {});
  ds.psu_rows_.assign(ds.psus_.size(), {});
  ds.stratum_psus_.assign(ds.strata_.size(), {});
  ds.psu_area_.resize(ds.psus_.size());
  ds.psu_stratum_.resize(ds.psus_.size());

  for (std::size_t c = 0; c < ds.psus_.size(); ++c) {
    const auto& [stratum, area] = psu_home.at(ds.psus_[c]);
    ds.psu_area_[c] = code_of(ds.areas_, area);
    ds.psu_stratum_[c] = code_of(ds.strata_, stratum);
    ds.stratum_psus_[ds.psu_stratum_[c]].push_back(static_cast<int>(c));
  }
  for (std::size_t r = 0; r < n; ++r) {
    const UnitRecord& u = units[r];
    const int c = code_of(ds.psus_, u.psu_id);
    ds.row_psu_[r] = c;
    ds.row_area_[r] = ds.psu_area_[c];
    ds.row_stratum_[r] = ds.psu_stratum_[c];
    ds.area_rows_[ds.row_area_[r]].push_back(r);
    ds.psu_rows_[c].push_back(r);
    ds.design_[u.stratum_id][u.psu_id][u.ssu_id].push_back(r);
  }
  ds.units_ = std::move(units);
  return ds;
}

int SurveyDataset::area_index(std::string_view area_id) const {
  auto it = std::lower_bound(areas_.begin(), areas_.end(), area_id);
  if (it == areas_.end() || *it != area_id) return -1;
  return static_cast<int>(it - areas_.begin());
}

std::vector<std::string> SurveyDataset::empty_areas() const {
  std::vector<std::string> out;
  for (std::size_t a = 0; a < areas_.size(); ++a) {
    if (area_rows_[a].empty()) out.push_back(areas_[a]);
  }
  return out;
}

SurveyDataset SurveyDataset::subset(const std::vector<std::size_t>& rows) const {
  std::vector<UnitRecord> picked;
  picked.reserve(rows.size());
  for (std::size_t r : rows) picked.push_back(units_.at(r));
  return create(std::move(picked), areas_, metadata_);
}

SurveyDataset SurveyDataset::without_area(std::string_view area_id) const {
  std::vector<std::size_t> rows;
  rows.reserve(units_.size());
  for (std::size_t r = 0; r < units_.size(); ++r) {
    if (units_[r].area_id != area_id) rows.push_back(r);
  }
  return subset(rows);
}

SurveyDataset load_survey(std::istream& in, const CsvColumns& columns) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (!trim(line).empty()) {
      header = split_line(line, columns.delimiter, line_no);
      break;
    }
  }
  if (header.empty()) throw ParseError("missing header row");
  for (auto& h : header) h = trim(h);

  auto find_col = [&](const std::string& name, bool required) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required) throw ParseError(fmt::format("missing required column '{}'", name), line_no);
      return -1;
    }
    return static_cast<int>(it - header.begin());
  };
  const int c_stratum = find_col(columns.stratum, true);
  const int c_psu = find_col(columns.psu, true);
  const int c_ssu = find_col(columns.ssu, true);
  const int c_area = find_col(columns.area, true);
  const int c_weight = find_col(columns.weight, true);
  const int c_y = find_col(columns.y, true);
  const int c_unit = find_col(columns.unit, false);

  std::vector<UnitRecord> units;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_line(line, columns.delimiter, line_no);
    if (fields.size() != header.size()) {
      throw ParseError(
          fmt::format("expected {} fields, found {}", header.size(), fields.size()), line_no);
    }
    for (auto& f : fields) f = trim(f);
    UnitRecord u;
    u.stratum_id = fields[c_stratum];
    u.psu_id = fields[c_psu];
    u.ssu_id = fields[c_ssu];
    u.area_id = fields[c_area];
    u.unit_id = c_unit >= 0 ? fields[c_unit] : "r" + std::to_string(line_no);
    if (u.stratum_id.empty() || u.psu_id.empty() || u.ssu_id.empty() || u.area_id.empty()) {
      throw ParseError("empty identifier field", line_no);
    }
    u.weight = parse_double(fields[c_weight], columns.weight, line_no);
    const double y = parse_double(fields[c_y], columns.y, line_no);
    if (y != 0.0 && y != 1.0) {
      throw DomainError(fmt::format("line {}: outcome must be 0 or 1, got {}", line_no,
                                    fields[c_y]));
    }
    u.y = static_cast<int>(y);
    if (!(u.weight > 0.0) || !std::isfinite(u.weight)) {
      throw DomainError(fmt::format("line {}: weight must be positive and finite, got {}", line_no,
                                    fields[c_weight]));
    }
    units.push_back(std::move(u));
  }

  auto ds = SurveyDataset::create(std::move(units));
  for (const auto& a : ds.empty_areas()) spdlog::warn("area '{}' has no sampled units", a);
  return ds;
}

SurveyDataset load_survey(const std::filesystem::path& path, const CsvColumns& columns) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open survey file '{}'", path.string()));
  return load_survey(in, columns);
}

void export_survey(std::ostream& out, const SurveyDataset& dataset, bool with_unit_ids) {
  out << "stratum,psu,ssu,area,weight,y" << (with_unit_ids ? ",unit" : "") << '\n';
  for (const auto& u : dataset.units()) {
    out << u.stratum_id << ',' << u.psu_id << ',' << u.ssu_id << ',' << u.area_id << ','
        << fmt::format("{}", u.weight) << ',' << u.y;
    if (with_unit_ids) out << ',' << u.unit_id;
    out << '\n';
  }
}

void export_survey(const std::filesystem::path& path, const SurveyDataset& dataset,
                   bool with_unit_ids) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  export_survey(out, dataset, with_unit_ids);
}

nlohmann::json validation_report(const SurveyDataset& ds) {
  using nlohmann::json;
  json strata = json::object(), areas = json::object(), psus = json::object();
  for (std::size_t h = 0; h < ds.num_strata(); ++h) {
    std::size_t units = 0;
    for (int c : ds.psus_in_stratum(static_cast<int>(h))) units += ds.rows_in_psu(c).size();
    strata[ds.stratum_ids()[h]] = {{"psus", ds.psus_in_stratum(static_cast<int>(h)).size()},
                                   {"units", units}};
  }
  std::vector<std::size_t> area_psus(ds.num_areas(), 0);
  for (std::size_t c = 0; c < ds.num_psus(); ++c) {
    const int ci = static_cast<int>(c);
    ++area_psus[ds.psu_area(ci)];
    const auto& ssus = ds.design_index()
                           .at(ds.stratum_ids()[ds.psu_stratum(ci)])
                           .at(ds.psu_ids()[c]);
    psus[ds.psu_ids()[c]] = {{"stratum", ds.stratum_ids()[ds.psu_stratum(ci)]},
                             {"area", ds.area_ids()[ds.psu_area(ci)]},
                             {"ssus", ssus.size()},
                             {"units", ds.rows_in_psu(ci).size()}};
  }
  for (std::size_t a = 0; a < ds.num_areas(); ++a) {
    double wsum = 0.0;
    for (std::size_t r : ds.rows_in_area(static_cast<int>(a))) wsum += ds.units()[r].weight;
    areas[ds.area_ids()[a]] = {{"psus", area_psus[a]},
                               {"units", ds.rows_in_area(static_cast<int>(a)).size()},
                               {"weight_total", wsum}};
  }
  return json{{"n_units", ds.size()},       {"n_strata", ds.num_strata()},
              {"n_psus", ds.num_psus()},     {"n_areas", ds.num_areas()},
              {"empty_areas", ds.empty_areas()}, {"strata", strata},
              {"psus", psus},                {"areas", areas}};
}

double AreaWeights::at(const std::string& area) const {
  auto it = q.find(area);
  if (it == q.end()) throw DomainError(fmt::format("no aggregation weight for area '{}'", area));
  return it->second;
}

AreaWeights AreaWeights::restricted_to(const std::vector<std::string>& areas) const {
  AreaWeights out;
  double total = 0.0;
  for (const auto& a : areas) total += at(a);
  if (!(total > 0.0)) throw DomainError("aggregation weights of the retained areas sum to zero");
  for (const auto& a : areas) out.q[a] = at(a) / total;
  return out;
}

void AreaWeights::validate() const {
  double total = 0.0;
  for (const auto& [a, v] : q) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DomainError(fmt::format("aggregation weight for '{}' is {}", a, v));
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw DomainError(fmt::format("aggregation weights sum to {:.17g}, not 1", total));
  }
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "equal") return WeightMode::kEqual;
  if (name == "population") return WeightMode::kPopulation;
  throw ConfigError(fmt::format("unknown aggregation weight mode '{}' (equal|population)", name));
}

AreaWeights area_weights(WeightMode mode, const SurveyDataset& dataset,
                         const std::optional<std::map<std::string, double>>& pop_counts) {
  AreaWeights w;
  const auto& areas = dataset.area_ids();
  if (areas.empty()) throw DomainError("dataset has no areas");
  if (mode == WeightMode::kEqual) {
    for (const auto& a : areas) w.q[a] = 1.0 / static_cast<double>(areas.size());
    return w;
  }
  if (!pop_counts) throw DomainError("population weights need population counts");
  double total = 0.0;
  for (const auto& a : areas) {
    auto it = pop_counts->find(a);
    if (it == pop_counts->end()) {
      throw DomainError(fmt::format("population counts missing area '{}'", a));
    }
    if (!(it->second > 0.0) || !std::isfinite(it->second)) {
      throw DomainError(fmt::format("population count for area '{}' must be positive", a));
    }
    total += it->second;
  }
  for (const auto& a : areas) w.q[a] = pop_counts->at(a) / total;
  return w;
}

SurveyDataset rescale_weights(const SurveyDataset& dataset, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw DomainError(fmt::format("weight rescaling factor must be positive, got {}", factor));
  }
  std::vector<UnitRecord> units = dataset.units();
  for (auto& u : units) u.weight *= factor;
  return SurveyDataset::create(std::move(units), dataset.area_ids(), dataset.metadata());
}

}  // namespace saecv
