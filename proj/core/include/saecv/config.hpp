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

// Study configuration files (TOML or JSON) with strict key checking.
//
// Sections: [scenario] with [[scenario.areas]], [models.NAME], [cv],
// [survey] (input column mapping) and [output]. Unknown keys are errors whose
// message carries the file name and the dotted key path.

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "saecv/sim.hpp"
#include "saecv/survey.hpp"

namespace saecv {

struct OutputConfig {
  std::string dir = "out";
  bool plot_tables = true;  // long-format score/bound tables next to the reports
};

struct StudyConfig {
  ScenarioConfig scenario;  // models, comparisons and cv settings live here too
  CsvColumns columns;
  /// Optional area -> population count table for population weights outside
  /// the simulator; path relative to the config file.
  std::optional<std::filesystem::path> population_counts;
  OutputConfig output;
  bool has_areas = false;  // the document configures a synthetic population
};

/// Parses a config document already decoded to JSON. `origin` prefixes error
/// messages. Simulation-only checks (areas present, frame sizes) are applied
/// only when the document has a [scenario] section with areas.
StudyConfig parse_study_config(const nlohmann::json& doc, std::string_view origin = "config");

/// Reads a .toml or .json file (by extension; anything else is tried as TOML).
StudyConfig load_study_config(const std::filesystem::path& path);

/// TOML text to the equivalent JSON document.
nlohmann::json toml_to_json(std::string_view text, std::string_view origin = "config");

/// Two-column CSV `area,population`.
std::map<std::string, double> load_population_counts(const std::filesystem::path& path);

}  // namespace saecv
