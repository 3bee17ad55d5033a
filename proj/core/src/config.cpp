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

#include "saecv/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "saecv/error.hpp"

namespace saecv {
namespace {

using nlohmann::json;

// One JSON object read with key bookkeeping; finish() rejects whatever the
// caller never asked for.
class Section {
 public:
  Section(const json& obj, std::string path, std::string_view origin)
      : obj_(obj), path_(std::move(path)), origin_(origin) {
    if (!obj_.is_object()) fail("", "expected a table");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!obj_.contains(key)) return fallback;
    return read<T>(key);
  }

  template <typename T>
  std::optional<T> optional(const std::string& key) {
    if (!obj_.contains(key)) return std::nullopt;
    return read<T>(key);
  }

  template <typename T>
  T required(const std::string& key) {
    if (!obj_.contains(key)) fail(key, "required key missing");
    return read<T>(key);
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(obj_.at(key), join(key), origin_);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return obj_.at(key);
  }

  const json& object() const { return obj_; }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(fmt::format("{}: {}: {}", origin_, key.empty() ? path_ : join(key), what));
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) fail(key, "unknown key");
    }
  }

 private:
  template <typename T>
  T read(const std::string& key) {
    used_.insert(key);
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) fail(key, "expected a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) fail(key, "expected a string");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(key, "expected a number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) fail(key, "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
            fail(key, "expected a non-negative integer");
        } else {
          const auto x = v.get<std::int64_t>();
          if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
            fail(key, "integer out of range");
        }
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      fail(key, e.what());
    }
  }

  const json& obj_;
  std::string path_;
  std::string_view origin_;
  std::set<std::string> used_;
};

template <typename F>
auto wrap(const Section& s, const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    s.fail(key, e.what());
  } catch (const DomainError& e) {
    s.fail(key, e.what());
  }
}

ModelSpec parse_model(Section s, const std::string& name) {
  ModelSpec m;
  m.name = name;
  m.family = wrap(s, "family", [&] { return parse_family(s.required<std::string>("family")); });
  const double U = s.get<double>("U", 1.0);
  const double alpha = s.get<double>("alpha", 0.01);
  m.sigma_prior = wrap(s, "U", [&] { return PCPrior::make(U, alpha); });
  m.logit_d_prior.mean = s.get<double>("logit_d_mean", m.logit_d_prior.mean);
  m.logit_d_prior.sd = s.get<double>("logit_d_sd", m.logit_d_prior.sd);
  m.alpha_prior_sd = s.get<double>("alpha_prior_sd", m.alpha_prior_sd);
  m.grid.sigma_nodes = s.get<int>("sigma_nodes", m.grid.sigma_nodes);
  m.grid.d_nodes = s.get<int>("d_nodes", m.grid.d_nodes);
  m.grid.pilot_nodes = s.get<int>("pilot_nodes", m.grid.pilot_nodes);
  m.grid.logit_d_min = s.get<double>("logit_d_min", m.grid.logit_d_min);
  m.grid.logit_d_max = s.get<double>("logit_d_max", m.grid.logit_d_max);
  m.grid.log_density_drop = s.get<double>("log_density_drop", m.grid.log_density_drop);
  const auto summary = s.get<std::string>("summary", "quadrature");
  if (summary == "quadrature") {
    m.summary = SummaryMethod::kQuadrature;
  } else if (summary == "monte-carlo" || summary == "mc") {
    m.summary = SummaryMethod::kMonteCarlo;
  } else {
    s.fail("summary", fmt::format("unknown summary method '{}' (quadrature|monte-carlo)", summary));
  }
  m.mc.samples = s.get<int>("mc_samples", m.mc.samples);
  m.fixed_sigma = s.optional<double>("fixed_sigma");
  m.fixed_d = s.optional<double>("fixed_d");
  s.finish();
  try {
    m.validate();
  } catch (const ConfigError& e) {
    s.fail("", e.what());
  }
  return m;
}

AreaConfig parse_area(Section s) {
  AreaConfig a;
  a.area_id = s.required<std::string>("id");
  a.stratum_id = s.get<std::string>("stratum", a.area_id);
  a.prevalence = s.required<double>("prevalence");
  a.subarea_prevalences = s.get<std::vector<double>>("subarea_prevalences", {});
  a.frame_clusters = s.get<int>("frame_clusters", a.frame_clusters);
  a.size_min = s.get<int>("size_min", a.size_min);
  a.size_max = s.get<int>("size_max", a.size_max);
  s.finish();
  return a;
}

}  // namespace

json toml_to_json(std::string_view text, std::string_view origin) {
  toml::table table;
  try {
    table = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw ConfigError(fmt::format("{}:{}:{}: {}", origin, where.line, where.column, e.description()));
  }
  std::ostringstream os;
  os << toml::json_formatter{table};
  return json::parse(os.str());
}

StudyConfig parse_study_config(const json& doc, std::string_view origin) {
  StudyConfig out;
  Section root(doc, "", origin);
  ScenarioConfig& sc = out.scenario;

  if (root.has("scenario")) {
    Section s = root.child("scenario");
    sc.master_seed = s.get<std::uint64_t>("master_seed", sc.master_seed);
    sc.replicates = s.get<int>("replicates", sc.replicates);
    sc.clusters_per_stratum = s.get<int>("clusters_per_stratum", sc.clusters_per_stratum);
    sc.households_per_cluster = s.get<int>("households_per_cluster", sc.households_per_cluster);
    sc.d_pop = s.get<double>("d_pop", sc.d_pop);
    sc.run_loao = s.get<bool>("loao", sc.run_loao);
    const auto singleton = s.get<std::string>("singleton_strata", "zero");
    if (singleton == "zero") {
      sc.direct.singleton = SingletonStrata::kZero;
    } else if (singleton == "collapse") {
      sc.direct.singleton = SingletonStrata::kCollapse;
    } else {
      s.fail("singleton_strata", fmt::format("unknown policy '{}' (zero|collapse)", singleton));
    }
    if (s.has("areas")) {
      const json& areas = s.raw("areas");
      if (!areas.is_array()) s.fail("areas", "expected an array of tables");
      for (std::size_t i = 0; i < areas.size(); ++i)
        sc.areas.push_back(parse_area(Section(areas[i], fmt::format("scenario.areas[{}]", i), origin)));
      out.has_areas = !sc.areas.empty();
    }
    s.finish();
  }

  if (root.has("models")) {
    Section ms = root.child("models");
    for (const auto& [name, body] : ms.object().items()) {
      Section m = ms.child(name);
      sc.models.push_back(parse_model(m, name));
    }
    ms.finish();
  }

  if (root.has("cv")) {
    Section s = root.child("cv");
    sc.cv.scheme = wrap(s, "scheme", [&] { return parse_scheme(s.get<std::string>("scheme", "ssu")); });
    sc.cv.K = s.get<int>("k", sc.cv.K);
    sc.cv.resplits = s.get<int>("resplits", sc.cv.resplits);
    const auto unit = s.get<std::string>("resplit_unit", "ssu");
    if (unit == "ssu") {
      sc.cv.resplit_unit = SplitUnit::kSsu;
    } else if (unit == "psu") {
      sc.cv.resplit_unit = SplitUnit::kPsu;
    } else {
      s.fail("resplit_unit", fmt::format("unknown unit '{}' (ssu|psu)", unit));
    }
    sc.cv.missing = wrap(s, "missing_folds",
                         [&] { return parse_missing_folds(s.get<std::string>("missing_folds", "drop")); });
    sc.q_mode = wrap(s, "q", [&] { return parse_weight_mode(s.get<std::string>("q", "population")); });
    if (s.has("population_counts"))
      out.population_counts = s.get<std::string>("population_counts", "");
    if (s.has("compare")) {
      const json& pairs = s.raw("compare");
      if (!pairs.is_array()) s.fail("compare", "expected an array of [model_a, model_b] pairs");
      for (const auto& p : pairs) {
        if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
          s.fail("compare", "each entry must be a pair of model names");
        sc.comparisons.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
    s.finish();
  }

  if (root.has("survey")) {
    Section s = root.child("survey");
    CsvColumns& c = out.columns;
    c.stratum = s.get<std::string>("stratum", c.stratum);
    c.psu = s.get<std::string>("psu", c.psu);
    c.ssu = s.get<std::string>("ssu", c.ssu);
    c.area = s.get<std::string>("area", c.area);
    c.weight = s.get<std::string>("weight", c.weight);
    c.y = s.get<std::string>("y", c.y);
    c.unit = s.get<std::string>("unit", c.unit);
    const auto delim = s.get<std::string>("delimiter", ",");
    if (delim.size() != 1) s.fail("delimiter", "expected a single character");
    c.delimiter = delim[0];
    s.finish();
  }

  if (root.has("output")) {
    Section s = root.child("output");
    out.output.dir = s.get<std::string>("dir", out.output.dir);
    out.output.plot_tables = s.get<bool>("plot_tables", out.output.plot_tables);
    s.finish();
  }
  root.finish();

  std::set<std::string> names;
  for (const auto& m : sc.models) names.insert(m.name);
  for (const auto& [a, b] : sc.comparisons) {
    for (const auto& n : {a, b}) {
      if (!names.count(n))
        throw ConfigError(fmt::format("{}: cv.compare: model '{}' is not defined", origin, n));
    }
  }
  if (out.has_areas) {
    try {
      sc.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: {}", origin, e.what()));
    }
  }
  return out;
}

StudyConfig load_study_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("{}: cannot open config file", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string origin = path.string();
  json doc;
  if (path.extension() == ".json") {
    try {
      doc = json::parse(buf.str());
    } catch (const json::parse_error& e) {
      throw ConfigError(fmt::format("{}: {}", origin, e.what()));
    }
  } else {
    doc = toml_to_json(buf.str(), origin);
  }
  StudyConfig cfg = parse_study_config(doc, origin);
  if (cfg.population_counts && cfg.population_counts->is_relative())
    cfg.population_counts = path.parent_path() / *cfg.population_counts;
  return cfg;
}

std::map<std::string, double> load_population_counts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("{}: cannot open population counts", path.string()));
  std::map<std::string, double> counts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ParseError(fmt::format("{}: expected 'area,population'", path.string()), lineno);
    const std::string area = line.substr(0, comma), value = line.substr(comma + 1);
    if (lineno == 1 && area == "area") continue;
    double n = 0.0;
    try {
      std::size_t used = 0;
      n = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw ParseError(fmt::format("{}: bad population count '{}'", path.string(), value), lineno);
    }
    if (!counts.emplace(area, n).second)
      throw ParseError(fmt::format("{}: duplicate area '{}'", path.string(), area), lineno);
  }
  return counts;
}

}  // namespace saecv
