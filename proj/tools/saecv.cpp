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

// saecv: simulate populations, draw surveys, fit and compare small area
// estimators, run replicate studies and render their reports.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration
// error, 3 input/output error, 4 estimation failure.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "saecv/config.hpp"
#include "saecv/cv.hpp"
#include "saecv/direct.hpp"
#include "saecv/error.hpp"
#include "saecv/models.hpp"
#include "saecv/rng.hpp"
#include "saecv/sim.hpp"
#include "saecv/survey.hpp"

namespace fs = std::filesystem;
using namespace saecv;
using nlohmann::json;

namespace {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kIo = 3, kEstimation = 4 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::optional<std::string> scheme;
  std::optional<int> k;
  std::optional<int> resplits;
  std::optional<std::string> q;
};

struct Args {
  std::string config;
  std::string out;
  std::string input;
  std::string model;
  int replicate = 0;
  Overrides over;
};

void apply(StudyConfig& cfg, const Overrides& o) {
  auto& sc = cfg.scenario;
  if (o.seed) sc.master_seed = *o.seed;
  if (o.scheme) sc.cv.scheme = parse_scheme(*o.scheme);
  if (o.k) sc.cv.K = *o.k;
  if (o.resplits) sc.cv.resplits = *o.resplits;
  if (o.q) sc.q_mode = parse_weight_mode(*o.q);
  if (sc.cv.scheme != Scheme::kTwoFold && sc.cv.K < 2) throw ConfigError("--k must be at least 2");
  if (sc.cv.scheme == Scheme::kTwoFold && sc.cv.resplits < 1)
    throw ConfigError("--resplits must be at least 1");
}

StudyConfig load(const Args& a) {
  StudyConfig cfg = load_study_config(a.config);
  apply(cfg, a.over);
  return cfg;
}

fs::path out_dir(const Args& a, const StudyConfig& cfg) {
  fs::path dir = a.out.empty() ? fs::path(cfg.output.dir) : fs::path(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("{}: cannot create directory: {}", dir.string(), ec.message()));
  return dir;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot open for writing", path.string()));
  writer(out);
  out.flush();
  if (!out) throw IoError(fmt::format("{}: write failed", path.string()));
  spdlog::info("wrote {}", path.string());
}

void write_json(const fs::path& path, const json& j) {
  write_file(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

SurveyDataset read_survey(const Args& a, const StudyConfig& cfg) {
  if (a.input.empty()) throw ConfigError("--input survey file is required");
  if (!fs::exists(a.input)) throw IoError(fmt::format("{}: no such file", a.input));
  return load_survey(fs::path(a.input), cfg.columns);
}

AreaWeights survey_weights(const StudyConfig& cfg, const SurveyDataset& ds) {
  if (cfg.scenario.q_mode == WeightMode::kEqual) return area_weights(WeightMode::kEqual, ds);
  std::map<std::string, double> counts;
  if (cfg.population_counts) {
    counts = load_population_counts(*cfg.population_counts);
  } else {
    // Without a census table the weighted sample size estimates N_i.
    spdlog::warn("population weights without cv.population_counts: using design-weight totals");
    for (const auto& u : ds.units()) counts[u.area_id] += u.weight;
    for (const auto& area : ds.empty_areas()) {
      spdlog::warn("area '{}' has no sampled units and gets zero weight", area);
      counts[area] = 0.0;
    }
  }
  return area_weights(WeightMode::kPopulation, ds, counts);
}

std::string pair_stem(const std::string& a, const std::string& b) {
  return fmt::format("{}_vs_{}", a, b);
}

int cmd_simulate(const Args& a) {
  const StudyConfig cfg = load(a);
  if (!cfg.has_areas) throw ConfigError(fmt::format("{}: scenario.areas: none configured", a.config));
  const auto& sc = cfg.scenario;
  const fs::path dir = out_dir(a, cfg);
  const Frame frame = build_frame(sc, derive_seed(sc.master_seed, "frame"));
  const SyntheticPopulation pop =
      generate_population(frame, sc, derive_seed(sc.master_seed, "population"));
  write_file(dir / "frame.csv", [&](std::ostream& os) { write_frame_csv(os, frame); });
  write_file(dir / "population.csv", [&](std::ostream& os) { write_population_csv(os, pop); });
  write_file(dir / "truth.csv", [&](std::ostream& os) { write_truth_csv(os, pop); });
  json info;
  info["master_seed"] = sc.master_seed;
  info["areas"] = sc.areas.size();
  info["frame_clusters"] = frame.clusters.size();
  info["d_pop"] = sc.d_pop;
  info["truth"] = pop.truth;
  info["population"] = pop.population;
  write_json(dir / "population.json", info);
  return kOk;
}

int cmd_survey(const Args& a) {
  const StudyConfig cfg = load(a);
  const fs::path dir = out_dir(a, cfg);
  SurveyDataset ds;
  if (!a.input.empty()) {
    ds = read_survey(a, cfg);
  } else {
    if (!cfg.has_areas)
      throw ConfigError(fmt::format("{}: scenario.areas: none configured and no --input", a.config));
    const auto& sc = cfg.scenario;
    const Frame frame = build_frame(sc, derive_seed(sc.master_seed, "frame"));
    const SyntheticPopulation pop =
        generate_population(frame, sc, derive_seed(sc.master_seed, "population"));
    // Same stream as replicate `a.replicate` of a study under this seed.
    const auto rep = derive_seed(sc.master_seed, "replicate", static_cast<std::uint64_t>(a.replicate));
    std::vector<std::string> warnings;
    ds = draw_survey(pop, sc, derive_seed(rep, "survey"), &warnings);
    for (const auto& w : warnings) spdlog::warn("{}", w);
    write_file(dir / "survey.csv", [&](std::ostream& os) { export_survey(os, ds, true); });
  }
  const auto directs = hajek_all(ds, cfg.scenario.direct);
  write_file(dir / "directs.csv", [&](std::ostream& os) { write_directs_csv(os, directs); });
  write_json(dir / "validation.json", validation_report(ds));
  return kOk;
}

int cmd_fit(const Args& a) {
  const StudyConfig cfg = load(a);
  const SurveyDataset ds = read_survey(a, cfg);
  const fs::path dir = out_dir(a, cfg);
  std::vector<ModelSpec> specs;
  if (a.model.empty()) {
    specs = cfg.scenario.models;
  } else {
    specs.push_back(cfg.scenario.model(a.model));
  }
  if (specs.empty()) throw ConfigError(fmt::format("{}: models: none configured", a.config));
  for (const auto& spec : specs) {
    spdlog::info("fitting {} ({})", spec.name, family_name(spec.family));
    const auto fit = fit_model(ds, spec, derive_seed(cfg.scenario.master_seed, spec.name),
                               cfg.scenario.direct);
    write_file(dir / fmt::format("estimates_{}.csv", spec.name),
               [&](std::ostream& os) { write_estimates_csv(os, fit); });
    write_json(dir / fmt::format("hyper_{}.json", spec.name), hyper_to_json(fit));
  }
  return kOk;
}

void write_score_table(std::ostream& os, const Comparison& c, const AreaWeights& q) {
  const Verdict& v = c.verdict;
  os << "model_a,model_b,level,area,q,score_diff,t,naive_diff,t_naive,decision,naive_decision\n";
  os << fmt::format("{},{},aggregate,,1,{},{},{},{},{},{}\n", v.model_a, v.model_b, v.difference,
                    v.threshold, v.naive_difference, v.naive_threshold,
                    decision_name(v.decision), decision_name(v.naive_decision));
  for (const auto& r : v.per_area) {
    os << fmt::format("{},{},area,{},{},{},{},{},{},{},{}\n", v.model_a, v.model_b, r.area_id,
                      q.contains(r.area_id) ? q.at(r.area_id) : 0.0, r.difference, r.t,
                      r.naive_difference, r.t_naive, decision_name(r.decision),
                      decision_name(r.naive_decision));
  }
}

int cmd_compare(const Args& a) {
  const StudyConfig cfg = load(a);
  const auto& sc = cfg.scenario;
  if (sc.comparisons.empty()) throw ConfigError(fmt::format("{}: cv.compare: no model pairs", a.config));
  const SurveyDataset ds = read_survey(a, cfg);
  const fs::path dir = out_dir(a, cfg);
  const AreaWeights q = survey_weights(cfg, ds);
  CvOptions opts;
  opts.missing = sc.cv.missing;
  opts.direct = sc.direct;
  opts.jobs = a.over.jobs;
  json all = json::array();
  for (const auto& [na, nb] : sc.comparisons) {
    spdlog::info("comparing {} and {} ({} scheme)", na, nb, scheme_name(sc.cv.scheme));
    const Comparison c =
        compare_models(ds, sc.model(na), sc.model(nb), sc.cv, q, sc.master_seed, opts);
    const Verdict& v = c.verdict;
    spdlog::info("{} - {}: difference {:.4g}, threshold {:.4g}: {}", na, nb, v.difference,
                 v.threshold, v.preferred());
    const std::string stem = pair_stem(na, nb);
    json j = verdict_to_json(v);
    write_json(dir / fmt::format("verdict_{}.json", stem), j);
    write_file(dir / fmt::format("verdict_{}.csv", stem),
               [&](std::ostream& os) { write_verdict_csv(os, c); });
    if (cfg.output.plot_tables)
      write_file(dir / fmt::format("scores_{}.csv", stem),
                 [&](std::ostream& os) { write_score_table(os, c, c.cv.q); });
    all.push_back(std::move(j));
  }
  write_json(dir / "verdicts.json", all);
  return kOk;
}

int cmd_study(const Args& a) {
  const StudyConfig cfg = load(a);
  if (!cfg.has_areas) throw ConfigError(fmt::format("{}: scenario.areas: none configured", a.config));
  const fs::path dir = out_dir(a, cfg);
  StudyOptions opts;
  opts.jobs = a.over.jobs;
  std::atomic<int> done{0};
  const int total = cfg.scenario.replicates;
  opts.progress = [&](const ReplicateResult& r) {
    const int n = ++done;
    if (r.ok) {
      spdlog::info("replicate {} finished ({}/{})", r.index, n, total);
    } else {
      spdlog::warn("replicate {} failed ({}/{}): {}", r.index, n, total, r.error);
    }
  };
  spdlog::info("study: {} replicates, {} models, {} comparisons, {} jobs", total,
               cfg.scenario.models.size(), cfg.scenario.comparisons.size(), opts.jobs);
  const StudyResult study = run_study(cfg.scenario, opts);
  write_study_outputs(study, dir);
  spdlog::info("wrote replicates.csv, models.csv, areas.csv and summary.json to {}", dir.string());
  return kOk;
}

std::string pct(const json& j, const char* key) {
  return j.contains(key) && j[key].is_number() ? fmt::format("{:.0f}%", 100.0 * j[key].get<double>())
                                               : "NA";
}

int cmd_report(const Args& a) {
  const fs::path in = a.input.empty() ? fs::path(a.out) : fs::path(a.input);
  const fs::path summary_path = fs::is_directory(in) ? in / "summary.json" : in;
  std::ifstream f(summary_path);
  if (!f) throw IoError(fmt::format("{}: cannot open study summary", summary_path.string()));
  json s;
  try {
    s = json::parse(f);
  } catch (const json::parse_error& e) {
    throw IoError(fmt::format("{}: {}", summary_path.string(), e.what()));
  }
  std::ostringstream md;
  md << "# Study report\n\n";
  if (s.contains("scenario")) md << "Scenario: `" << s["scenario"].dump() << "`\n\n";
  md << "## Models\n\n| model | oracle full | oracle training | naive | adjusted | LOAO |\n"
        "|---|---|---|---|---|---|\n";
  const json models = s.value("models", json::object());
  const json comparisons = s.value("comparisons", json::array());
  for (const auto& [name, m] : models.items()) {
    auto g = [&](const char* k) {
      return m.contains(k) && m[k].is_number() ? fmt::format("{:.4g}", m[k].get<double>())
                                               : std::string("NA");
    };
    md << fmt::format("| {} | {} | {} | {} | {} | {} |\n", name, g("mean_oracle_full"),
                      g("mean_oracle_training"), g("mean_naive"), g("mean_adjusted"), g("mean_loao"));
  }
  md << "\n## Comparisons\n\n| pair | conclusive | prefer a | prefer b | sign matches training oracle"
        " | naive conclusive | LOAO prefers a | LOAO prefers b |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : comparisons) {
    md << fmt::format("| {} - {} | {} | {} | {} | {} | {} | {} | {} |\n", c.value("model_a", "?"),
                      c.value("model_b", "?"), pct(c, "fraction_conclusive"),
                      pct(c, "fraction_prefer_a"), pct(c, "fraction_prefer_b"),
                      pct(c, "fraction_correct_sign_training"), pct(c, "fraction_naive_conclusive"),
                      pct(c, "fraction_loao_prefer_a"), pct(c, "fraction_loao_prefer_b"));
  }
  for (const auto& c : comparisons) {
    if (!c.contains("remainder_bound")) continue;
    const auto& rb = c["remainder_bound"];
    md << fmt::format("\nRemainder bound, {} - {}: {} areas above the median bound, {} above the "
                      "largest.\n",
                      c.value("model_a", "?"), c.value("model_b", "?"),
                      rb.value("median_violations", -1), rb.value("max_violations", -1));
  }
  if (s.contains("loao_gap")) {
    md << "\n## Extrapolation minus smoothing error\n\n| model | weighted gap |\n|---|---|\n";
    for (const auto& [name, g] : s["loao_gap"].items())
      md << fmt::format("| {} | {:.4g} |\n", name, g.value("weighted_gap", 0.0));
  }
  const fs::path dir = a.out.empty() ? summary_path.parent_path() : fs::path(a.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  write_file(dir / "report.md", [&](std::ostream& os) { os << md.str(); });
  return kOk;
}

void add_common(CLI::App* sub, Args& a, bool needs_config = true) {
  auto* c = sub->add_option("-c,--config", a.config, "study configuration (TOML or JSON)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  sub->add_option("-o,--out", a.out, "output directory (default: output.dir of the config)");
  sub->add_option("--seed", a.over.seed, "master seed, overrides scenario.master_seed");
  sub->add_option("-j,--jobs", a.over.jobs, "worker threads")->check(CLI::PositiveNumber);
}

void add_cv(CLI::App* sub, Args& a) {
  sub->add_option("--scheme", a.over.scheme, "fold scheme: ssu|psu|twofold");
  sub->add_option("--k", a.over.k, "number of folds");
  sub->add_option("--resplits", a.over.resplits, "two-fold repeats");
  sub->add_option("--q", a.over.q, "aggregation weights: equal|population");
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("saecv");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");

  CLI::App app{"Design-preserving cross-validation for small area estimation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");
  Args args;

  auto* simulate = app.add_subcommand("simulate", "generate a frame and finite population");
  add_common(simulate, args);
  auto* survey = app.add_subcommand("survey", "draw a replicate survey, or validate --input");
  add_common(survey, args);
  survey->add_option("-i,--input", args.input, "existing survey CSV to validate");
  survey->add_option("--replicate", args.replicate, "replicate index whose survey to draw")
      ->check(CLI::NonNegativeNumber);
  auto* fit = app.add_subcommand("fit", "fit models on a survey");
  add_common(fit, args);
  fit->add_option("-i,--input", args.input, "survey CSV")->required();
  fit->add_option("-m,--model", args.model, "model name (default: every configured model)");
  auto* compare = app.add_subcommand("compare", "cross-validated comparison of model pairs");
  add_common(compare, args);
  add_cv(compare, args);
  compare->add_option("-i,--input", args.input, "survey CSV")->required();
  auto* study = app.add_subcommand("study", "replicate simulation study");
  add_common(study, args);
  add_cv(study, args);
  auto* report = app.add_subcommand("report", "render a study summary as markdown");
  report->add_option("-i,--input", args.input, "study directory or summary.json")->required();
  report->add_option("-o,--out", args.out, "output directory (default: next to the summary)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*simulate) return cmd_simulate(args);
    if (*survey) return cmd_survey(args);
    if (*fit) return cmd_fit(args);
    if (*compare) return cmd_compare(args);
    if (*study) return cmd_study(args);
    if (*report) return cmd_report(args);
  } catch (const saecv::ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return kUsage;
  } catch (const saecv::ParseError& e) {
    spdlog::error("input: {}", e.what());
    return kIo;
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return kIo;
  } catch (const saecv::Error& e) {
    spdlog::error("{}", e.what());
    return kEstimation;
  } catch (const std::exception& e) {
    spdlog::error("unexpected: {}", e.what());
    return kUnexpected;
  }
  return kUsage;
}
