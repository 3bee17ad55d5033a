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

// Acceptance checks 1-10 against the shipped acceptance scenario. Prints one
// PASS/FAIL line per criterion and exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "helpers.hpp"
#include "saecv/config.hpp"
#include "saecv/cv.hpp"
#include "saecv/direct.hpp"
#include "saecv/models.hpp"
#include "saecv/sim.hpp"

namespace fs = std::filesystem;
using namespace saecv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? s / (v.size() - 1) : 0.0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

ScenarioConfig acceptance_config() {
  return load_study_config(fs::path(SAECV_SOURCE_DIR) / "configs" / "acceptance.toml").scenario;
}

// 1. Score adjustment identity, weight-scale invariance, partition properties.
Outcome exact_algebra() {
  double worst_identity = 0.0, worst_scale = 0.0;
  int violations = 0;
  Engine eng = make_engine(1);
  for (int rep = 0; rep < 10000; ++rep) {
    std::vector<double> p(5), d(5);
    for (int k = 0; k < 5; ++k) {
      p[k] = uniform01(eng);
      d[k] = uniform01(eng);
    }
    const auto t = score_terms(p, d);
    worst_identity = std::max(worst_identity, std::abs(t.adjusted - (t.naive - t.v_hat + 2 * t.c_hat)));
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto ds = saecv::testing::random_dataset(seed, 3, 3 + seed % 6, 2 + seed % 9);
    for (int K : {2, 5}) {
      violations += saecv::testing::partition_violations(ds, assign_folds_ssu(ds, K, seed));
      violations += saecv::testing::partition_violations(ds, assign_folds_psu(ds, K, seed));
    }
    for (const auto& fa : resplit_two_fold(ds, 2, seed)) violations += saecv::testing::partition_violations(ds, fa);
    for (const auto& fa : resplit_two_fold(ds, 2, seed, SplitUnit::kPsu))
      violations += saecv::testing::partition_violations(ds, fa);
    const auto base = hajek_all(ds);
    for (double factor : {5.0, 1.25, 0.5}) {
      const auto scaled = hajek_all(rescale_weights(ds, factor));
      for (std::size_t i = 0; i < base.size(); ++i)
        worst_scale = std::max(worst_scale, std::abs(base[i].point - scaled[i].point));
    }
  }
  // The identity on scores produced by a full cross-validation run.
  const auto ds = saecv::testing::random_dataset(7, 4, 6, 10);
  ModelSpec fh;
  fh.name = "fh";
  fh.family = Family::kFayHerriot;
  const auto cv = cv_scores(ds, make_assignments(ds, {}, 1), {fh}, area_weights(WeightMode::kEqual, ds));
  for (const auto& a : cv.areas)
    worst_identity = std::max(worst_identity, std::abs(a.adjusted[0] - (a.naive[0] - a.v_hat + 2 * a.c_hat[0])));
  return {worst_identity <= 1e-14 && worst_scale <= 1e-14 && violations == 0,
          fmt::format("identity max err {:.2e}, scale max err {:.2e}, partition violations {}", worst_identity,
                      worst_scale, violations)};
}

// 2. Beta-binomial pmf against Beta-function enumeration.
Outcome betabinomial_oracle() {
  auto lbeta = [](double x, double z) { return std::lgamma(x) + std::lgamma(z) - std::lgamma(x + z); };
  double worst = 0.0, worst_binom = 0.0;
  for (int n = 1; n <= 10; ++n)
    for (int ip = 1; ip <= 9; ++ip)
      for (int id = 1; id <= 9; ++id) {
        const double p = ip / 10.0, d = id / 10.0 - 0.05;
        const double a = p * (1 - d) / d, b = (1 - p) * (1 - d) / d;
        double mass = 0, m1 = 0, m2 = 0;
        for (int y = 0; y <= n; ++y) {
          const double lc = std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0);
          const double f = std::exp(betabinomial_logpmf(y, n, p, d));
          worst = std::max(worst, std::abs(f - std::exp(lc + lbeta(y + a, n - y + b) - lbeta(a, b))));
          mass += f;
          m1 += y * f;
          m2 += y * y * f;
          const double binom = std::exp(lc + y * std::log(p) + (n - y) * std::log1p(-p));
          worst_binom = std::max(worst_binom, std::abs(std::exp(betabinomial_logpmf(y, n, p, 0.0)) - binom));
        }
        worst = std::max({worst, std::abs(mass - 1), std::abs(m1 - n * p),
                          std::abs(m2 - m1 * m1 - n * p * (1 - p) * (1 + (n - 1) * d))});
      }
  return {worst < 1e-10 && worst_binom <= 1e-12,
          fmt::format("lattice max err {:.2e}, d=0 max err {:.2e}", worst, worst_binom)};
}

// 3. Hajek bias and design-variance calibration over 500 surveys.
struct Calibration {
  int bias_fail = 0, var_fail = 0, checked = 0;
  double worst_z = 0.0, worst_rel = 0.0;
};

Calibration calibrate(const SyntheticPopulation& pop, const ScenarioConfig& cfg) {
  const int R = 500;
  std::map<std::string, std::vector<double>> points, vars;
  std::map<std::string, std::size_t> psus;
  for (int r = 0; r < R; ++r) {
    const auto ds = draw_survey(pop, cfg, derive_seed(cfg.master_seed, "calibration", r));
    for (const auto& d : hajek_all(ds, cfg.direct)) {
      points[d.area_id].push_back(d.point);
      vars[d.area_id].push_back(d.variance);
      psus[d.area_id] = d.n_psus;
    }
  }
  Calibration c;
  for (const auto& [area, p] : points) {
    const double se = std::sqrt(var_of(p) / R);
    const double z = std::abs(mean_of(p) - pop.truth.at(area)) / se;
    c.worst_z = std::max(c.worst_z, z);
    c.bias_fail += z > 3.0;
    if (psus[area] >= 20) {
      ++c.checked;
      const double rel = std::abs(mean_of(vars[area]) / var_of(p) - 1.0);
      c.worst_rel = std::max(c.worst_rel, rel);
      c.var_fail += rel > 0.15;
    }
  }
  return c;
}

Outcome direct_calibration(const StudyResult& study) {
  const auto c = calibrate(study.population, study.config);
  // Same design on a ten times larger frame: the with-replacement variance
  // formula ignores the first-stage sampling fraction, shown here for contrast.
  auto big = study.config;
  for (auto& a : big.areas) a.frame_clusters *= 10;
  const auto frame = build_frame(big, derive_seed(big.master_seed, "frame"));
  const auto d = calibrate(generate_population(frame, big, derive_seed(big.master_seed, "population")), big);
  return {c.bias_fail == 0 && c.var_fail == 0 && c.checked > 0,
          fmt::format("max |bias|/SE {:.2f}, max variance rel err {:.3f} ({} of {} areas over 15%); "
                      "10x frame: max variance rel err {:.3f} ({} over 15%)",
                      c.worst_z, c.worst_rel, c.var_fail, c.checked, d.worst_rel, d.var_fail)};
}

// 4. Score decomposition unbiasedness at reduced scale with a Fay-Herriot
// training estimator.
Outcome decomposition() {
  auto cfg = acceptance_config();
  cfg.areas.resize(5);
  cfg.clusters_per_stratum = 12;
  cfg.households_per_cluster = 20;
  const auto frame = build_frame(cfg, derive_seed(cfg.master_seed, "frame"));
  const auto pop = generate_population(frame, cfg, derive_seed(cfg.master_seed, "population"));
  ModelSpec fh;
  fh.name = "M2";
  fh.family = Family::kFayHerriot;
  fh.grid.sigma_nodes = 15;
  TrainingEstimator est = [&](const SurveyDataset& train) {
    const auto fit = fit_model(train, fh, 1);
    std::vector<double> out;
    for (const auto& a : fit.areas) out.push_back(a.mean);
    return out;
  };
  DecompositionSettings s;
  s.surveys = 200;
  s.partitions = 200;
  s.K = 5;
  s.jobs = jobs();
  const auto rep = decomposition_check(pop, cfg, est, s, derive_seed(cfg.master_seed, "decomposition"));
  int fails = 0;
  double worst = 0.0;
  for (const auto& a : rep.areas) {
    const double z = std::abs(a.m_hat_mean - a.oracle) / a.se;
    worst = std::max(worst, z);
    fails += z > 2.0;
  }
  return {fails == 0, fmt::format("{} surveys x {} partitions, max |mean m_hat - oracle|/SE {:.2f}", rep.surveys,
                                  rep.partitions, worst)};
}

std::size_t pair_index(const StudyResult& s, const std::string& a, const std::string& b) {
  for (std::size_t p = 0; p < s.config.comparisons.size(); ++p)
    if (s.config.comparisons[p] == std::pair<std::string, std::string>{a, b}) return p;
  throw std::runtime_error(fmt::format("acceptance config lacks the {} - {} comparison", a, b));
}

int model_index(const StudyResult& s, const std::string& name) {
  for (std::size_t m = 0; m < s.config.models.size(); ++m)
    if (s.config.models[m].name == name) return static_cast<int>(m);
  throw std::runtime_error(fmt::format("acceptance config lacks model {}", name));
}

// 5. Remainder estimate against per-replicate bounds.
Outcome remainder_bound(const StudyResult& study) {
  int median_v = 0, max_v = 0;
  std::string detail;
  for (std::size_t p = 0; p < study.config.comparisons.size(); ++p) {
    const auto r = remainder_bound_check(study, p);
    median_v += r.median_violations;
    max_v += r.max_violations;
    double ratio = 0.0;
    for (const auto& a : r.areas) ratio = std::max(ratio, std::abs(a.e_hat) / a.t_median);
    detail += fmt::format("{}-{}: max |e|/median t {:.2f}; ", r.model_a, r.model_b, ratio);
  }
  return {median_v == 0 && max_v == 0,
          detail + fmt::format("violations median {} max {}", median_v, max_v)};
}

// 6. Decisive M3 - M1, inconclusive M2 - M1.
Outcome decisive_and_inconclusive(const StudyResult& study) {
  const auto p31 = pair_index(study, "M3", "M1"), p21 = pair_index(study, "M2", "M1");
  double decisive = 0, inconclusive = 0, n = 0;
  for (const auto& r : study.replicates) {
    if (!r.ok) continue;
    ++n;
    const auto& a = r.pairs[p31];
    decisive += a.verdict.difference > 0 && a.verdict.difference > a.t_q;
    const auto& b = r.pairs[p21];
    inconclusive += std::abs(b.verdict.difference) <= b.t_q;
  }
  return {decisive / n >= 0.9 && inconclusive / n >= 0.8,
          fmt::format("M3-M1 decisive for M1 in {:.0f}%, M2-M1 inconclusive in {:.0f}% of {} replicates",
                      100 * decisive / n, 100 * inconclusive / n, n)};
}

// 7. LOAO ranks M3 first while the adjusted CV verdict prefers M1.
Outcome loao_reversal(const StudyResult& study) {
  const auto p = pair_index(study, "M3", "M1");
  double loao_m3 = 0, cv_m1 = 0, both = 0, n = 0;
  for (const auto& r : study.replicates) {
    if (!r.ok || !r.pairs[p].loao_diff) continue;
    ++n;
    const bool l = *r.pairs[p].loao_diff < 0;
    const bool c = r.pairs[p].verdict.decision == Decision::kPreferB;
    loao_m3 += l;
    cv_m1 += c;
    both += l && c;
  }
  return {n > 0 && both / n >= 0.8,
          fmt::format("LOAO prefers M3 in {:.0f}%, CV prefers M1 in {:.0f}%, both in {:.0f}% of {} replicates",
                      100 * loao_m3 / n, 100 * cv_m1 / n, 100 * both / n, n)};
}

double mean_training_full_gap(const StudyResult& s, int m) {
  std::vector<double> g;
  for (const auto& r : s.replicates)
    if (r.ok) g.push_back(std::abs(r.models[m].oracle_training - r.models[m].oracle_full));
  return mean_of(g);
}

// 8. Training/full oracle gap larger under PSU folds than SSU folds.
Outcome psu_vs_ssu() {
  auto cfg = acceptance_config();
  cfg.clusters_per_stratum = 40;
  cfg.run_loao = false;
  cfg.models = {cfg.model("M3")};
  cfg.comparisons.clear();
  cfg.cv.scheme = Scheme::kSsu;
  const auto ssu = run_study(cfg, {jobs(), {}});
  cfg.cv.scheme = Scheme::kPsu;
  const auto psu = run_study(cfg, {jobs(), {}});
  const double gs = mean_training_full_gap(ssu, 0), gp = mean_training_full_gap(psu, 0);
  return {gp > gs, fmt::format("M3 mean |training - full| oracle gap: PSU {:.3e}, SSU {:.3e}", gp, gs)};
}

double mean_adjusted_gap(const StudyResult& s, int m) {
  std::vector<double> g;
  for (const auto& r : s.replicates)
    if (r.ok) g.push_back(std::abs(r.models[m].adjusted - r.models[m].oracle_training));
  return mean_of(g);
}

// 9. Adjusted score approaches the training oracle as clusters grow.
Outcome consistency(const StudyResult& study30) {
  auto cfg = study30.config;
  cfg.run_loao = false;
  cfg.households_per_cluster = 15;
  const auto s15 = run_study(cfg, {jobs(), {}});
  cfg.households_per_cluster = 60;
  const auto s60 = run_study(cfg, {jobs(), {}});
  bool ok = true;
  std::string detail;
  for (const auto& m : cfg.models) {
    const int i = model_index(study30, m.name);
    const double g15 = mean_adjusted_gap(s15, i), g30 = mean_adjusted_gap(study30, i), g60 = mean_adjusted_gap(s60, i);
    ok = ok && g15 > g30 && g30 > g60;
    detail += fmt::format("{}: {:.3e} > {:.3e} > {:.3e}; ", m.name, g15, g30, g60);
  }
  return {ok, detail.substr(0, detail.size() - 2)};
}

// 10. Study outputs byte-identical across reruns and thread counts.
Outcome determinism(const StudyResult& study, const fs::path& dir) {
  write_study_outputs(study, dir / "first");
  write_study_outputs(run_study(study.config, {1, {}}), dir / "jobs1");
  write_study_outputs(run_study(study.config, {8, {}}), dir / "jobs8");
  int differ = 0;
  for (const char* f : {"replicates.csv", "models.csv", "areas.csv", "summary.json"}) {
    const auto a = slurp(dir / "first" / f);
    differ += a.empty() || a != slurp(dir / "jobs1" / f) || a != slurp(dir / "jobs8" / f);
  }
  return {differ == 0, fmt::format("{} of 4 output files differ across rerun / --jobs 1 / --jobs 8", differ)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const fs::path work = fs::temp_directory_path() / "saecv_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << fmt::format("[{}] {:2d} {}: {} ({:.0f} s)", o.pass ? "PASS" : "FAIL", id, name, o.detail, secs)
              << std::endl;
  };

  report(1, "exact algebra", exact_algebra);
  report(2, "beta-binomial oracle", betabinomial_oracle);

  const auto cfg = acceptance_config();
  std::cerr << fmt::format("running the acceptance study: {} replicates on {} threads\n", cfg.replicates, jobs());
  const auto t0 = std::chrono::steady_clock::now();
  const StudyResult study = run_study(cfg, {jobs(), {}});
  std::cerr << fmt::format("study finished in {:.0f} s, {} failed replicates\n",
                           std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(),
                           study.failures);

  report(3, "direct-estimator calibration", [&] { return direct_calibration(study); });
  report(4, "score decomposition", decomposition);
  report(5, "remainder bound", [&] { return remainder_bound(study); });
  report(6, "decisive and inconclusive comparisons", [&] { return decisive_and_inconclusive(study); });
  report(7, "leave-one-area-out reversal", [&] { return loao_reversal(study); });
  report(8, "PSU vs SSU oracle gap", psu_vs_ssu);
  report(9, "consistency in households per cluster", [&] { return consistency(study); });
  report(10, "determinism", [&] { return determinism(study, work); });

  std::cout << fmt::format("{} of 10 criteria passed", 10 - failed) << std::endl;
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
