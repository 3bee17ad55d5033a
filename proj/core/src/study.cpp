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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saecv/error.hpp"
#include "saecv/parallel.hpp"
#include "saecv/rng.hpp"
#include "saecv/sim.hpp"

namespace saecv {
namespace {

double sq(double x) { return x * x; }

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample variance with n - 1 in the denominator.
double sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += sq(x - m);
  return s / static_cast<double>(v.size() - 1);
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2) return 0.0;
  const double ma = mean(a), mb = mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mc_se(const std::vector<double>& v) {
  return v.size() < 2 ? 0.0 : std::sqrt(sample_var(v) / static_cast<double>(v.size()));
}

AreaWeights study_weights(const ScenarioConfig& config, const SyntheticPopulation& pop) {
  std::vector<std::string> universe;
  for (const auto& [area, n] : pop.population) universe.push_back(area);
  const auto empty = SurveyDataset::create({}, universe);
  return area_weights(config.q_mode, empty, pop.population);
}

ReplicateResult run_replicate(const ScenarioConfig& config, const SyntheticPopulation& pop,
                              const AreaWeights& q, int index) {
  ReplicateResult rr;
  rr.index = index;
  const std::uint64_t seed = derive_seed(config.master_seed, "replicate", static_cast<std::uint64_t>(index));
  const auto ds = draw_survey(pop, config, derive_seed(seed, "survey"));
  const auto assignments = make_assignments(ds, config.cv, derive_seed(seed, "folds"));

  CvOptions opts;
  opts.missing = config.cv.missing;
  opts.direct = config.direct;
  opts.seed = derive_seed(seed, "cv");
  const auto cv = cv_scores(ds, assignments, config.models, q, opts);
  const auto directs = hajek_all(ds, config.direct);

  const std::size_t nm = config.models.size();
  const std::uint64_t full_seed = derive_seed(seed, "full");
  std::vector<AreaEstimates> fits;
  for (const auto& m : config.models)
    fits.push_back(fit_model(ds, m, derive_seed(full_seed, m.name), config.direct));

  std::vector<LoaoResult> loao;
  if (config.run_loao) {
    CvOptions lo = opts;
    lo.seed = derive_seed(seed, "loao");
    for (const auto& m : config.models) loao.push_back(loao_score(ds, m, q, lo));
  }

  const std::size_t splits = static_cast<std::size_t>(cv.K) * cv.replicates;
  const auto& truth = pop.truth;

  for (std::size_t m = 0; m < nm; ++m) {
    ModelReplicate mr;
    mr.model = config.models[m].name;
    std::map<std::string, double> est;
    for (const auto& a : fits[m].areas) est[a.area_id] = a.mean;
    mr.oracle_full = oracle_error(est, truth, q);
    for (std::size_t s = 0; s < splits; ++s) {
      std::map<std::string, double> fold_est;
      for (const auto& a : cv.areas) fold_est[a.area_id] = a.fold_pred[m][s];
      mr.oracle_training += oracle_error(fold_est, truth, q);
    }
    mr.oracle_training /= static_cast<double>(splits);
    mr.naive = cv.naive_q[m];
    mr.adjusted = cv.adjusted_q[m];
    if (config.run_loao) {
      mr.loao = loao[m].score;
      std::map<std::string, double> pred;
      for (const auto& a : loao[m].areas) pred[a.area_id] = a.prediction;
      mr.loao_oracle = oracle_error(pred, truth, loao[m].q);
    }
    rr.models.push_back(std::move(mr));
  }

  std::vector<BoundReport> bounds;
  for (const auto& [name_a, name_b] : config.comparisons) {
    const int a = cv.model_index(name_a), b = cv.model_index(name_b);
    PairReplicate pr;
    pr.model_a = name_a;
    pr.model_b = name_b;
    const auto adj = error_bound_adjusted(directs, fits[a], fits[b], cv.q);
    const auto naive = error_bound_naive(cv, a, b);
    pr.verdict = make_verdict(cv, a, b, adj, naive);
    pr.t_q = adj.t_q;
    pr.t_naive_q = naive.t_q;
    pr.oracle_full_diff = rr.models[a].oracle_full - rr.models[b].oracle_full;
    pr.oracle_training_diff = rr.models[a].oracle_training - rr.models[b].oracle_training;
    if (config.run_loao) pr.loao_diff = *rr.models[a].loao - *rr.models[b].loao;
    bounds.push_back(adj);
    rr.pairs.push_back(std::move(pr));
  }

  for (std::size_t i = 0; i < cv.areas.size(); ++i) {
    const auto& sc = cv.areas[i];
    AreaReplicate ar;
    ar.area_id = sc.area_id;
    ar.truth = truth.at(sc.area_id);
    ar.q = q.contains(sc.area_id) ? q.at(sc.area_id) : 0.0;
    const auto* d = find_direct(directs, sc.area_id);
    ar.direct = d && d->present ? d->point : std::nan("");
    ar.direct_variance = d && d->present ? d->variance : std::nan("");
    std::vector<double> held;
    for (double x : sc.fold_direct) {
      if (!std::isnan(x)) held.push_back(x - ar.truth);
    }
    ar.b_hat = held.empty() ? std::nan("") : mean(held);
    for (std::size_t m = 0; m < nm; ++m) {
      ar.model_mean.push_back(fits[m].areas[i].mean);
      ar.model_variance.push_back(fits[m].areas[i].variance);
      double dm = 0.0, ot = 0.0;
      for (double p : sc.fold_pred[m]) {
        dm += p - ar.truth;
        ot += sq(p - ar.truth);
      }
      ar.d_hat.push_back(dm / static_cast<double>(splits));
      ar.oracle_training.push_back(ot / static_cast<double>(splits));
      ar.adjusted.push_back(sc.adjusted[m]);
      ar.naive.push_back(sc.naive[m]);
      if (config.run_loao) {
        double pred = std::nan("");
        for (const auto& la : loao[m].areas) {
          if (la.area_id == sc.area_id) pred = la.prediction;
        }
        ar.loao_prediction.push_back(pred);
      }
    }
    for (const auto& b : bounds) {
      const auto* t = b.find(sc.area_id);
      ar.t.push_back(t ? t->t : std::nan(""));
    }
    rr.areas.push_back(std::move(ar));
  }
  rr.ok = true;
  return rr;
}

std::vector<const ReplicateResult*> successful(const StudyResult& study) {
  std::vector<const ReplicateResult*> out;
  for (const auto& r : study.replicates) {
    if (r.ok) out.push_back(&r);
  }
  return out;
}

std::string num(double x) { return std::isnan(x) ? "NA" : fmt::format("{}", x); }
std::string num(const std::optional<double>& x) { return x ? num(*x) : "NA"; }

}  // namespace

StudyResult run_study(const ScenarioConfig& config, const StudyOptions& options) {
  config.validate();
  if (config.models.empty()) throw ConfigError("study: no models configured");
  StudyResult study;
  study.config = config;
  study.frame = build_frame(config, derive_seed(config.master_seed, "frame"));
  study.population = generate_population(study.frame, config, derive_seed(config.master_seed, "population"));
  study.q = study_weights(config, study.population);
  study.replicates.resize(static_cast<std::size_t>(config.replicates));

  std::mutex progress_mutex;
  parallel_for(study.replicates.size(), options.jobs, [&](std::size_t r) {
    ReplicateResult rr;
    try {
      rr = run_replicate(config, study.population, study.q, static_cast<int>(r));
    } catch (const Error& e) {
      rr = ReplicateResult{};
      rr.index = static_cast<int>(r);
      rr.error = e.what();
      spdlog::warn("replicate {} failed: {}", r, e.what());
    }
    study.replicates[r] = std::move(rr);
    if (options.progress) {
      std::lock_guard lock(progress_mutex);
      options.progress(study.replicates[r]);
    }
  });
  for (const auto& r : study.replicates) study.failures += r.ok ? 0 : 1;
  if (study.failures * 10 > config.replicates)
    throw Error(fmt::format("study failed: {} of {} replicates failed (ceiling 10%)", study.failures,
                            config.replicates));
  return study;
}

RemainderBoundReport remainder_bound_check(const StudyResult& study, std::size_t pair_index) {
  const auto reps = successful(study);
  if (reps.size() < 30)
    throw ContractError(fmt::format("remainder-bound check needs at least 30 successful replicates, got {}",
                                    reps.size()));
  if (pair_index >= study.config.comparisons.size())
    throw ContractError("remainder-bound check: comparison index out of range");
  const auto& [name_a, name_b] = study.config.comparisons[pair_index];
  int a = -1, b = -1;
  for (std::size_t m = 0; m < study.config.models.size(); ++m) {
    if (study.config.models[m].name == name_a) a = static_cast<int>(m);
    if (study.config.models[m].name == name_b) b = static_cast<int>(m);
  }
  RemainderBoundReport rep;
  rep.model_a = name_a;
  rep.model_b = name_b;
  const std::size_t M = reps.front()->areas.size();
  for (std::size_t i = 0; i < M; ++i) {
    std::vector<double> bs, ds, ts;
    for (const auto* r : reps) {
      const auto& ar = r->areas[i];
      if (std::isnan(ar.b_hat) || std::isnan(ar.t[pair_index])) continue;
      bs.push_back(ar.b_hat);
      ds.push_back(ar.d_hat[a] - ar.d_hat[b]);
      ts.push_back(ar.t[pair_index]);
    }
    if (ts.empty()) continue;
    RemainderBoundArea ta;
    ta.area_id = reps.front()->areas[i].area_id;
    ta.e_hat = -2.0 * sample_cov(bs, ds);
    ta.t_median = median(ts);
    ta.t_max = *std::max_element(ts.begin(), ts.end());
    ta.t_min = *std::min_element(ts.begin(), ts.end());
    ta.replicates_below = static_cast<int>(
        std::count_if(ts.begin(), ts.end(), [&](double t) { return t < std::abs(ta.e_hat); }));
    rep.median_violations += std::abs(ta.e_hat) > ta.t_median;
    rep.max_violations += std::abs(ta.e_hat) > ta.t_max;
    rep.areas.push_back(ta);
  }
  return rep;
}

LoaoGapReport loao_gap_check(const StudyResult& study, std::string_view model) {
  if (!study.config.run_loao) throw ContractError("LOAO gap check needs a study run with LOAO");
  int m = -1;
  for (std::size_t k = 0; k < study.config.models.size(); ++k) {
    if (study.config.models[k].name == model) m = static_cast<int>(k);
  }
  if (m < 0) throw ContractError(fmt::format("LOAO gap check: unknown model '{}'", model));
  const auto reps = successful(study);
  if (reps.empty()) throw ContractError("LOAO gap check: no successful replicate");
  LoaoGapReport rep;
  rep.model = std::string(model);
  const std::size_t M = reps.front()->areas.size();
  for (std::size_t i = 0; i < M; ++i) {
    std::vector<double> ext, smo, diff;
    for (const auto* r : reps) {
      const auto& ar = r->areas[i];
      if (std::isnan(ar.loao_prediction[m])) continue;
      ext.push_back(ar.loao_prediction[m] - ar.truth);
      smo.push_back(ar.model_mean[m] - ar.truth);
      diff.push_back(sq(ext.back()) - sq(smo.back()));
    }
    if (ext.empty()) continue;
    const double n = static_cast<double>(ext.size());
    LoaoGapArea g;
    g.area_id = reps.front()->areas[i].area_id;
    for (std::size_t k = 0; k < ext.size(); ++k) {
      g.mse_extrapolation += sq(ext[k]) / n;
      g.mse_smoothing += sq(smo[k]) / n;
    }
    g.gap = g.mse_extrapolation - g.mse_smoothing;
    const double be = mean(ext), bs = mean(smo);
    // Variances with 1/R normalization so that both sides match exactly.
    const double ve = sample_var(ext) * (n - 1) / n, vs = sample_var(smo) * (n - 1) / n;
    g.variance_part = ve - vs;
    g.bias_part = sq(be) - sq(bs);
    g.gap_se = mc_se(diff);
    rep.weighted_gap += reps.front()->areas[i].q * g.gap;
    rep.areas.push_back(g);
  }
  return rep;
}

DecompositionReport decomposition_check(const SyntheticPopulation& population, const ScenarioConfig& config,
                              const TrainingEstimator& estimator, const DecompositionSettings& settings,
                              std::uint64_t seed) {
  if (settings.partitions < 100)
    throw ConfigError(fmt::format("decomposition check needs at least 100 partition draws, got {}",
                                  settings.partitions));
  if (settings.surveys < 2) throw ConfigError("decomposition check needs at least 2 surveys");
  if (settings.K < 2) throw ConfigError("decomposition check needs K >= 2");
  const int K = settings.K;
  const std::size_t M = population.truth.size();
  std::vector<double> truth;
  std::vector<std::string> ids;
  for (const auto& [area, t] : population.truth) {
    ids.push_back(area);
    truth.push_back(t);
  }

  struct SurveyStats {
    std::vector<double> m_hat, oracle, b;
  };
  std::vector<SurveyStats> stats(static_cast<std::size_t>(settings.surveys));

  parallel_for(stats.size(), settings.jobs, [&](std::size_t s) {
    const std::uint64_t ss = derive_seed(seed, "survey", s);
    const auto ds = draw_survey(population, config, derive_seed(ss, "draw"));
    // One split: B = fold 0 held out, A = the remaining folds.
    auto split = [&](std::uint64_t split_seed, std::vector<double>& a_est, std::vector<double>& b_dir) {
      const auto fa = assign_folds_ssu(ds, K, split_seed);
      const auto folds = fa.row_folds(ds);
      std::vector<std::size_t> a_rows, b_rows;
      for (std::size_t r = 0; r < folds.size(); ++r) (folds[r] == 0 ? b_rows : a_rows).push_back(r);
      a_est = estimator(rescale_weights(ds.subset(a_rows), static_cast<double>(K) / (K - 1)));
      const auto bd = hajek_all(ds.subset(b_rows));
      b_dir.assign(M, std::nan(""));
      for (std::size_t i = 0; i < M; ++i) {
        if (bd[i].present) b_dir[i] = bd[i].point;
      }
    };

    auto& st = stats[s];
    st.m_hat.assign(M, 0.0);
    st.oracle.assign(M, 0.0);
    st.b.assign(M, 0.0);
    std::vector<double> sA(M, 0.0), sB(M, 0.0), sBB(M, 0.0), sAB(M, 0.0), sD2(M, 0.0);
    std::vector<int> n(M, 0);
    std::vector<double> a_est, b_dir;
    for (int p = 0; p < settings.partitions; ++p) {
      split(derive_seed(ss, "partition", static_cast<std::uint64_t>(p)), a_est, b_dir);
      for (std::size_t i = 0; i < M; ++i) {
        if (std::isnan(b_dir[i])) continue;
        ++n[i];
        sA[i] += a_est[i];
        sB[i] += b_dir[i];
        sBB[i] += b_dir[i] * b_dir[i];
        sAB[i] += a_est[i] * b_dir[i];
        sD2[i] += sq(a_est[i] - b_dir[i]);
      }
    }
    std::vector<double> sO(M, 0.0);
    for (int p = 0; p < settings.partitions; ++p) {
      split(derive_seed(ss, "oracle", static_cast<std::uint64_t>(p)), a_est, b_dir);
      for (std::size_t i = 0; i < M; ++i) sO[i] += sq(a_est[i] - truth[i]);
    }
    for (std::size_t i = 0; i < M; ++i) {
      if (n[i] == 0) throw Error(fmt::format("area '{}' never has held-out data", ids[i]));
      const double k = n[i];
      const double ma = sA[i] / k, mb = sB[i] / k;
      const double v = sBB[i] / k - mb * mb;
      const double c = sAB[i] / k - ma * mb;
      const double b = mb - truth[i], d = ma - truth[i];
      st.m_hat[i] = sD2[i] / k - v - b * b + 2.0 * c + 2.0 * b * d;
      st.oracle[i] = sO[i] / settings.partitions;
      st.b[i] = b;
    }
  });

  DecompositionReport rep;
  rep.surveys = settings.surveys;
  rep.partitions = settings.partitions;
  for (std::size_t i = 0; i < M; ++i) {
    std::vector<double> mh, orc, bb;
    for (const auto& st : stats) {
      mh.push_back(st.m_hat[i]);
      orc.push_back(st.oracle[i]);
      bb.push_back(st.b[i]);
    }
    DecompositionArea a;
    a.area_id = ids[i];
    a.m_hat_mean = mean(mh);
    a.oracle = mean(orc);
    a.relative_bias = a.oracle > 0 ? (a.m_hat_mean - a.oracle) / a.oracle : 0.0;
    a.se = mc_se(mh);
    a.b_mean = mean(bb);
    a.b_se = mc_se(bb);
    rep.areas.push_back(a);
  }
  return rep;
}

nlohmann::json study_summary(const StudyResult& study) {
  using nlohmann::json;
  const auto& cfg = study.config;
  const auto reps = successful(study);
  json j;
  j["scenario"] = {{"replicates", cfg.replicates},
                   {"successful", reps.size()},
                   {"failures", study.failures},
                   {"clusters_per_stratum", cfg.clusters_per_stratum},
                   {"households_per_cluster", cfg.households_per_cluster},
                   {"scheme", scheme_name(cfg.cv.scheme)},
                   {"K", cfg.cv.scheme == Scheme::kTwoFold ? 2 : cfg.cv.K},
                   {"master_seed", cfg.master_seed}};
  j["truth"] = study.population.truth;
  j["q"] = study.q.q;
  json failed = json::array();
  for (const auto& r : study.replicates) {
    if (!r.ok) failed.push_back({{"replicate", r.index}, {"error", r.error}});
  }
  j["failed_replicates"] = failed;

  json models = json::object();
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    std::vector<double> full, train, adj, naive, gap_adj, gap_tf, loao;
    for (const auto* r : reps) {
      const auto& mr = r->models[m];
      full.push_back(mr.oracle_full);
      train.push_back(mr.oracle_training);
      adj.push_back(mr.adjusted);
      naive.push_back(mr.naive);
      gap_adj.push_back(std::abs(mr.adjusted - mr.oracle_training));
      gap_tf.push_back(std::abs(mr.oracle_training - mr.oracle_full));
      if (mr.loao) loao.push_back(*mr.loao);
    }
    json mj = {{"mean_oracle_full", mean(full)},
               {"mean_oracle_training", mean(train)},
               {"mean_adjusted", mean(adj)},
               {"mean_naive", mean(naive)},
               {"mean_abs_gap_adjusted_vs_training", mean(gap_adj)},
               {"mean_abs_gap_training_vs_full", mean(gap_tf)}};
    if (!loao.empty()) mj["mean_loao"] = mean(loao);
    models[cfg.models[m].name] = mj;
  }
  j["models"] = models;

  json pairs = json::array();
  for (std::size_t p = 0; p < cfg.comparisons.size(); ++p) {
    const double n = static_cast<double>(reps.size());
    double sign_full = 0, sign_train = 0, conclusive = 0, prefer_a = 0, prefer_b = 0, naive_conclusive = 0,
           loao_prefer_a = 0, loao_prefer_b = 0, loao_n = 0;
    for (const auto* r : reps) {
      const auto& pr = r->pairs[p];
      const double diff = pr.verdict.difference;
      sign_full += (diff > 0) == (pr.oracle_full_diff > 0);
      sign_train += (diff > 0) == (pr.oracle_training_diff > 0);
      conclusive += pr.verdict.decision != Decision::kInconclusive;
      prefer_a += pr.verdict.decision == Decision::kPreferA;
      prefer_b += pr.verdict.decision == Decision::kPreferB;
      naive_conclusive += pr.verdict.naive_decision != Decision::kInconclusive;
      if (pr.loao_diff) {
        ++loao_n;
        loao_prefer_a += *pr.loao_diff < 0;
        loao_prefer_b += *pr.loao_diff > 0;
      }
    }
    json pj = {{"model_a", cfg.comparisons[p].first},
               {"model_b", cfg.comparisons[p].second},
               {"fraction_correct_sign_full", n ? sign_full / n : 0.0},
               {"fraction_correct_sign_training", n ? sign_train / n : 0.0},
               {"fraction_conclusive", n ? conclusive / n : 0.0},
               {"fraction_prefer_a", n ? prefer_a / n : 0.0},
               {"fraction_prefer_b", n ? prefer_b / n : 0.0},
               {"fraction_naive_conclusive", n ? naive_conclusive / n : 0.0}};
    if (loao_n > 0) {
      pj["fraction_loao_prefer_a"] = loao_prefer_a / loao_n;
      pj["fraction_loao_prefer_b"] = loao_prefer_b / loao_n;
    }
    if (reps.size() >= 30) {
      const auto t3 = remainder_bound_check(study, p);
      json areas = json::array();
      for (const auto& a : t3.areas) {
        areas.push_back({{"area", a.area_id},
                         {"e_hat", a.e_hat},
                         {"t_median", a.t_median},
                         {"t_min", a.t_min},
                         {"t_max", a.t_max}});
      }
      pj["remainder_bound"] = {{"median_violations", t3.median_violations},
                               {"max_violations", t3.max_violations},
                               {"areas", areas}};
    }
    pairs.push_back(pj);
  }
  j["comparisons"] = pairs;

  if (cfg.run_loao && !reps.empty()) {
    json gaps = json::object();
    for (const auto& m : cfg.models) {
      const auto g = loao_gap_check(study, m.name);
      json areas = json::array();
      for (const auto& a : g.areas) {
        areas.push_back({{"area", a.area_id},
                         {"gap", a.gap},
                         {"variance_part", a.variance_part},
                         {"bias_part", a.bias_part},
                         {"gap_se", a.gap_se}});
      }
      gaps[m.name] = {{"weighted_gap", g.weighted_gap}, {"areas", areas}};
    }
    j["loao_gap"] = gaps;
  }
  return j;
}

void write_study_outputs(const StudyResult& study, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& cfg = study.config;
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw Error(fmt::format("cannot write {}", (dir / name).string()));
    return out;
  };

  {
    auto out = open("replicates.csv");
    out << "replicate,model_a,model_b,level,score_diff,naive_diff,t,t_naive,oracle_full_diff,"
           "oracle_training_diff,loao_diff,decision,naive_decision\n";
    for (const auto& r : study.replicates) {
      if (!r.ok) continue;
      for (std::size_t p = 0; p < r.pairs.size(); ++p) {
        const auto& pr = r.pairs[p];
        const auto& v = pr.verdict;
        out << fmt::format("{},{},{},aggregate,{},{},{},{},{},{},{},{},{}\n", r.index, pr.model_a,
                           pr.model_b, num(v.difference), num(v.naive_difference), num(pr.t_q),
                           num(pr.t_naive_q), num(pr.oracle_full_diff), num(pr.oracle_training_diff),
                           num(pr.loao_diff), decision_name(v.decision),
                           decision_name(v.naive_decision));
        for (const auto& av : v.per_area) {
          const AreaReplicate* ar = nullptr;
          for (const auto& x : r.areas) {
            if (x.area_id == av.area_id) ar = &x;
          }
          std::size_t ia = 0, ib = 0;
          for (std::size_t m = 0; m < cfg.models.size(); ++m) {
            if (cfg.models[m].name == pr.model_a) ia = m;
            if (cfg.models[m].name == pr.model_b) ib = m;
          }
          const double full_diff =
              sq(ar->model_mean[ia] - ar->truth) - sq(ar->model_mean[ib] - ar->truth);
          const double train_diff = ar->oracle_training[ia] - ar->oracle_training[ib];
          std::optional<double> loao_diff;
          if (!ar->loao_prediction.empty()) {
            loao_diff = sq(ar->loao_prediction[ia] - ar->direct) - sq(ar->loao_prediction[ib] - ar->direct);
          }
          out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.index, pr.model_a,
                             pr.model_b, av.area_id, num(av.difference), num(av.naive_difference),
                             num(av.t), num(av.t_naive), num(full_diff), num(train_diff),
                             num(loao_diff), decision_name(av.decision),
                             decision_name(av.naive_decision));
        }
      }
    }
  }
  {
    auto out = open("models.csv");
    out << "replicate,model,oracle_full,oracle_training,naive,adjusted,loao,loao_oracle\n";
    for (const auto& r : study.replicates) {
      if (!r.ok) continue;
      for (const auto& m : r.models) {
        out << fmt::format("{},{},{},{},{},{},{},{}\n", r.index, m.model, num(m.oracle_full),
                           num(m.oracle_training), num(m.naive), num(m.adjusted), num(m.loao),
                           m.loao ? num(m.loao_oracle) : "NA");
      }
    }
  }
  {
    auto out = open("areas.csv");
    out << "replicate,area,model,truth,q,direct,direct_variance,b_hat,mean,variance,d_hat,"
           "oracle_training,naive,adjusted,loao_prediction\n";
    for (const auto& r : study.replicates) {
      if (!r.ok) continue;
      for (const auto& a : r.areas) {
        for (std::size_t m = 0; m < cfg.models.size(); ++m) {
          out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.index, a.area_id,
                             cfg.models[m].name, num(a.truth), num(a.q), num(a.direct),
                             num(a.direct_variance), num(a.b_hat), num(a.model_mean[m]),
                             num(a.model_variance[m]), num(a.d_hat[m]), num(a.oracle_training[m]),
                             num(a.naive[m]), num(a.adjusted[m]),
                             a.loao_prediction.empty() ? "NA" : num(a.loao_prediction[m]));
        }
      }
    }
  }
  {
    auto out = open("summary.json");
    out << study_summary(study).dump(2) << "\n";
  }
}

}  // namespace saecv
