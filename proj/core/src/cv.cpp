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

#include "saecv/cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "saecv/error.hpp"
#include "saecv/parallel.hpp"
#include "saecv/rng.hpp"

namespace saecv {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t uniform_index(Engine& eng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(eng) * static_cast<double>(n)));
}

// Fisher-Yates on our own uniform draws so the permutation does not depend on
// the standard library's distribution implementation.
template <typename T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(eng, i)]);
}

template <typename T>
void deal(std::vector<T> units, int K, Engine& eng, std::map<std::string, int>& out) {
  shuffle(units, eng);
  const std::size_t offset = uniform_index(eng, static_cast<std::size_t>(K));
  for (std::size_t j = 0; j < units.size(); ++j)
    out[units[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(K));
}

void check_folds(int K) {
  if (K < 2) throw DomainError(fmt::format("fold count K = {} must be at least 2", K));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n ? s / n : kNaN;
}

}  // namespace

Scheme parse_scheme(std::string_view name) {
  if (name == "ssu" || name == "cv-ssu") return Scheme::kSsu;
  if (name == "psu" || name == "cv-psu") return Scheme::kPsu;
  if (name == "twofold" || name == "two-fold" || name == "two-fold-resplit") return Scheme::kTwoFold;
  throw ConfigError(fmt::format("unknown CV scheme '{}' (expected ssu, psu or twofold)", name));
}

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kSsu: return "ssu";
    case Scheme::kPsu: return "psu";
    case Scheme::kTwoFold: return "twofold";
  }
  return "?";
}

MissingFolds parse_missing_folds(std::string_view name) {
  if (name == "drop") return MissingFolds::kDrop;
  if (name == "partial") return MissingFolds::kPartial;
  throw ConfigError(fmt::format("unknown missing-fold mode '{}' (expected drop or partial)", name));
}

std::string FoldAssignment::ssu_key(std::string_view psu, std::string_view ssu) {
  return fmt::format("{}/{}", psu, ssu);
}

std::vector<int> FoldAssignment::row_folds(const SurveyDataset& dataset) const {
  std::vector<int> folds(dataset.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const auto& u = dataset.units()[r];
    const std::string key = unit == SplitUnit::kSsu ? ssu_key(u.psu_id, u.ssu_id) : u.psu_id;
    const auto it = assignment.find(key);
    if (it == assignment.end())
      throw ContractError(fmt::format("fold assignment does not cover splitting unit '{}'", key));
    folds[r] = it->second;
  }
  return folds;
}

FoldAssignment assign_folds_ssu(const SurveyDataset& dataset, int K, std::uint64_t seed) {
  check_folds(K);
  FoldAssignment fa;
  fa.K = K;
  fa.scheme = Scheme::kSsu;
  fa.unit = SplitUnit::kSsu;
  fa.seed = seed;
  for (const auto& [stratum, psus] : dataset.design_index()) {
    for (const auto& [psu, ssus] : psus) {
      std::vector<std::string> keys;
      for (const auto& [ssu, rows] : ssus) keys.push_back(FoldAssignment::ssu_key(psu, ssu));
      Engine eng = make_engine(derive_seed(seed, psu));
      deal(std::move(keys), K, eng, fa.assignment);
    }
  }
  return fa;
}

FoldAssignment assign_folds_psu(const SurveyDataset& dataset, int K, std::uint64_t seed) {
  check_folds(K);
  FoldAssignment fa;
  fa.K = K;
  fa.scheme = Scheme::kPsu;
  fa.unit = SplitUnit::kPsu;
  fa.seed = seed;
  for (const auto& [stratum, psus] : dataset.design_index()) {
    std::vector<std::string> keys;
    for (const auto& [psu, ssus] : psus) keys.push_back(psu);
    if (keys.size() < static_cast<std::size_t>(K)) {
      fa.warnings.push_back(fmt::format("stratum '{}' has {} PSUs for {} folds; {} folds get none",
                                        stratum, keys.size(), K, K - static_cast<int>(keys.size())));
      spdlog::warn(fa.warnings.back());
    }
    Engine eng = make_engine(derive_seed(seed, stratum));
    deal(std::move(keys), K, eng, fa.assignment);
  }
  return fa;
}

std::vector<FoldAssignment> resplit_two_fold(const SurveyDataset& dataset, int R, std::uint64_t seed,
                                             SplitUnit unit) {
  if (R < 1) throw DomainError(fmt::format("resplit count R = {} must be at least 1", R));
  std::vector<FoldAssignment> out;
  for (int r = 0; r < R; ++r) {
    const std::uint64_t s = derive_seed(seed, "resplit", static_cast<std::uint64_t>(r));
    auto fa = unit == SplitUnit::kSsu ? assign_folds_ssu(dataset, 2, s) : assign_folds_psu(dataset, 2, s);
    fa.scheme = Scheme::kTwoFold;
    fa.replicate_index = r;
    out.push_back(std::move(fa));
  }
  return out;
}

std::vector<FoldAssignment> make_assignments(const SurveyDataset& dataset,
                                             const CvSettings& settings, std::uint64_t seed) {
  switch (settings.scheme) {
    case Scheme::kSsu: return {assign_folds_ssu(dataset, settings.K, seed)};
    case Scheme::kPsu: return {assign_folds_psu(dataset, settings.K, seed)};
    case Scheme::kTwoFold: return resplit_two_fold(dataset, settings.resplits, seed, settings.resplit_unit);
  }
  return {};
}

int CvResult::model_index(std::string_view name) const {
  for (std::size_t m = 0; m < models.size(); ++m) {
    if (models[m] == name) return static_cast<int>(m);
  }
  return -1;
}

const AreaScore* CvResult::find(std::string_view area) const {
  for (const auto& a : areas) {
    if (a.area_id == area) return &a;
  }
  return nullptr;
}

ScoreTerms score_terms(std::span<const double> predictions, std::span<const double> directs) {
  if (predictions.size() != directs.size() || directs.empty())
    throw ContractError("score terms need equally many predictions and held-out directs");
  const double k = static_cast<double>(directs.size());
  double pbar = 0.0, dbar = 0.0;
  for (std::size_t i = 0; i < directs.size(); ++i) {
    pbar += predictions[i];
    dbar += directs[i];
  }
  pbar /= k;
  dbar /= k;
  ScoreTerms t;
  for (std::size_t i = 0; i < directs.size(); ++i) {
    const double e = predictions[i] - directs[i];
    t.naive += e * e;
    t.v_hat += (directs[i] - dbar) * (directs[i] - dbar);
    t.c_hat += (directs[i] - dbar) * (predictions[i] - pbar);
  }
  t.naive /= k;
  t.v_hat /= k;
  t.c_hat /= k;
  t.adjusted = t.naive - t.v_hat + 2.0 * t.c_hat;
  return t;
}

CvResult cv_scores(const SurveyDataset& dataset, const std::vector<FoldAssignment>& assignments,
                   const std::vector<ModelSpec>& models, const AreaWeights& q,
                   const CvOptions& options) {
  if (assignments.empty()) throw ContractError("cross-validation needs at least one fold assignment");
  if (models.empty()) throw ContractError("cross-validation needs at least one model");
  const int K = assignments.front().K;
  for (const auto& a : assignments) {
    if (a.K != K) throw ContractError("all repeated fold assignments must share K");
  }
  const int R = static_cast<int>(assignments.size());
  const std::size_t splits = static_cast<std::size_t>(R) * K;
  const std::size_t M = dataset.num_areas();
  const std::size_t nm = models.size();

  // Row membership per split.
  std::vector<std::vector<std::size_t>> held(splits), train(splits);
  for (int r = 0; r < R; ++r) {
    const auto folds = assignments[r].row_folds(dataset);
    for (std::size_t row = 0; row < folds.size(); ++row) {
      for (int k = 0; k < K; ++k) {
        auto& dst = folds[row] == k ? held : train;
        dst[static_cast<std::size_t>(r) * K + k].push_back(row);
      }
    }
  }

  std::vector<std::vector<DirectEstimate>> held_directs(splits);
  parallel_for(splits, options.jobs, [&](std::size_t s) {
    if (held[s].empty()) {
      held_directs[s] = hajek_all(dataset.subset({}), options.direct);
      return;
    }
    // Held-out weights scaled by K; the Hajek ratio is unchanged.
    const auto fold = rescale_weights(dataset.subset(held[s]), static_cast<double>(K));
    held_directs[s] = hajek_all(fold, options.direct);
  });

  std::vector<std::vector<AreaEstimates>> fits(splits, std::vector<AreaEstimates>(nm));
  parallel_for(splits * nm, options.jobs, [&](std::size_t task) {
    const std::size_t s = task / nm, m = task % nm;
    const auto& spec = models[m];
    try {
      if (train[s].empty()) throw FitError("empty training set");
      const auto training =
          rescale_weights(dataset.subset(train[s]), static_cast<double>(K) / (K - 1));
      const std::uint64_t seed = derive_seed(derive_seed(options.seed, "fit", s), spec.name);
      fits[s][m] = fit_model(training, spec, seed, options.direct);
    } catch (const Error& e) {
      throw FitError(fmt::format("replicate {} fold {} model '{}': {}", s / K, s % K, spec.name,
                                 e.what()));
    }
  });

  CvResult res;
  for (const auto& m : models) res.models.push_back(m.name);
  res.K = K;
  res.replicates = R;
  std::vector<std::string> scored;
  for (std::size_t i = 0; i < M; ++i) {
    const std::string& area = dataset.area_ids()[i];
    AreaScore a;
    a.area_id = area;
    a.fold_direct.assign(splits, kNaN);
    a.fold_direct_var.assign(splits, kNaN);
    a.fold_pred.assign(nm, std::vector<double>(splits, kNaN));
    for (std::size_t s = 0; s < splits; ++s) {
      for (std::size_t m = 0; m < nm; ++m) a.fold_pred[m][s] = fits[s][m].areas[i].mean;
      const auto& d = held_directs[s][i];
      if (!d.present) continue;
      a.fold_direct[s] = d.point;
      a.fold_direct_var[s] = d.variance;
    }

    a.naive.assign(nm, 0.0);
    a.c_hat.assign(nm, 0.0);
    a.adjusted.assign(nm, 0.0);
    a.valid_folds = K;
    int used = 0;
    for (int r = 0; r < R; ++r) {
      std::vector<std::size_t> valid;
      for (int k = 0; k < K; ++k) {
        const std::size_t s = static_cast<std::size_t>(r) * K + k;
        if (!std::isnan(a.fold_direct[s])) valid.push_back(s);
      }
      a.valid_folds = std::min(a.valid_folds, static_cast<int>(valid.size()));
      if (valid.empty()) continue;
      if (options.missing == MissingFolds::kDrop && valid.size() != static_cast<std::size_t>(K)) continue;
      std::vector<double> dir, pred;
      for (std::size_t s : valid) dir.push_back(a.fold_direct[s]);
      for (std::size_t m = 0; m < nm; ++m) {
        pred.clear();
        for (std::size_t s : valid) pred.push_back(a.fold_pred[m][s]);
        const auto t = score_terms(pred, dir);
        a.naive[m] += t.naive;
        a.c_hat[m] += t.c_hat;
        if (m == 0) a.v_hat += t.v_hat;
      }
      ++used;
    }
    a.scored = options.missing == MissingFolds::kDrop ? a.valid_folds == K && used == R : used > 0;
    if (a.scored) {
      a.v_hat /= used;
      for (std::size_t m = 0; m < nm; ++m) {
        a.naive[m] /= used;
        a.c_hat[m] /= used;
        a.adjusted[m] = a.naive[m] - a.v_hat + 2.0 * a.c_hat[m];
      }
      if (q.contains(area) && q.at(area) > 0.0) scored.push_back(area);
    } else {
      a.v_hat = 0.0;
      std::fill(a.naive.begin(), a.naive.end(), kNaN);
      std::fill(a.c_hat.begin(), a.c_hat.end(), kNaN);
      std::fill(a.adjusted.begin(), a.adjusted.end(), kNaN);
      spdlog::warn("area '{}' has held-out data in {} of {} folds; left out of the aggregate",
                   area, a.valid_folds, K);
    }
    res.areas.push_back(std::move(a));
  }
  if (scored.empty()) throw Error("cross-validation: no area could be scored");
  res.q = q.restricted_to(scored);
  res.naive_q.assign(nm, 0.0);
  res.adjusted_q.assign(nm, 0.0);
  for (const auto& a : res.areas) {
    if (!a.scored || !res.q.contains(a.area_id)) continue;
    const double w = res.q.at(a.area_id);
    for (std::size_t m = 0; m < nm; ++m) {
      res.naive_q[m] += w * a.naive[m];
      res.adjusted_q[m] += w * a.adjusted[m];
    }
  }
  return res;
}

const AreaBound* BoundReport::find(std::string_view area) const {
  for (const auto& a : areas) {
    if (a.area_id == area) return &a;
  }
  return nullptr;
}

BoundReport error_bound_adjusted(const std::vector<DirectEstimate>& direct_full,
                                 const AreaEstimates& fit_a, const AreaEstimates& fit_b,
                                 const AreaWeights& q) {
  BoundReport rep;
  for (const auto& [area, qi] : q.q) {
    const auto* d = find_direct(direct_full, area);
    if (!d || !d->present)
      throw Error(fmt::format("error bound: area '{}' has no full-sample direct variance", area));
    const auto* a = fit_a.find(area);
    const auto* b = fit_b.find(area);
    if (!a || !b)
      throw Error(fmt::format("error bound: area '{}' lacks a posterior variance", area));
    const double t = 2.0 * std::sqrt(2.0 * d->variance * (a->variance + b->variance));
    rep.areas.push_back({area, t});
    rep.t_q += qi * t;
  }
  return rep;
}

BoundReport error_bound_naive(const std::map<std::string, std::vector<double>>& fold_direct_variances,
                              const std::map<std::string, std::vector<double>>& fold_model_diffs,
                              const AreaWeights& q) {
  BoundReport rep;
  for (const auto& [area, qi] : q.q) {
    const auto v = fold_direct_variances.find(area);
    const auto d = fold_model_diffs.find(area);
    if (v == fold_direct_variances.end() || d == fold_model_diffs.end())
      throw Error(fmt::format("naive error bound: area '{}' lacks fold-level values", area));
    std::vector<double> sq;
    for (double x : d->second) sq.push_back(x * x);
    const double mv = mean_of(v->second), md = mean_of(sq);
    if (std::isnan(mv) || std::isnan(md))
      throw Error(fmt::format("naive error bound: area '{}' has no valid fold", area));
    const double t = 2.0 * std::sqrt(mv * md);
    rep.areas.push_back({area, t});
    rep.t_q += qi * t;
  }
  return rep;
}

BoundReport error_bound_naive(const CvResult& cv, int model_a, int model_b) {
  std::map<std::string, std::vector<double>> vars, diffs;
  for (const auto& a : cv.areas) {
    if (!cv.q.contains(a.area_id)) continue;
    vars[a.area_id] = a.fold_direct_var;
    auto& d = diffs[a.area_id];
    for (std::size_t s = 0; s < a.fold_direct.size(); ++s) {
      d.push_back(std::isnan(a.fold_direct[s]) ? kNaN : a.fold_pred[model_a][s] - a.fold_pred[model_b][s]);
    }
  }
  return error_bound_naive(vars, diffs, cv.q);
}

std::string_view decision_name(Decision d) {
  switch (d) {
    case Decision::kPreferA: return "prefer-a";
    case Decision::kPreferB: return "prefer-b";
    case Decision::kInconclusive: return "inconclusive";
  }
  return "?";
}

Decision decide(double difference, double threshold) {
  if (std::abs(difference) <= threshold) return Decision::kInconclusive;
  return difference < 0 ? Decision::kPreferA : Decision::kPreferB;
}

std::string Verdict::preferred() const {
  switch (decision) {
    case Decision::kPreferA: return model_a;
    case Decision::kPreferB: return model_b;
    case Decision::kInconclusive: break;
  }
  return "inconclusive";
}

Verdict make_verdict(const CvResult& cv, int model_a, int model_b, const BoundReport& adjusted,
                     const BoundReport& naive) {
  Verdict v;
  v.model_a = cv.models.at(model_a);
  v.model_b = cv.models.at(model_b);
  v.score_a = cv.adjusted_q[model_a];
  v.score_b = cv.adjusted_q[model_b];
  v.difference = v.score_a - v.score_b;
  v.threshold = adjusted.t_q;
  v.decision = decide(v.difference, v.threshold);
  v.naive_a = cv.naive_q[model_a];
  v.naive_b = cv.naive_q[model_b];
  v.naive_difference = v.naive_a - v.naive_b;
  v.naive_threshold = naive.t_q;
  v.naive_decision = decide(v.naive_difference, v.naive_threshold);
  for (const auto& a : cv.areas) {
    if (!cv.q.contains(a.area_id)) continue;
    AreaVerdict av;
    av.area_id = a.area_id;
    av.difference = a.adjusted[model_a] - a.adjusted[model_b];
    if (const auto* b = adjusted.find(a.area_id)) av.t = b->t;
    av.decision = decide(av.difference, av.t);
    av.naive_difference = a.naive[model_a] - a.naive[model_b];
    if (const auto* b = naive.find(a.area_id)) av.t_naive = b->t;
    av.naive_decision = decide(av.naive_difference, av.t_naive);
    v.per_area.push_back(std::move(av));
  }
  return v;
}

Comparison compare_models(const SurveyDataset& dataset, const ModelSpec& spec_a,
                          const ModelSpec& spec_b, const CvSettings& settings,
                          const AreaWeights& q, std::uint64_t seed, const CvOptions& options) {
  Comparison c;
  const auto assignments = make_assignments(dataset, settings, derive_seed(seed, "folds"));
  CvOptions opts = options;
  opts.missing = settings.missing;
  opts.seed = derive_seed(seed, "cv");
  c.cv = cv_scores(dataset, assignments, {spec_a, spec_b}, q, opts);
  c.directs = hajek_all(dataset, options.direct);
  const std::uint64_t full = derive_seed(seed, "full");
  std::vector<AreaEstimates> fits(2);
  const ModelSpec* specs[] = {&spec_a, &spec_b};
  parallel_for(2, options.jobs, [&](std::size_t m) {
    fits[m] = fit_model(dataset, *specs[m], derive_seed(full, specs[m]->name), options.direct);
  });
  c.fit_a = std::move(fits[0]);
  c.fit_b = std::move(fits[1]);
  c.bounds = error_bound_adjusted(c.directs, c.fit_a, c.fit_b, c.cv.q);
  c.naive_bounds = error_bound_naive(c.cv, 0, 1);
  c.verdict = make_verdict(c.cv, 0, 1, c.bounds, c.naive_bounds);
  return c;
}

LoaoResult loao_score(const SurveyDataset& dataset, const ModelSpec& spec, const AreaWeights& q,
                      const CvOptions& options) {
  const auto directs = hajek_all(dataset, options.direct);
  std::vector<std::string> areas;
  for (const auto& d : directs) {
    if (d.present && q.contains(d.area_id) && q.at(d.area_id) > 0.0) areas.push_back(d.area_id);
  }
  if (areas.empty()) throw Error("LOAO: no area has a full-sample direct estimate");
  LoaoResult res;
  res.model = spec.name;
  res.q = q.restricted_to(areas);
  res.areas.resize(areas.size());
  parallel_for(areas.size(), options.jobs, [&](std::size_t k) {
    const std::string& area = areas[k];
    try {
      const auto train = dataset.without_area(area);
      if (train.empty()) throw FitError("no data outside the area");
      const auto fit = fit_model(train, spec,
                                 derive_seed(derive_seed(options.seed, "loao", k), spec.name),
                                 options.direct);
      const auto pred = predict_held_out_area(fit, area);
      const double direct = find_direct(directs, area)->point;
      res.areas[k] = {area, pred.mean, pred.variance, direct,
                      (pred.mean - direct) * (pred.mean - direct)};
    } catch (const Error& e) {
      throw FitError(fmt::format("LOAO fit without area '{}' (model '{}'): {}", area, spec.name,
                                 e.what()));
    }
  });
  for (const auto& a : res.areas) res.score += res.q.at(a.area_id) * a.squared_error;
  return res;
}

ValidationResult independent_validation_score(const SurveyDataset& train,
                                              const SurveyDataset& validation,
                                              const ModelSpec& spec, const AreaWeights& q,
                                              const CvOptions& options) {
  const auto fit = fit_model(train, spec, derive_seed(derive_seed(options.seed, "validation"), spec.name),
                             options.direct);
  const auto directs = hajek_all(validation, options.direct);
  ValidationResult res;
  res.model = spec.name;
  std::vector<std::string> used;
  for (const auto& [area, qi] : q.q) {
    const auto* d = find_direct(directs, area);
    const auto* est = fit.find(area);
    if (!d || !d->present || !est) {
      res.excluded.push_back(area);
      spdlog::warn("validation survey has no direct estimate for area '{}'; excluded", area);
      continue;
    }
    const double e = est->mean - d->point;
    res.areas.push_back({area, est->mean, d->point, d->variance, e * e - d->variance});
    if (qi > 0.0) used.push_back(area);
  }
  if (used.empty()) throw Error("independent validation: no area in common");
  res.q = q.restricted_to(used);
  for (const auto& a : res.areas) {
    if (res.q.contains(a.area_id)) res.score += res.q.at(a.area_id) * a.score;
  }
  return res;
}

nlohmann::json verdict_to_json(const Verdict& v) {
  nlohmann::json j;
  j["model_a"] = v.model_a;
  j["model_b"] = v.model_b;
  j["score_a"] = v.score_a;
  j["score_b"] = v.score_b;
  j["difference"] = v.difference;
  j["threshold"] = v.threshold;
  j["decision"] = decision_name(v.decision);
  j["preferred"] = v.preferred();
  j["naive"] = {{"score_a", v.naive_a},
                {"score_b", v.naive_b},
                {"difference", v.naive_difference},
                {"threshold", v.naive_threshold},
                {"decision", decision_name(v.naive_decision)}};
  auto& areas = j["per_area"] = nlohmann::json::array();
  for (const auto& a : v.per_area) {
    areas.push_back({{"area", a.area_id},
                     {"difference", a.difference},
                     {"t", a.t},
                     {"decision", decision_name(a.decision)},
                     {"naive_difference", a.naive_difference},
                     {"t_naive", a.t_naive},
                     {"naive_decision", decision_name(a.naive_decision)}});
  }
  return j;
}

void write_verdict_csv(std::ostream& out, const Comparison& c) {
  out << "area,naive_a,naive_b,adjusted_a,adjusted_b,v_hat,c_hat_a,c_hat_b,diff,t_i,decision\n";
  for (const auto& a : c.cv.areas) {
    const auto* b = c.bounds.find(a.area_id);
    if (!a.scored || !b) {
      out << a.area_id << ",NA,NA,NA,NA,NA,NA,NA,NA,NA,unscored\n";
      continue;
    }
    const double diff = a.adjusted[0] - a.adjusted[1];
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", a.area_id, a.naive[0], a.naive[1],
                       a.adjusted[0], a.adjusted[1], a.v_hat, a.c_hat[0], a.c_hat[1], diff, b->t,
                       decision_name(decide(diff, b->t)));
  }
}

}  // namespace saecv
