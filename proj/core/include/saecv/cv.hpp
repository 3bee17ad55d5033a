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

// Design-preserving cross-validation of small area estimators: fold
// assignment, naive and adjusted scores, error bounds and the comparison
// verdict, leave-one-area-out scoring and independent-survey validation.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "saecv/direct.hpp"
#include "saecv/models.hpp"
#include "saecv/survey.hpp"

namespace saecv {

enum class Scheme {
  kSsu,      // households dealt to folds within each cluster
  kPsu,      // clusters dealt to folds within each stratum
  kTwoFold,  // repeated two-fold splits, scores averaged over the repeats
};
enum class SplitUnit { kSsu, kPsu };
enum class MissingFolds {
  kDrop,     // score only areas with held-out data in every fold
  kPartial,  // average over the folds where the area has held-out data
};

Scheme parse_scheme(std::string_view name);
std::string_view scheme_name(Scheme s);
MissingFolds parse_missing_folds(std::string_view name);

/// Fold membership of every splitting unit.
struct FoldAssignment {
  int K = 2;
  Scheme scheme = Scheme::kSsu;
  SplitUnit unit = SplitUnit::kSsu;
  /// Splitting-unit key -> fold in [0, K). SSU keys are "<psu>/<ssu>".
  std::map<std::string, int> assignment;
  std::uint64_t seed = 0;
  int replicate_index = 0;
  std::vector<std::string> warnings;

  static std::string ssu_key(std::string_view psu, std::string_view ssu);
  /// Fold of every dataset row. Throws ContractError for an unassigned unit.
  std::vector<int> row_folds(const SurveyDataset& dataset) const;
};

FoldAssignment assign_folds_ssu(const SurveyDataset& dataset, int K, std::uint64_t seed);
FoldAssignment assign_folds_psu(const SurveyDataset& dataset, int K, std::uint64_t seed);
/// R independent two-fold assignments under seeds derived from `seed`.
std::vector<FoldAssignment> resplit_two_fold(const SurveyDataset& dataset, int R,
                                             std::uint64_t seed,
                                             SplitUnit unit = SplitUnit::kSsu);

struct CvSettings {
  Scheme scheme = Scheme::kSsu;
  int K = 5;                             // ignored by the two-fold scheme
  int resplits = 5;                      // two-fold scheme only
  SplitUnit resplit_unit = SplitUnit::kSsu;
  MissingFolds missing = MissingFolds::kDrop;
};

std::vector<FoldAssignment> make_assignments(const SurveyDataset& dataset,
                                             const CvSettings& settings, std::uint64_t seed);

struct CvOptions {
  MissingFolds missing = MissingFolds::kDrop;
  DirectOptions direct{};
  int jobs = 1;
  std::uint64_t seed = 0;  // only feeds Monte Carlo posterior summaries
};

/// Per-area cross-validation record. Split-level vectors are indexed by
/// replicate * K + fold; held-out direct entries are NaN where the area has
/// no held-out data, training predictions are always filled.
struct AreaScore {
  std::string area_id;
  int valid_folds = 0;  // valid splits per replicate (minimum over replicates)
  bool scored = false;
  std::vector<double> naive;     // per model
  double v_hat = 0.0;
  std::vector<double> c_hat;     // per model
  std::vector<double> adjusted;  // per model: naive - v_hat + 2 c_hat
  std::vector<double> fold_direct;
  std::vector<double> fold_direct_var;
  std::vector<std::vector<double>> fold_pred;  // [model][split]
};

struct CvResult {
  std::vector<std::string> models;
  int K = 0;
  int replicates = 0;
  std::vector<AreaScore> areas;  // identifier order, whole universe
  AreaWeights q;                 // renormalized over scored areas
  std::vector<double> naive_q;     // per model
  std::vector<double> adjusted_q;  // per model

  int model_index(std::string_view name) const;
  const AreaScore* find(std::string_view area) const;
};

/// Naive and adjusted scores for each model. `assignments` is one K-fold
/// assignment or the repeats of a two-fold scheme; with repeats the naive
/// term, v_hat and c_hat are averaged over repeats before forming the
/// adjusted score.
CvResult cv_scores(const SurveyDataset& dataset, const std::vector<FoldAssignment>& assignments,
                   const std::vector<ModelSpec>& models, const AreaWeights& q,
                   const CvOptions& options = {});

/// Score terms for one area from split-level values (model predictions and
/// held-out directs of equal length, K entries).
struct ScoreTerms {
  double naive = 0.0, v_hat = 0.0, c_hat = 0.0, adjusted = 0.0;
};
ScoreTerms score_terms(std::span<const double> predictions, std::span<const double> directs);

struct AreaBound {
  std::string area_id;
  double t = 0.0;
};

struct BoundReport {
  std::vector<AreaBound> areas;
  double t_q = 0.0;
  const AreaBound* find(std::string_view area) const;
};

/// t_i = 2 sqrt(2 var(direct_i) (var_a,i + var_b,i)) over the areas of `q`,
/// aggregated as sum q_i t_i.
BoundReport error_bound_adjusted(const std::vector<DirectEstimate>& direct_full,
                                 const AreaEstimates& fit_a, const AreaEstimates& fit_b,
                                 const AreaWeights& q);

/// t_naive_i = 2 sqrt(mean_k var(direct_k,i) * mean_k (pred_a,k,i - pred_b,k,i)^2)
/// from per-area split-level values; splits with NaN entries are skipped.
BoundReport error_bound_naive(const std::map<std::string, std::vector<double>>& fold_direct_variances,
                              const std::map<std::string, std::vector<double>>& fold_model_diffs,
                              const AreaWeights& q);
BoundReport error_bound_naive(const CvResult& cv, int model_a, int model_b);

enum class Decision { kPreferA, kPreferB, kInconclusive };
std::string_view decision_name(Decision d);

/// Inconclusive iff |difference| <= threshold; otherwise the smaller score wins.
Decision decide(double difference, double threshold);

struct AreaVerdict {
  std::string area_id;
  double difference = 0.0;
  double t = 0.0;
  Decision decision = Decision::kInconclusive;
  double naive_difference = 0.0;
  double t_naive = 0.0;
  Decision naive_decision = Decision::kInconclusive;
};

struct Verdict {
  std::string model_a, model_b;
  double score_a = 0.0, score_b = 0.0;
  double difference = 0.0;  // score_a - score_b
  double threshold = 0.0;   // t_q
  Decision decision = Decision::kInconclusive;
  double naive_a = 0.0, naive_b = 0.0;
  double naive_difference = 0.0;
  double naive_threshold = 0.0;
  Decision naive_decision = Decision::kInconclusive;
  std::vector<AreaVerdict> per_area;

  std::string preferred() const;  // model name, or "inconclusive"
};

Verdict make_verdict(const CvResult& cv, int model_a, int model_b, const BoundReport& adjusted,
                     const BoundReport& naive);

struct Comparison {
  Verdict verdict;
  CvResult cv;
  BoundReport bounds;
  BoundReport naive_bounds;
  std::vector<DirectEstimate> directs;  // full sample
  AreaEstimates fit_a, fit_b;           // full sample
};

/// Fold assignment, held-out directs, training fits, adjusted scores,
/// full-sample bounds and the decision rule, end to end.
Comparison compare_models(const SurveyDataset& dataset, const ModelSpec& spec_a,
                          const ModelSpec& spec_b, const CvSettings& settings,
                          const AreaWeights& q, std::uint64_t seed, const CvOptions& options = {});

struct LoaoArea {
  std::string area_id;
  double prediction = 0.0;
  double prediction_variance = 0.0;
  double direct = 0.0;
  double squared_error = 0.0;
};

struct LoaoResult {
  std::string model;
  double score = 0.0;
  AreaWeights q;  // renormalized over areas with a full-sample direct estimate
  std::vector<LoaoArea> areas;
};

/// Leave-one-area-out: refit without each area and score the prediction
/// against that area's full-sample direct estimate.
LoaoResult loao_score(const SurveyDataset& dataset, const ModelSpec& spec, const AreaWeights& q,
                      const CvOptions& options = {});

struct ValidationArea {
  std::string area_id;
  double prediction = 0.0;
  double direct = 0.0;
  double direct_variance = 0.0;
  double score = 0.0;  // (prediction - direct)^2 - direct_variance
};

struct ValidationResult {
  std::string model;
  double score = 0.0;
  AreaWeights q;
  std::vector<ValidationArea> areas;
  std::vector<std::string> excluded;
};

/// Training fit on one survey scored against an independent survey's direct
/// estimates, removing the validation sampling variance.
ValidationResult independent_validation_score(const SurveyDataset& train,
                                              const SurveyDataset& validation,
                                              const ModelSpec& spec, const AreaWeights& q,
                                              const CvOptions& options = {});

nlohmann::json verdict_to_json(const Verdict& v);
/// Columns: area,naive_a,naive_b,adjusted_a,adjusted_b,v_hat,c_hat_a,c_hat_b,diff,t_i,decision
void write_verdict_csv(std::ostream& out, const Comparison& c);

}  // namespace saecv
