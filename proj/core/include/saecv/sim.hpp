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

// Design-based simulation: synthetic frames and finite populations, replicate
// two-stage stratified surveys, oracle errors against the known truth and
// Monte Carlo diagnostics for the score decomposition, the remainder bound
// and the leave-one-area-out gap.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "saecv/cv.hpp"
#include "saecv/direct.hpp"
#include "saecv/models.hpp"
#include "saecv/survey.hpp"

namespace saecv {

struct AreaConfig {
  std::string area_id;
  std::string stratum_id;
  double prevalence = 0.5;
  /// Optional within-area heterogeneity: frame clusters are dealt round-robin
  /// to these sub-area prevalences instead of sharing `prevalence`.
  std::vector<double> subarea_prevalences;
  int frame_clusters = 200;
  int size_min = 80;  // cluster sizes ~ discrete uniform [size_min, size_max]
  int size_max = 200;
};

struct ScenarioConfig {
  std::vector<AreaConfig> areas;
  double d_pop = 1e-5;
  int clusters_per_stratum = 50;
  int households_per_cluster = 30;
  int replicates = 50;
  std::vector<ModelSpec> models;
  /// (model_a, model_b) pairs; differences are reported as a - b.
  std::vector<std::pair<std::string, std::string>> comparisons;
  WeightMode q_mode = WeightMode::kPopulation;
  std::uint64_t master_seed = 20240101;
  CvSettings cv{};
  bool run_loao = true;
  DirectOptions direct{};

  /// Throws ConfigError on infeasible or inconsistent settings.
  void validate() const;
  const ModelSpec& model(std::string_view name) const;
};

struct FrameCluster {
  std::string cluster_id;
  std::string area_id;
  std::string stratum_id;
  double prevalence = 0.5;  // the cluster's sub-area prevalence
  int size = 0;             // N_c, households (one respondent each)
};

struct Frame {
  std::vector<FrameCluster> clusters;  // area order, then cluster index
};

struct PopulationCluster {
  std::string cluster_id;
  std::string area_id;
  std::string stratum_id;
  int N = 0;
  int Y = 0;
};

struct SyntheticPopulation {
  std::vector<PopulationCluster> clusters;
  std::map<std::string, double> truth;       // area -> sum Y / sum N
  std::map<std::string, double> population;  // area -> sum N

  /// Recomputes truth and population from the clusters.
  void summarize();
};

Frame build_frame(const ScenarioConfig& config, std::uint64_t seed);

/// Y_c ~ BetaBinomial(N_c, p_c, d_pop) with the shared ICC parameterization.
SyntheticPopulation generate_population(const Frame& frame, const ScenarioConfig& config,
                                        std::uint64_t seed);

/// Stage 1: randomized systematic PPS (frame order shuffled, random start) of
/// clusters_per_stratum clusters per stratum on N_c (certainty selections removed first). Stage 2: simple
/// random sample of households_per_cluster households per cluster with
/// outcomes drawn without replacement from the cluster's (Y_c, N_c - Y_c).
/// Clusters smaller than the take are taken whole.
SurveyDataset draw_survey(const SyntheticPopulation& population, const ScenarioConfig& config,
                          std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

/// First-stage inclusion probabilities n N_c / sum N over one stratum's
/// sizes, capped at one with the excess spread over the remaining clusters.
std::vector<double> pps_inclusion_probabilities(const std::vector<int>& sizes, int n);

/// Indices selected by systematic sampling on inclusion probabilities that
/// sum to an integer n, with start u in [0, 1).
std::vector<std::size_t> systematic_select(const std::vector<double>& pi, double u);

/// Sum of (estimate - truth)^2 weighted by q over the areas of q.
double oracle_error(const std::map<std::string, double>& estimates,
                    const std::map<std::string, double>& truth, const AreaWeights& q);

// ---------------------------------------------------------------------------
// Replicate study

struct ModelReplicate {
  std::string model;
  double oracle_full = 0.0;      // sum q (theta_S - theta)^2
  double oracle_training = 0.0;  // fold mean of sum q (theta^(-k) - theta)^2
  double naive = 0.0;
  double adjusted = 0.0;
  std::optional<double> loao;
  double loao_oracle = 0.0;      // sum q (theta^(-i) - theta)^2
};

struct PairReplicate {
  std::string model_a, model_b;
  Verdict verdict;
  double oracle_full_diff = 0.0;
  double oracle_training_diff = 0.0;
  std::optional<double> loao_diff;
  double t_q = 0.0;
  double t_naive_q = 0.0;
};

struct AreaReplicate {
  std::string area_id;
  double truth = 0.0;
  double q = 0.0;
  double direct = 0.0;
  double direct_variance = 0.0;
  double b_hat = 0.0;  // fold mean of held-out direct - truth
  std::vector<double> model_mean;      // per model, full sample
  std::vector<double> model_variance;  // per model, full sample
  std::vector<double> d_hat;           // per model: fold mean of training prediction - truth
  std::vector<double> adjusted;        // per model
  std::vector<double> naive;           // per model
  std::vector<double> oracle_training; // per model: fold mean of (theta^(-k) - theta)^2
  std::vector<double> loao_prediction; // per model, empty without LOAO
  std::vector<double> t;               // per comparison
};

struct ReplicateResult {
  int index = 0;
  bool ok = false;
  std::string error;
  std::vector<ModelReplicate> models;
  std::vector<PairReplicate> pairs;
  std::vector<AreaReplicate> areas;
};

struct StudyOptions {
  int jobs = 1;
  /// Called after each finished replicate (from worker threads, serialized).
  std::function<void(const ReplicateResult&)> progress;
};

struct StudyResult {
  ScenarioConfig config;
  Frame frame;
  SyntheticPopulation population;
  AreaWeights q;
  std::vector<ReplicateResult> replicates;  // index order; failed ones kept with ok = false
  int failures = 0;
};

/// Per replicate: draw a survey, fit every model on the full sample, run the
/// cross-validation comparison for every configured pair, optionally LOAO,
/// and evaluate oracle errors against the truth. Throws Error if more than
/// 10% of replicates fail.
StudyResult run_study(const ScenarioConfig& config, const StudyOptions& options = {});

struct RemainderBoundArea {
  std::string area_id;
  double e_hat = 0.0;  // -2 cov_rep(b, d_a - d_b)
  double t_median = 0.0;
  double t_max = 0.0;
  double t_min = 0.0;
  int replicates_below = 0;  // replicates whose t_i is below |e_hat|
};

struct RemainderBoundReport {
  std::string model_a, model_b;
  std::vector<RemainderBoundArea> areas;
  int median_violations = 0;
  int max_violations = 0;
};

/// Compares the cross-replicate remainder estimate with the per-replicate
/// bounds for one configured pair. Needs at least 30 successful replicates.
RemainderBoundReport remainder_bound_check(const StudyResult& study, std::size_t pair_index);

struct LoaoGapArea {
  std::string area_id;
  double mse_extrapolation = 0.0;  // mean (theta^(-i) - theta)^2
  double mse_smoothing = 0.0;      // mean (theta_S - theta)^2
  double gap = 0.0;
  double variance_part = 0.0;
  double bias_part = 0.0;
  double gap_se = 0.0;
};

struct LoaoGapReport {
  std::string model;
  std::vector<LoaoGapArea> areas;
  double weighted_gap = 0.0;  // sum q gap
};

/// Both sides of the extrapolation-minus-smoothing MSE decomposition across
/// replicates (variances with 1/R normalization).
LoaoGapReport loao_gap_check(const StudyResult& study, std::string_view model);

/// Training estimator used by the score-decomposition check: maps a training
/// sample to per-area estimates (universe order).
using TrainingEstimator = std::function<std::vector<double>(const SurveyDataset&)>;

struct DecompositionSettings {
  int surveys = 200;
  int partitions = 200;
  int K = 5;
  int jobs = 1;
};

struct DecompositionArea {
  std::string area_id;
  double m_hat_mean = 0.0;  // mean over surveys of m_hat_S
  double oracle = 0.0;      // mean over surveys and fresh partitions of (A - theta)^2
  double relative_bias = 0.0;
  double se = 0.0;          // MC standard error of m_hat_mean
  double b_mean = 0.0;      // mean over surveys of b_i
  double b_se = 0.0;
};

struct DecompositionReport {
  std::vector<DecompositionArea> areas;
  int surveys = 0;
  int partitions = 0;
};

/// For each survey S, evaluates v, b, c and d over `partitions` CV-SSU fold
/// draws (B = held-out fold, A = the rest) and forms m_hat_S; the oracle
/// training error is evaluated on an independent set of partition draws of
/// the same surveys. Throws ConfigError below 100 partitions.
DecompositionReport decomposition_check(const SyntheticPopulation& population, const ScenarioConfig& config,
                              const TrainingEstimator& estimator, const DecompositionSettings& settings,
                              std::uint64_t seed);

/// Cross-replicate summaries: per comparison, fractions of conclusive and
/// correctly signed verdicts; per model, mean oracle errors and score gaps;
/// remainder-bound and LOAO-gap diagnostics.
nlohmann::json study_summary(const StudyResult& study);

/// replicates.csv, areas.csv and summary.json under `dir`.
void write_study_outputs(const StudyResult& study, const std::filesystem::path& dir);

void write_frame_csv(std::ostream& out, const Frame& frame);
void write_population_csv(std::ostream& out, const SyntheticPopulation& population);
void write_truth_csv(std::ostream& out, const SyntheticPopulation& population);

}  // namespace saecv
