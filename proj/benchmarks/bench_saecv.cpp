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

// Timings for one replicate of the acceptance scenario: survey draw, direct
// estimates, model fits and the K-fold score computation.

#include <benchmark/benchmark.h>

#include <filesystem>

#include "saecv/config.hpp"
#include "saecv/cv.hpp"
#include "saecv/direct.hpp"
#include "saecv/models.hpp"
#include "saecv/rng.hpp"
#include "saecv/sim.hpp"

namespace {

using namespace saecv;

struct Fixture {
  ScenarioConfig cfg;
  SyntheticPopulation pop;
  SurveyDataset survey;

  Fixture() {
    cfg = load_study_config(std::filesystem::path(SAECV_SOURCE_DIR) / "configs" / "acceptance.toml").scenario;
    const auto frame = build_frame(cfg, derive_seed(cfg.master_seed, "frame"));
    pop = generate_population(frame, cfg, derive_seed(cfg.master_seed, "population"));
    survey = draw_survey(pop, cfg, derive_seed(cfg.master_seed, "bench"));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_DrawSurvey(benchmark::State& state) {
  const auto& f = fixture();
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(draw_survey(f.pop, f.cfg, derive_seed(1, "draw", i++)));
}
BENCHMARK(BM_DrawSurvey)->Unit(benchmark::kMillisecond);

void BM_Hajek(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(hajek_all(f.survey));
}
BENCHMARK(BM_Hajek)->Unit(benchmark::kMicrosecond);

void BM_Fit(benchmark::State& state) {
  const auto& f = fixture();
  const auto& spec = f.cfg.models[static_cast<std::size_t>(state.range(0))];
  state.SetLabel(spec.name);
  for (auto _ : state) benchmark::DoNotOptimize(fit_model(f.survey, spec, 1));
}
BENCHMARK(BM_Fit)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_CvScores(benchmark::State& state) {
  const auto& f = fixture();
  const auto folds = make_assignments(f.survey, f.cfg.cv, 1);
  const auto q = area_weights(WeightMode::kEqual, f.survey);
  for (auto _ : state) benchmark::DoNotOptimize(cv_scores(f.survey, folds, f.cfg.models, q));
}
BENCHMARK(BM_CvScores)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
