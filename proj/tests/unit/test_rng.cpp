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

#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "saecv/parallel.hpp"
#include "saecv/rng.hpp"

using namespace saecv;

TEST(Seeds, DistinctChildren) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(derive_seed(1, "replicate", i));
  seen.insert(derive_seed(1, "survey"));
  seen.insert(derive_seed(1, "folds"));
  seen.insert(derive_seed(2, "replicate", 0));
  EXPECT_EQ(seen.size(), 10003u);
  static_assert(derive_seed(7, "a", 3) == derive_seed(7, "a", 3));
}

TEST(Seeds, UniformRange) {
  Engine eng = make_engine(3);
  double lo = 1, hi = 0, mean = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = uniform01(eng);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    mean += u / 100000;
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LT(hi, 1.0);
  EXPECT_NEAR(mean, 0.5, 0.005);
}

TEST(ParallelFor, RunsEveryIndexAndRethrowsLowest) {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (int h : hits) EXPECT_EQ(h, 1);
  for (int jobs : {1, 4}) {
    std::vector<int> ran(50, 0);
    try {
      parallel_for(ran.size(), jobs, [&](std::size_t i) {
        ran[i] = 1;
        if (i == 30 || i == 7) throw std::runtime_error(std::to_string(i));
      });
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "7");
    }
    for (int r : ran) EXPECT_EQ(r, 1);
  }
}
