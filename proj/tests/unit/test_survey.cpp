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

#include <sstream>

#include <gtest/gtest.h>

#include "helpers.hpp"
#include "saecv/direct.hpp"
#include "saecv/error.hpp"
#include "saecv/survey.hpp"

using namespace saecv;
using saecv::testing::random_dataset;
using saecv::testing::unit;

TEST(SurveyLoad, FiveRowTable) {
  std::istringstream in(
      "stratum,psu,ssu,area,weight,y\n"
      "s,p1,h1,A,1,0\n"
      "s,p1,h2,A,1,1\n"
      "s,p1,h3,A,1,1\n"
      "s,p1,h4,A,1,0\n"
      "s,p1,h5,A,1,1\n");
  const auto ds = load_survey(in);
  EXPECT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.num_areas(), 1u);
  EXPECT_EQ(ds.num_strata(), 1u);
  EXPECT_EQ(ds.num_psus(), 1u);
  EXPECT_EQ(ds.units()[0].unit_id, "r2");
}

TEST(SurveyLoad, OutcomeTwoIsDomainErrorCitingRow) {
  std::istringstream in("stratum,psu,ssu,area,weight,y\ns,p1,h1,A,1,0\ns,p1,h2,A,1,2\n");
  try {
    load_survey(in);
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
}

TEST(SurveyLoad, RejectsNonpositiveWeight) {
  std::istringstream in("stratum,psu,ssu,area,weight,y\ns,p1,h1,A,0,0\n");
  EXPECT_THROW(load_survey(in), DomainError);
}

TEST(SurveyLoad, MalformedRowReportsLine) {
  std::istringstream in("stratum,psu,ssu,area,weight,y\ns,p1,h1,A,1,0\ns,p1,h2\n");
  try {
    load_survey(in);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(SurveyLoad, ClusterInTwoAreasNamesTheCluster) {
  std::vector<UnitRecord> units{unit("s", "c7", "h1", "A", 1, 0), unit("s", "c7", "h2", "B", 1, 1)};
  try {
    SurveyDataset::create(units);
    FAIL() << "expected a consistency error";
  } catch (const ConsistencyError& e) {
    EXPECT_NE(std::string(e.what()).find("c7"), std::string::npos);
  }
}

TEST(SurveyLoad, ColumnMapping) {
  std::istringstream in("h;cl;hh;prov;wt;lit\ns;p1;h1;A;2.5;1\n");
  CsvColumns cols;
  cols.stratum = "h";
  cols.psu = "cl";
  cols.ssu = "hh";
  cols.area = "prov";
  cols.weight = "wt";
  cols.y = "lit";
  cols.delimiter = ';';
  const auto ds = load_survey(in, cols);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_DOUBLE_EQ(ds.units()[0].weight, 2.5);
  EXPECT_EQ(ds.units()[0].area_id, "A");
}

TEST(SurveyLoad, ExportRoundTrip) {
  const auto ds = random_dataset(11);
  std::ostringstream out;
  export_survey(out, ds, true);
  std::istringstream in(out.str());
  const auto back = load_survey(in);
  EXPECT_EQ(back, ds);
}

TEST(SurveyDataset, DesignIndexCoversEveryRowOnce) {
  const auto ds = random_dataset(3);
  std::vector<int> seen(ds.size(), 0);
  for (const auto& [stratum, psus] : ds.design_index())
    for (const auto& [psu, ssus] : psus)
      for (const auto& [ssu, rows] : ssus)
        for (auto r : rows) {
          ++seen[r];
          EXPECT_EQ(ds.units()[r].stratum_id, stratum);
          EXPECT_EQ(ds.units()[r].psu_id, psu);
          EXPECT_EQ(ds.units()[r].ssu_id, ssu);
        }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(SurveyDataset, SubsetKeepsUniverse) {
  const auto ds = random_dataset(5);
  std::vector<std::size_t> rows;
  for (auto r : ds.rows_in_area(0)) rows.push_back(r);
  const auto sub = ds.subset(rows);
  EXPECT_EQ(sub.area_ids(), ds.area_ids());
  EXPECT_EQ(sub.empty_areas().size(), ds.num_areas() - 1);
  const auto without = ds.without_area("area0");
  EXPECT_EQ(without.area_ids(), ds.area_ids());
  EXPECT_TRUE(without.rows_in_area(0).empty());
}

TEST(AreaWeights, EqualMode) {
  std::vector<UnitRecord> units;
  for (int a = 0; a < 10; ++a) units.push_back(unit("s", fmt::format("c{}", a), "h", fmt::format("A{}", a), 1, 0));
  const auto ds = SurveyDataset::create(units);
  const auto q = area_weights(WeightMode::kEqual, ds);
  for (const auto& [area, qi] : q.q) EXPECT_DOUBLE_EQ(qi, 0.1);
  EXPECT_NO_THROW(q.validate());
}

TEST(AreaWeights, PopulationProportions) {
  std::vector<UnitRecord> units{unit("s", "c1", "h", "A", 1, 0), unit("s", "c2", "h", "B", 1, 0)};
  const auto ds = SurveyDataset::create(units);
  const auto q = area_weights(WeightMode::kPopulation, ds, std::map<std::string, double>{{"A", 300}, {"B", 700}});
  EXPECT_DOUBLE_EQ(q.at("A"), 0.3);
  EXPECT_DOUBLE_EQ(q.at("B"), 0.7);
}

TEST(AreaWeights, MissingAreaIsNamed) {
  std::vector<UnitRecord> units{unit("s", "c1", "h", "A", 1, 0), unit("s", "c2", "h", "Zed", 1, 0)};
  const auto ds = SurveyDataset::create(units);
  try {
    area_weights(WeightMode::kPopulation, ds, std::map<std::string, double>{{"A", 300}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("Zed"), std::string::npos);
  }
}

TEST(AreaWeights, RestrictedToRenormalizes) {
  AreaWeights q;
  q.q = {{"A", 0.2}, {"B", 0.3}, {"C", 0.5}};
  const auto r = q.restricted_to({"A", "C"});
  EXPECT_NEAR(r.at("A"), 0.2 / 0.7, 1e-15);
  EXPECT_NEAR(r.at("C"), 0.5 / 0.7, 1e-15);
  EXPECT_FALSE(r.contains("B"));
}

TEST(RescaleWeights, IdentityAndErrors) {
  const auto ds = random_dataset(9);
  EXPECT_EQ(rescale_weights(ds, 1.0), ds);
  EXPECT_THROW(rescale_weights(ds, 0.0), DomainError);
  EXPECT_THROW(rescale_weights(ds, -2.0), DomainError);
}

TEST(RescaleWeights, HajekInvariantToScale) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ds = random_dataset(seed);
    for (double factor : {5.0, 1.25, 1e3}) {
      const auto a = hajek_all(ds);
      const auto b = hajek_all(rescale_weights(ds, factor));
      for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_NEAR(a[i].point, b[i].point, 1e-14);
        EXPECT_NEAR(a[i].variance, b[i].variance, 1e-14);
      }
    }
  }
}
