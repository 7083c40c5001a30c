#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fairmix/evalproto.hpp"
#include "gen.hpp"
#include "oracles.hpp"

using namespace fairmix;

namespace {

using testgen::oracle_pair_accuracy;

}  // namespace

TEST_CASE("cosine similarity examples") {
  const std::vector<double> v{0.3, -2.0, 5.0}, neg{-0.3, 2.0, -5.0};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(v, neg) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}) ==
        doctest::Approx(0.7071).epsilon(1e-4));
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1}, std::vector<double>{1, 1}), std::invalid_argument);
}

TEST_CASE("pair accuracy examples") {
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    y.push_back(i % 2);
    s.push_back(i % 2 ? 0.9 : 0.1);
  }
  CHECK(pair_accuracy(s, y, 10).accuracy == doctest::Approx(100.0));
  std::fill(s.begin(), s.end(), 0.4);
  CHECK(pair_accuracy(s, y, 10).accuracy == doctest::Approx(50.0));
  const auto r = pair_accuracy(s, y, 4);
  CHECK(r.thresholds.size() == 4);
  CHECK(r.fold_accuracy.size() == 4);
}

TEST_CASE("pair accuracy preconditions") {
  std::vector<double> s(10, 0.0);
  std::vector<int> y(10, 0);
  CHECK_THROWS_AS(pair_accuracy(s, y, 1), std::invalid_argument);
  CHECK_THROWS_AS(pair_accuracy(s, y, 3), std::invalid_argument);
  std::vector<int> short_labels(9, 0);
  CHECK_THROWS_AS(pair_accuracy(s, short_labels, 5), std::invalid_argument);
}

TEST_CASE("pair accuracy equals the exhaustive-threshold oracle") {
  testgen::Gen g(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = testgen::random_pair_instance(g);
    INFO("trial " << trial << " n=" << in.scores.size() << " folds=" << in.folds);
    CHECK(pair_accuracy(in.scores, in.labels, in.folds).accuracy ==
          doctest::Approx(oracle_pair_accuracy(in.scores, in.labels, in.folds)).epsilon(1e-12));
  }
}

TEST_CASE("pair accuracy is invariant under strictly increasing transforms") {
  testgen::Gen g(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = testgen::random_pair_instance(g);
    const double base = pair_accuracy(in.scores, in.labels, in.folds).accuracy;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> t = in.scores;
      for (auto& x : t) x = k == 0 ? std::exp(3.0 * x) : k == 1 ? x * x * x + x : std::atan(x) * 10.0 - 4.0;
      CHECK(pair_accuracy(t, in.labels, in.folds).accuracy == base);
    }
  }
}

TEST_CASE("pair accuracy is unchanged when every pair is repeated within its fold") {
  testgen::Gen g(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = testgen::random_pair_instance(g);
    const std::size_t per = in.scores.size() / in.folds;
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t f = 0; f < in.folds; ++f) {
      for (int rep = 0; rep < 2; ++rep) {
        for (std::size_t i = f * per; i < (f + 1) * per; ++i) {
          s.push_back(in.scores[i]);
          y.push_back(in.labels[i]);
        }
      }
    }
    CHECK(pair_accuracy(s, y, in.folds).accuracy ==
          doctest::Approx(pair_accuracy(in.scores, in.labels, in.folds).accuracy).epsilon(1e-12));
  }
}

TEST_CASE("explicit fold ids override contiguous blocks") {
  testgen::Gen g(9);
  const auto in = testgen::random_pair_instance(g);
  const std::size_t per = in.scores.size() / in.folds;
  std::vector<int> folds(in.scores.size());
  for (std::size_t i = 0; i < folds.size(); ++i) folds[i] = static_cast<int>(i / per);
  CHECK(pair_accuracy(in.scores, in.labels, in.folds, folds).accuracy ==
        pair_accuracy(in.scores, in.labels, in.folds).accuracy);
  // Reversing the pair order with matching fold ids changes nothing.
  std::vector<double> rs(in.scores.rbegin(), in.scores.rend());
  std::vector<int> ry(in.labels.rbegin(), in.labels.rend()), rf(folds.rbegin(), folds.rend());
  CHECK(pair_accuracy(rs, ry, in.folds, rf).accuracy ==
        doctest::Approx(pair_accuracy(in.scores, in.labels, in.folds).accuracy));
}

TEST_CASE("fairness report examples") {
  auto r = fairness_report({71.68, 71.70, 80.68, 75.25});
  CHECK(r.mean == doctest::Approx(74.83).epsilon(0.01 / 74.83));
  CHECK(std::abs(r.mean - 74.83) <= 0.01);
  CHECK(std::abs(r.variance - 13.53) <= 0.01);
  r = fairness_report({78.92, 71.05, 77.28, 76.65});
  CHECK(std::abs(r.mean - 75.97) <= 0.01);
  CHECK(std::abs(r.variance - 8.77) <= 0.01);
  CHECK(fairness_report({63.5, 63.5, 63.5, 63.5}).variance == 0.0);
  CHECK_THROWS(fairness_report({1.0, std::nan(""), 2.0, 3.0}));
}

TEST_CASE("population variance agrees between its two forms") {
  testgen::Gen g(31);
  for (int i = 0; i < 1000; ++i) {
    PerRace<double> a{g.uniform(40, 100), g.uniform(40, 100), g.uniform(40, 100), g.uniform(40, 100)};
    const auto r = fairness_report(a);
    double m = 0, sq = 0;
    for (double x : a) {
      m += x / 4.0;
      sq += x * x / 4.0;
    }
    CHECK(r.mean == doctest::Approx(m).epsilon(1e-14));
    CHECK(std::abs(r.variance - (sq - m * m)) < 1e-9);
  }
}

TEST_CASE("a perfect embedding scores 100 on every race") {
  // Subject s of race r embeds to unit vector e_(4s + r) in 64 dims.
  std::vector<std::string> ids;
  Eigen::MatrixXd rows(4 * 16 * 2, 64);
  rows.setZero();
  for (int r = 0; r < 4; ++r)
    for (int s = 0; s < 16; ++s)
      for (int k = 0; k < 2; ++k) {
        const auto row = static_cast<Eigen::Index>(ids.size());
        ids.push_back(std::to_string(r) + "_" + std::to_string(s) + "_" + std::to_string(k));
        rows(row, 4 * (s % 16) + r) = 1.0 + 0.1 * k;
      }
  EmbeddingTable table(ids, rows);
  PairSet ps;
  ps.folds = 4;
  for (int r = 0; r < 4; ++r) {
    for (int s = 0; s < 16; ++s) {
      const auto a = std::to_string(r) + "_" + std::to_string(s) + "_0";
      if (s % 2 == 0) {
        ps.pairs[static_cast<std::size_t>(r)].push_back({a, std::to_string(r) + "_" + std::to_string(s) + "_1", true});
      } else {
        ps.pairs[static_cast<std::size_t>(r)].push_back(
            {a, std::to_string(r) + "_" + std::to_string((s + 5) % 16) + "_1", false});
      }
    }
  }
  const auto rep = evaluate_embeddings(table, ps);
  for (double a : rep.accuracy) CHECK(a == doctest::Approx(100.0));
  CHECK(rep.variance == doctest::Approx(0.0));
}

TEST_CASE("random embeddings score near chance") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    testgen::Gen g(seed);
    std::vector<std::string> ids;
    Eigen::MatrixXd rows = g.matrix(4 * 1200, 16);
    for (int i = 0; i < 4 * 1200; ++i) ids.push_back("img" + std::to_string(i));
    EmbeddingTable table(ids, rows);
    PairSet ps;
    for (int r = 0; r < 4; ++r)
      for (int p = 0; p < 600; ++p) {
        const int base = r * 1200 + 2 * p;
        ps.pairs[static_cast<std::size_t>(r)].push_back(
            {ids[static_cast<std::size_t>(base)], ids[static_cast<std::size_t>(base + 1)], (p / 30) % 2 == 0});
      }
    const auto rep = evaluate_embeddings(table, ps);
    for (double a : rep.accuracy) {
      CHECK(a >= 40.0);
      CHECK(a <= 60.0);
    }
  }
}

TEST_CASE("reordering races in the pair set reorders the accuracies") {
  testgen::Gen g(4);
  std::vector<std::string> ids;
  Eigen::MatrixXd rows = g.matrix(400, 8);
  for (int i = 0; i < 400; ++i) ids.push_back("x" + std::to_string(i));
  EmbeddingTable table(ids, rows);
  PairSet ps;
  for (int r = 0; r < 4; ++r)
    for (int p = 0; p < 40; ++p)
      ps.pairs[static_cast<std::size_t>(r)].push_back({ids[static_cast<std::size_t>(r * 100 + p)],
                                                       ids[static_cast<std::size_t>(r * 100 + p + 50)],
                                                       (p / 2) % 2 == 0});
  PairSet swapped = ps;
  std::swap(swapped.pairs[0], swapped.pairs[2]);
  std::swap(swapped.pairs[1], swapped.pairs[3]);
  const auto a = evaluate_embeddings(table, ps), b = evaluate_embeddings(table, swapped);
  CHECK(a.accuracy[0] == b.accuracy[2]);
  CHECK(a.accuracy[2] == b.accuracy[0]);
  CHECK(a.accuracy[1] == b.accuracy[3]);
  CHECK(a.accuracy[3] == b.accuracy[1]);
  CHECK(a.mean == doctest::Approx(b.mean));
}

TEST_CASE("pair files round-trip and are validated") {
  const auto dir = testgen::scratch_dir("pairs");
  PairSet ps;
  ps.folds = 2;
  for (int r = 0; r < 4; ++r)
    for (int p = 0; p < 4; ++p)
      ps.pairs[static_cast<std::size_t>(r)].push_back(
          {"a" + std::to_string(r * 10 + p), "b" + std::to_string(p), p % 2 == 0, p / 2});
  write_pairs(dir / "p.csv", ps);
  const auto back = read_pairs(dir / "p.csv", 2);
  CHECK(back.size() == 16);
  for (int r = 0; r < 4; ++r)
    for (int p = 0; p < 4; ++p) {
      const auto& x = back.pairs[static_cast<std::size_t>(r)][static_cast<std::size_t>(p)];
      CHECK(x.a == "a" + std::to_string(r * 10 + p));
      CHECK(x.is_match == (p % 2 == 0));
      CHECK(x.fold == p / 2);
    }

  testgen::spit(dir / "bad.csv", "race,image_a,image_b,is_match\nAfrican,a,b,1\nAfrican,c,d,1\n");
  CHECK_THROWS(read_pairs(dir / "bad.csv", 2));
  testgen::spit(dir / "odd.csv", "race,image_a,image_b,is_match\nAfrican,a,b,1\nAfrican,c,d,0\nAfrican,e,f,1\n");
  CHECK_THROWS(read_pairs(dir / "odd.csv", 2));
}

TEST_CASE("report rows use the tabulated column layout") {
  CHECK(report_columns() == std::vector<std::string>{"african_subj", "asian_subj", "cauc_subj", "indian_subj",
                                                     "acc_afr", "acc_asi", "acc_cau", "acc_ind", "acc_mean",
                                                     "acc_var"});
  EvalMetadata meta;
  meta.subjects = SubjectCounts{{1250, 1250, 1250, 1250}};
  const auto fields = report_fields(fairness_report({71.68, 71.70, 80.68, 75.25}, meta));
  CHECK(fields[0] == "1250");
  CHECK(fields[4] == "71.680000");
  CHECK(format_metric(13.5275) == "13.527500");
}

TEST_CASE("embedding table lookups") {
  Eigen::MatrixXd rows(2, 2);
  rows << 1, 2, 3, 4;
  EmbeddingTable t({"a", "b"}, rows);
  CHECK(t.contains("b"));
  CHECK(t.at("b") == Eigen::Vector2d(3, 4));
  CHECK_THROWS(t.at("c"));
  CHECK_THROWS(EmbeddingTable({"a"}, rows));
}
