#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fairmix/distributions.hpp"
#include "fairmix/race.hpp"

namespace fairmix {

/// One published row: four per-race accuracies with the printed mean and
/// variance, recomputed through fairness_report.
struct FixtureRow {
  std::string source;
  std::size_t line = 0;
  SubjectCounts subjects;
  PerRace<double> accuracy{};
  double published_mean = 0.0;
  double published_variance = 0.0;
  double mean = 0.0;
  double variance = 0.0;
  double mean_diff = 0.0;      ///< computed - published
  double variance_diff = 0.0;  ///< computed - published
  bool pass = false;           ///< both diffs within tolerance

  /// Largest variance change explainable by the accuracies having been
  /// rounded to two decimals before printing (first order plus a 1e-4
  /// second-order allowance and the variance's own rounding).
  double rounding_bound = 0.0;
  bool within_rounding = false;
};

struct FixtureReport {
  double tolerance = 0.015;
  std::vector<FixtureRow> rows;

  std::size_t failures() const;
  bool all_pass() const { return failures() == 0; }
  std::size_t rounding_failures() const;
};

/// Fixture CSV columns: african_subj, asian_subj, cauc_subj, indian_subj,
/// acc_afr, acc_asi, acc_cau, acc_ind, acc_mean, acc_var. `path` is a file or
/// a directory of *.csv files (read in name order). Throws
/// std::runtime_error on malformed rows.
FixtureReport verify_fixtures(const std::filesystem::path& path, double tolerance = 0.015);
FixtureReport verify_fixture_files(const std::vector<std::filesystem::path>& files, double tolerance = 0.015);

}  // namespace fairmix
