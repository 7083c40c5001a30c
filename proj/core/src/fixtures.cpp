#include "fairmix/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "fairmix/csv.hpp"
#include "fairmix/evalproto.hpp"

namespace fairmix {

std::size_t FixtureReport::failures() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const FixtureRow& r) { return !r.pass; }));
}

std::size_t FixtureReport::rounding_failures() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const FixtureRow& r) { return !r.within_rounding; }));
}

FixtureReport verify_fixture_files(const std::vector<std::filesystem::path>& files, double tolerance) {
  if (!(tolerance >= 0.0)) throw std::invalid_argument("fixture tolerance must be >= 0");
  FixtureReport report;
  report.tolerance = tolerance;
  static constexpr const char* kSubj[] = {"african_subj", "asian_subj", "cauc_subj", "indian_subj"};
  static constexpr const char* kAcc[] = {"acc_afr", "acc_asi", "acc_cau", "acc_ind"};
  for (const auto& file : files) {
    const auto t = csv::read_file(file);
    std::array<std::size_t, 4> subj{}, acc{};
    for (std::size_t k = 0; k < kNumRaces; ++k) {
      subj[k] = t.require_column(kSubj[k]);
      acc[k] = t.require_column(kAcc[k]);
    }
    const auto c_mean = t.require_column("acc_mean");
    const auto c_var = t.require_column("acc_var");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& row = t.rows[i];
      const std::string where = fmt::format("{}:{}", file.string(), t.lines[i]);
      if (row.size() != t.header.size()) throw std::runtime_error(where + ": wrong number of fields");
      FixtureRow fr;
      fr.source = file.filename().string();
      fr.line = t.lines[i];
      for (std::size_t k = 0; k < kNumRaces; ++k) {
        fr.subjects.counts[k] = csv::to_int(row[subj[k]], where);
        fr.accuracy[k] = csv::to_double(row[acc[k]], where);
      }
      fr.published_mean = csv::to_double(row[c_mean], where);
      fr.published_variance = csv::to_double(row[c_var], where);

      const auto rep = fairness_report(fr.accuracy);
      fr.mean = rep.mean;
      fr.variance = rep.variance;
      fr.mean_diff = fr.mean - fr.published_mean;
      fr.variance_diff = fr.variance - fr.published_variance;
      fr.pass = std::abs(fr.mean_diff) <= tolerance && std::abs(fr.variance_diff) <= tolerance;

      // dV/dx_i = (x_i - mean)/2, each accuracy off by at most 0.005.
      double spread = 0.0;
      for (double a : fr.accuracy) spread += std::abs(a - fr.mean);
      fr.rounding_bound = 0.5 * spread * 0.005 + 0.005 + 1e-4;
      fr.within_rounding = std::abs(fr.mean_diff) <= tolerance &&
                           std::abs(fr.variance_diff) <= std::max(tolerance, fr.rounding_bound);
      report.rows.push_back(fr);
    }
  }
  return report;
}

FixtureReport verify_fixtures(const std::filesystem::path& path, double tolerance) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no fixture CSVs in " + path.string());
  } else if (std::filesystem::exists(path)) {
    files.push_back(path);
  } else {
    throw std::runtime_error("fixture path not found: " + path.string());
  }
  return verify_fixture_files(files, tolerance);
}

}  // namespace fairmix
