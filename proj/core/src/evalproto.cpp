#include "fairmix/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "fairmix/csv.hpp"

namespace fairmix {

std::size_t PairSet::size() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

void PairSet::validate() const {
  if (folds < 2) throw std::invalid_argument("pair set needs at least 2 folds");
  for (Race r : kAllRaces) {
    const auto& list = pairs[index_of(r)];
    if (list.size() % folds != 0) {
      throw std::invalid_argument(fmt::format("{} has {} pairs, not divisible by {} folds", race_name(r),
                                              list.size(), folds));
    }
    const auto matches = std::count_if(list.begin(), list.end(), [](const Pair& p) { return p.is_match; });
    if (static_cast<std::size_t>(matches) * 2 != list.size()) {
      throw std::invalid_argument(fmt::format("{} pairs are unbalanced: {} matches of {}", race_name(r),
                                              matches, list.size()));
    }
    const auto explicit_folds = std::count_if(list.begin(), list.end(), [](const Pair& p) { return p.fold >= 0; });
    if (explicit_folds != 0 && static_cast<std::size_t>(explicit_folds) != list.size()) {
      throw std::invalid_argument(fmt::format("{} pairs mix explicit and implicit folds", race_name(r)));
    }
    for (const auto& p : list) {
      if (p.fold >= static_cast<int>(folds)) {
        throw std::invalid_argument(fmt::format("fold {} out of range for {} folds", p.fold, folds));
      }
    }
  }
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  const Eigen::Map<const Eigen::VectorXd> va(a.data(), static_cast<Eigen::Index>(a.size()));
  const Eigen::Map<const Eigen::VectorXd> vb(b.data(), static_cast<Eigen::Index>(b.size()));
  return cosine_similarity(va, vb);
}

double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

namespace {

// Lowest threshold maximising accuracy on (score, label) items.
double best_threshold(std::vector<std::pair<double, int>> items) {
  std::sort(items.begin(), items.end());
  const std::size_t n = items.size();
  std::size_t matches = 0;
  for (const auto& it : items) matches += static_cast<std::size_t>(it.second);
  // k items below the threshold are predicted non-match.
  std::size_t below_nonmatch = 0, below_match = 0;
  std::size_t best_correct = matches;  // k = 0: everything predicted match
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= n; ++k) {
    if (items[k - 1].second) ++below_match; else ++below_nonmatch;
    if (k < n && items[k].first == items[k - 1].first) continue;
    const std::size_t correct = below_nonmatch + (matches - below_match);
    if (correct > best_correct) {
      best_correct = correct;
      best = k < n ? items[k].first : std::numeric_limits<double>::infinity();
    }
  }
  return best;
}

}  // namespace

PairAccuracy pair_accuracy(std::span<const double> scores, std::span<const int> labels, std::size_t folds,
                           std::span<const int> fold_ids) {
  if (folds < 2) throw std::invalid_argument("pair_accuracy needs at least 2 folds");
  if (scores.size() != labels.size()) throw std::invalid_argument("pair_accuracy: scores and labels differ in size");
  const std::size_t n = scores.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(scores[i])) throw std::invalid_argument("pair_accuracy: NaN score");
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("pair_accuracy: labels must be 0 or 1");
  }
  std::vector<int> fold(n);
  if (fold_ids.empty()) {
    if (n == 0 || n % folds != 0) {
      throw std::invalid_argument(fmt::format("pair_accuracy: {} pairs not divisible into {} folds", n, folds));
    }
    const std::size_t block = n / folds;
    for (std::size_t i = 0; i < n; ++i) fold[i] = static_cast<int>(i / block);
  } else {
    if (fold_ids.size() != n) throw std::invalid_argument("pair_accuracy: fold ids differ in size");
    std::vector<std::size_t> count(folds, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (fold_ids[i] < 0 || fold_ids[i] >= static_cast<int>(folds)) {
        throw std::invalid_argument(fmt::format("pair_accuracy: fold id {} out of range", fold_ids[i]));
      }
      fold[i] = fold_ids[i];
      ++count[static_cast<std::size_t>(fold_ids[i])];
    }
    if (std::find(count.begin(), count.end(), 0u) != count.end()) {
      throw std::invalid_argument("pair_accuracy: empty fold");
    }
  }

  PairAccuracy out;
  std::vector<std::pair<double, int>> train;
  for (std::size_t f = 0; f < folds; ++f) {
    train.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] != static_cast<int>(f)) train.emplace_back(scores[i], labels[i]);
    }
    const double t = best_threshold(train);
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (fold[i] != static_cast<int>(f)) continue;
      const int predicted = scores[i] >= t ? 1 : 0;
      correct += static_cast<std::size_t>(predicted == labels[i]);
      ++total;
    }
    out.thresholds.push_back(t);
    out.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(total));
  }
  out.accuracy = 100.0 * std::accumulate(out.fold_accuracy.begin(), out.fold_accuracy.end(), 0.0) /
                 static_cast<double>(folds);
  return out;
}

EvalReport fairness_report(const PerRace<double>& accuracy, EvalMetadata meta) {
  for (double a : accuracy) {
    if (!std::isfinite(a)) throw std::invalid_argument("fairness_report: non-finite accuracy");
  }
  EvalReport r;
  r.accuracy = accuracy;
  r.mean = (accuracy[0] + accuracy[1] + accuracy[2] + accuracy[3]) / 4.0;
  double ss = 0.0;
  for (double a : accuracy) ss += (a - r.mean) * (a - r.mean);
  r.variance = ss / 4.0;
  r.meta = std::move(meta);
  return r;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Eigen::MatrixXd rows)
    : ids_(std::move(ids)), rows_(std::move(rows)) {
  if (static_cast<std::size_t>(rows_.rows()) != ids_.size()) {
    throw std::invalid_argument("embedding table: id count does not match row count");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
      throw std::invalid_argument("embedding table: duplicate id " + ids_[i]);
    }
  }
}

Eigen::VectorXd EmbeddingTable::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no embedding for image " + id);
  return rows_.row(it->second).transpose();
}

std::vector<std::string> pair_image_ids(const PairSet& pairs) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& list : pairs.pairs) {
    for (const auto& p : list) {
      if (seen.insert(p.a).second) ids.push_back(p.a);
      if (seen.insert(p.b).second) ids.push_back(p.b);
    }
  }
  return ids;
}

PerRace<std::vector<double>> pair_scores(const EmbeddingTable& table, const PairSet& pairs) {
  PerRace<std::vector<double>> out;
  for (Race r : kAllRaces) {
    for (const auto& p : pairs[r]) out[index_of(r)].push_back(cosine_similarity(table.at(p.a), table.at(p.b)));
  }
  return out;
}

PerRace<PairAccuracy> per_race_accuracy(const EmbeddingTable& table, const PairSet& pairs) {
  pairs.validate();
  const auto scores = pair_scores(table, pairs);
  PerRace<PairAccuracy> out;
  for (Race r : kAllRaces) {
    const auto& list = pairs[r];
    std::vector<int> labels, folds;
    for (const auto& p : list) {
      labels.push_back(p.is_match ? 1 : 0);
      if (p.fold >= 0) folds.push_back(p.fold);
    }
    out[index_of(r)] = pair_accuracy(scores[index_of(r)], labels, pairs.folds, folds);
  }
  return out;
}

EvalReport evaluate_embeddings(const EmbeddingTable& table, const PairSet& pairs, EvalMetadata meta) {
  const auto acc = per_race_accuracy(table, pairs);
  PerRace<double> pct{};
  for (std::size_t i = 0; i < kNumRaces; ++i) pct[i] = acc[i].accuracy;
  return fairness_report(pct, std::move(meta));
}

EvalReport evaluate(const EmbeddingModel& model, const FeatureStore& store, const PairSet& pairs,
                    EvalMetadata meta) {
  auto ids = pair_image_ids(pairs);
  Eigen::MatrixXd rows = embed_all(model, store, ids);
  return evaluate_embeddings(EmbeddingTable(std::move(ids), std::move(rows)), pairs, std::move(meta));
}

namespace {

bool parse_bool(const std::string& s, const std::string& where) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error(where + ": is_match must be 0/1/true/false, got '" + s + "'");
}

}  // namespace

PairSet read_pairs(const std::filesystem::path& path, std::size_t folds) {
  const auto table = csv::read_file(path);
  const auto c_race = table.require_column("race");
  const auto c_a = table.require_column("image_a");
  const auto c_b = table.require_column("image_b");
  const auto c_m = table.require_column("is_match");
  const auto c_f = table.column("fold");
  PairSet set;
  set.folds = folds;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string where = fmt::format("{}:{}", path.string(), table.lines[i]);
    Pair p;
    Race r;
    try {
      r = parse_race(row.at(c_race));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    p.a = row.at(c_a);
    p.b = row.at(c_b);
    p.is_match = parse_bool(row.at(c_m), where);
    if (c_f && !row.at(*c_f).empty()) p.fold = static_cast<int>(csv::to_int(row.at(*c_f), where + " fold"));
    set.pairs[index_of(r)].push_back(std::move(p));
  }
  set.validate();
  return set;
}

void write_pairs(const std::filesystem::path& path, const PairSet& pairs, bool with_folds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (with_folds ? "race,image_a,image_b,is_match,fold\n" : "race,image_a,image_b,is_match\n");
  for (Race r : kAllRaces) {
    for (const auto& p : pairs[r]) {
      out << race_name(r) << ',' << csv::escape(p.a) << ',' << csv::escape(p.b) << ',' << (p.is_match ? 1 : 0);
      if (with_folds) out << ',' << p.fold;
      out << '\n';
    }
  }
}

std::string format_metric(double value) { return fmt::format("{:.6f}", value); }

std::vector<std::string> report_columns() {
  return {"african_subj", "asian_subj", "cauc_subj", "indian_subj", "acc_afr", "acc_asi",
          "acc_cau",      "acc_ind",    "acc_mean",  "acc_var"};
}

std::vector<std::string> report_fields(const EvalReport& report) {
  std::vector<std::string> f;
  for (std::size_t i = 0; i < kNumRaces; ++i) {
    f.push_back(report.meta.subjects ? std::to_string(report.meta.subjects->counts[i]) : std::string());
  }
  for (double a : report.accuracy) f.push_back(format_metric(a));
  f.push_back(format_metric(report.mean));
  f.push_back(format_metric(report.variance));
  return f;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << csv::join(report_columns()) << '\n' << csv::join(report_fields(report)) << '\n';
}

}  // namespace fairmix
