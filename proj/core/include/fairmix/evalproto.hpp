#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "fairmix/distributions.hpp"
#include "fairmix/embednet.hpp"
#include "fairmix/race.hpp"

namespace fairmix {

struct Pair {
  std::string a;
  std::string b;
  bool is_match = false;
  int fold = -1;  ///< -1: assigned by contiguous block
};

/// Labelled verification pairs per test race.
struct PairSet {
  PerRace<std::vector<Pair>> pairs;
  std::size_t folds = 10;

  const std::vector<Pair>& operator[](Race r) const { return pairs[index_of(r)]; }
  std::size_t size() const;
  /// Throws std::invalid_argument unless each race's count is divisible by
  /// folds and matches equal non-matches. Explicit fold ids must all be set
  /// or all be absent, and lie in [0, folds).
  void validate() const;
};

/// a.b / (|a||b|). Throws std::invalid_argument on a zero vector or size mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

struct PairAccuracy {
  double accuracy = 0.0;  ///< percent
  std::vector<double> thresholds;      ///< chosen on the training folds, per held-out fold
  std::vector<double> fold_accuracy;   ///< fraction correct per held-out fold
};

/// Cross-validated best-threshold accuracy. Predicts a match iff
/// score >= threshold. Candidate thresholds are -inf, every distinct training
/// score above the minimum, and +inf; the lowest maximiser wins. Folds are
/// contiguous blocks unless fold_ids is given.
PairAccuracy pair_accuracy(std::span<const double> scores, std::span<const int> labels, std::size_t folds,
                           std::span<const int> fold_ids = {});

struct EvalMetadata {
  std::optional<RaceMix> mix;
  std::optional<SubjectCounts> subjects;
  std::uint64_t seed = 0;
  std::string head;
  int trial = 0;
};

struct EvalReport {
  PerRace<double> accuracy{};  ///< percent
  double mean = 0.0;
  double variance = 0.0;  ///< population variance, percent^2
  EvalMetadata meta;
};

/// Mean and population variance (divide by 4) of the four accuracies.
EvalReport fairness_report(const PerRace<double>& accuracy, EvalMetadata meta = {});

/// Embeddings keyed by image id.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, Eigen::MatrixXd rows);

  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Eigen::MatrixXd& rows() const noexcept { return rows_; }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Throws std::out_of_range for an unknown id.
  Eigen::VectorXd at(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  Eigen::MatrixXd rows_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

/// Every distinct image id referenced by the pairs, in first-seen order.
std::vector<std::string> pair_image_ids(const PairSet& pairs);

/// Per-race cosine scores of each pair, in pair order.
PerRace<std::vector<double>> pair_scores(const EmbeddingTable& table, const PairSet& pairs);

PerRace<PairAccuracy> per_race_accuracy(const EmbeddingTable& table, const PairSet& pairs);

EvalReport evaluate_embeddings(const EmbeddingTable& table, const PairSet& pairs, EvalMetadata meta = {});
EvalReport evaluate(const EmbeddingModel& model, const FeatureStore& store, const PairSet& pairs,
                    EvalMetadata meta = {});

/// CSV: race,image_a,image_b,is_match[,fold]. is_match accepts 0/1/true/false.
PairSet read_pairs(const std::filesystem::path& path, std::size_t folds = 10);
void write_pairs(const std::filesystem::path& path, const PairSet& pairs, bool with_folds = true);

/// african_subj,...,indian_subj,acc_afr,...,acc_ind,acc_mean,acc_var
std::vector<std::string> report_columns();
std::vector<std::string> report_fields(const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);

/// Fixed formatting shared by every result file.
std::string format_metric(double value);

}  // namespace fairmix
