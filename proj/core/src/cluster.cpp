#include "fairmix/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fairmix/rng.hpp"

namespace fairmix {

void ClusterConfig::validate() const {
  if (k < 1) throw std::invalid_argument("cluster: k must be >= 1");
  if (samples_per_race < static_cast<std::size_t>(k) + 1) {
    throw std::invalid_argument("cluster: samples per race must be >= k + 1");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("cluster: epsilon must be > 0");
}

namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m, std::string_view what) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > 0.0)) {
      throw std::invalid_argument(fmt::format("zero embedding at {} row {}", what, i));
    }
    out.row(i) /= n;
  }
  return out;
}

}  // namespace

PerRace<double> intra_race_cosine(const RaceGroups& groups) {
  PerRace<double> out{};
  for (Race r : kAllRaces) {
    const auto& g = groups[index_of(r)];
    if (g.rows() == 0) throw std::invalid_argument(fmt::format("no {} embeddings", race_name(r)));
    const Eigen::RowVectorXd mu = g.colwise().mean();
    const double mn = mu.norm();
    if (!(mn > 0.0)) throw std::invalid_argument(fmt::format("{} mean embedding is zero", race_name(r)));
    const Eigen::MatrixXd u = unit_rows(g, race_name(r));
    const Eigen::VectorXd cosines = (u * (mu.transpose() / mn)).cwiseMax(-1.0).cwiseMin(1.0);
    out[index_of(r)] = (1.0 - cosines.array()).mean();
  }
  return out;
}

KnnResult knn_membership(const RaceGroups& groups, const ClusterConfig& cfg) {
  cfg.validate();
  KnnResult res;
  const std::size_t per = cfg.samples_per_race;
  const auto D = groups[0].cols();
  const auto n = static_cast<Eigen::Index>(per * kNumRaces);
  Eigen::MatrixXd pool(n, D);
  std::vector<Race> pool_race(static_cast<std::size_t>(n));

  for (Race r : kAllRaces) {
    const auto& g = groups[index_of(r)];
    if (static_cast<std::size_t>(g.rows()) < per) {
      throw std::invalid_argument(fmt::format("{} has {} embeddings, fewer than {} samples", race_name(r),
                                              g.rows(), per));
    }
    if (g.cols() != D) throw std::invalid_argument("embedding groups differ in dimension");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(g.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(derive_seed(cfg.seed, {"knn-sample", race_short(r)}));
    for (std::size_t i = 0; i < per; ++i) {
      const auto j = i + uniform_index(rng, idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(per);
    std::sort(idx.begin(), idx.end());
    const auto base = static_cast<Eigen::Index>(index_of(r) * per);
    for (std::size_t i = 0; i < per; ++i) {
      pool.row(base + static_cast<Eigen::Index>(i)) = g.row(idx[i]);
      pool_race[static_cast<std::size_t>(base) + i] = r;
    }
    res.sampled[index_of(r)] = std::move(idx);
  }

  const Eigen::MatrixXd u = unit_rows(pool, "pooled sample");
  const auto k = static_cast<std::size_t>(cfg.k);
  constexpr Eigen::Index kBlock = 512;
  std::vector<std::pair<double, Eigen::Index>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  PerRace<std::array<std::size_t, kNumRaces>> counts{};

  for (Eigen::Index q0 = 0; q0 < n; q0 += kBlock) {
    const Eigen::Index qb = std::min(kBlock, n - q0);
    const Eigen::MatrixXd sims = u * u.middleRows(q0, qb).transpose();  // n x qb
    for (Eigen::Index c = 0; c < qb; ++c) {
      const Eigen::Index q = q0 + c;
      cand.clear();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == q) continue;
        cand.emplace_back(std::clamp(1.0 - sims(j, c), 0.0, 2.0), j);
      }
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
      std::array<double, kNumRaces> votes{};
      for (std::size_t t = 0; t < k; ++t) {
        const auto [d, j] = cand[t];
        votes[index_of(pool_race[static_cast<std::size_t>(j)])] += 1.0 / std::max(d, cfg.epsilon);
      }
      std::size_t best = 0;
      for (std::size_t r = 1; r < kNumRaces; ++r) {
        if (votes[r] > votes[best]) best = r;
      }
      const Race truth = pool_race[static_cast<std::size_t>(q)];
      res.assigned[index_of(truth)].push_back(race_at(best));
      ++counts[index_of(truth)][best];
    }
  }
  for (std::size_t r = 0; r < kNumRaces; ++r) {
    for (std::size_t c = 0; c < kNumRaces; ++c) {
      res.membership[r][c] = static_cast<double>(counts[r][c]) / static_cast<double>(per);
    }
  }
  return res;
}

ClusterReport cluster_report(const RaceGroups& groups, const ClusterConfig& cfg) {
  ClusterReport r;
  r.compactness = intra_race_cosine(groups);
  r.membership = knn_membership(groups, cfg).membership;
  return r;
}

void write_cluster_json(const std::filesystem::path& path, const ClusterReport& report) {
  nlohmann::ordered_json j;
  j["races"] = nlohmann::ordered_json::array();
  for (Race r : kAllRaces) j["races"].push_back(std::string(race_name(r)));
  for (Race r : kAllRaces) j["compactness"][std::string(race_name(r))] = report.compactness[index_of(r)];
  j["membership"] = report.membership;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_cluster_csv(const std::filesystem::path& path, const ClusterReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "race,compactness,to_afr,to_asi,to_cau,to_ind\n";
  for (Race r : kAllRaces) {
    const auto i = index_of(r);
    out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", race_name(r), report.compactness[i],
                       report.membership[i][0], report.membership[i][1], report.membership[i][2],
                       report.membership[i][3]);
  }
}

}  // namespace fairmix
