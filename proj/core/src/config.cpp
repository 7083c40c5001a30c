#include "fairmix/config.hpp"

#include <cstdlib>
#include <fstream>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "fairmix/rng.hpp"

namespace fairmix {

using ojson = nlohmann::ordered_json;

std::string_view design_name(Design d) noexcept {
  switch (d) {
    case Design::SingleRace: return "single-race";
    case Design::DistributionSweep: return "sweep";
    case Design::GrowthStudy: return "growth";
    case Design::NoiseStudy: return "noise";
  }
  return "?";
}

Design parse_design(std::string_view text) {
  if (text == "single-race" || text == "single_race" || text == "SingleRace") return Design::SingleRace;
  if (text == "sweep" || text == "distribution" || text == "DistributionSweep") return Design::DistributionSweep;
  if (text == "growth" || text == "GrowthStudy") return Design::GrowthStudy;
  if (text == "noise" || text == "NoiseStudy") return Design::NoiseStudy;
  throw std::invalid_argument("unknown design: " + std::string(text));
}

ExperimentConfig default_config(Design design) {
  ExperimentConfig c;
  c.design = design;
  switch (design) {
    case Design::SingleRace:
      c.cluster.enabled = true;
      break;
    case Design::DistributionSweep:
      break;
    case Design::GrowthStudy:
      c.corpus.synthetic.subjects_per_race = 60;
      c.corpus.synthetic.images_per_subject = 15;
      c.growth = GrowthPreset{40, 10, 5, 20, 10};
      break;
    case Design::NoiseStudy:
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  if (heads.empty()) throw std::invalid_argument("config: at least one loss head is required");
  for (const auto& h : heads) validate_head(h);
  train.validate();
  if (corpus.source == "synthetic") {
    const auto& s = corpus.synthetic;
    if (s.dims < 2) throw std::invalid_argument("config: corpus.synthetic.dims must be >= 2");
    if (s.test_subjects_per_race < 2 || s.test_images_per_subject < 2) {
      throw std::invalid_argument("config: synthetic test set needs >= 2 subjects and >= 2 images each");
    }
  } else if (corpus.source == "catalog") {
    for (const auto& [key, p] : {std::pair{"corpus.catalog", corpus.catalog},
                                 std::pair{"corpus.features", corpus.features}, std::pair{"pairs.path", pairs.path}}) {
      if (p.empty()) throw std::invalid_argument(fmt::format("config: {} is required for a catalog corpus", key));
      if (!std::filesystem::exists(p)) throw std::invalid_argument(fmt::format("config: {} not found: {}", key, p));
    }
  } else {
    throw std::invalid_argument("config: corpus.source must be 'synthetic' or 'catalog'");
  }
  if (pairs.folds < 2) throw std::invalid_argument("config: pairs.folds must be >= 2");
  if (sampling.total_subjects < 1) throw std::invalid_argument("config: sampling.total_subjects must be >= 1");
  if (sampling.images_per_subject < 1) throw std::invalid_argument("config: sampling.images_per_subject must be >= 1");
  if (cluster.enabled) {
    ClusterConfig cc{cluster.k, cluster.samples_per_race, seed, cluster.epsilon};
    cc.validate();
  }
  if (noise.probabilities.empty()) throw std::invalid_argument("config: noise.probabilities is empty");
  for (double p : noise.probabilities) {
    NoiseConfig nc{p, noise.grid, noise.kmin, noise.kmax, noise.variance, seed};
    nc.validate();
  }
  if (design == Design::NoiseStudy) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(corpus.synthetic.dims))));
    if (corpus.source == "synthetic" && side * side != corpus.synthetic.dims) {
      throw std::invalid_argument("config: the noise study needs corpus.synthetic.dims to be a perfect square");
    }
  }
}

ojson to_json(const ExperimentConfig& c) {
  ojson heads = ojson::array();
  for (const auto& h : c.heads) heads.push_back(head_spec(h));
  const auto& s = c.corpus.synthetic;
  return ojson{
      {"design", std::string(design_name(c.design))},
      {"seed", c.seed},
      {"trials", c.trials},
      {"heads", heads},
      {"output_dir", c.output_dir},
      {"corpus",
       {{"source", c.corpus.source},
        {"catalog", c.corpus.catalog},
        {"features", c.corpus.features},
        {"synthetic",
         {{"dims", s.dims},
          {"subjects_per_race", s.subjects_per_race},
          {"images_per_subject", s.images_per_subject},
          {"extra_images_max", s.extra_images_max},
          {"sigma_between", s.sigma_between},
          {"sigma_within", s.sigma_within},
          {"off_block", s.off_block},
          {"test_subjects_per_race", s.test_subjects_per_race},
          {"test_images_per_subject", s.test_images_per_subject}}}}},
      {"pairs", {{"path", c.pairs.path}, {"pairs_per_race", c.pairs.pairs_per_race}, {"folds", c.pairs.folds}}},
      {"sampling",
       {{"total_subjects", c.sampling.total_subjects},
        {"images_per_subject", c.sampling.images_per_subject},
        {"single_race_subjects", c.sampling.single_race_subjects},
        {"single_race_images", c.sampling.single_race_images}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"hidden", c.train.hidden},
        {"embedding_dim", c.train.embedding_dim}}},
      {"cluster",
       {{"enabled", c.cluster.enabled},
        {"k", c.cluster.k},
        {"samples_per_race", c.cluster.samples_per_race},
        {"epsilon", c.cluster.epsilon}}},
      {"growth",
       {{"base_subjects", c.growth.base_subjects},
        {"base_images", c.growth.base_images},
        {"extra_images", c.growth.extra_images},
        {"new_subjects", c.growth.new_subjects},
        {"new_subject_images", c.growth.new_subject_images}}},
      {"noise",
       {{"probabilities", c.noise.probabilities},
        {"grid", c.noise.grid},
        {"kmin", c.noise.kmin},
        {"kmax", c.noise.kmax},
        {"variance", c.noise.variance}}}};
}

namespace {

void check_known_keys(const nlohmann::json& given, const ojson& known, const std::string& prefix) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string full = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw std::invalid_argument("config: unknown key '" + full + "'");
    if (value.is_object()) check_known_keys(value, known.at(key), full);
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(fmt::format("config: bad value for {}{}: {}", where, key, e.what()));
  }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j, std::optional<Design> design) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  Design d = design.value_or(Design::DistributionSweep);
  if (j.contains("design")) d = parse_design(j.at("design").get<std::string>());
  ExperimentConfig c = default_config(d);
  check_known_keys(j, to_json(c), "");

  read(j, "seed", c.seed, "");
  read(j, "trials", c.trials, "");
  read(j, "output_dir", c.output_dir, "");
  if (j.contains("heads")) {
    c.heads.clear();
    const auto& h = j.at("heads");
    if (h.is_string()) {
      // "arcface,softmax" or "arcface:s=16,m=0.5,center": a piece with '='
      // but no ':' continues the previous head's parameter list.
      std::vector<std::string> specs;
      std::string_view rest = h.get_ref<const std::string&>();
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string piece(rest.substr(0, comma));
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        const bool continues = piece.find('=') != std::string::npos && piece.find(':') == std::string::npos;
        if (continues && !specs.empty()) {
          specs.back() += "," + piece;
        } else if (!piece.empty()) {
          specs.push_back(piece);
        }
      }
      for (const auto& spec : specs) c.heads.push_back(parse_head(spec));
    } else {
      for (const auto& e : h) c.heads.push_back(parse_head(e.get<std::string>()));
    }
  }
  if (j.contains("corpus")) {
    const auto& cj = j.at("corpus");
    read(cj, "source", c.corpus.source, "corpus.");
    read(cj, "catalog", c.corpus.catalog, "corpus.");
    read(cj, "features", c.corpus.features, "corpus.");
    if (cj.contains("synthetic")) {
      const auto& sj = cj.at("synthetic");
      auto& s = c.corpus.synthetic;
      const std::string w = "corpus.synthetic.";
      read(sj, "dims", s.dims, w);
      read(sj, "subjects_per_race", s.subjects_per_race, w);
      read(sj, "images_per_subject", s.images_per_subject, w);
      read(sj, "extra_images_max", s.extra_images_max, w);
      read(sj, "sigma_between", s.sigma_between, w);
      read(sj, "sigma_within", s.sigma_within, w);
      read(sj, "off_block", s.off_block, w);
      read(sj, "test_subjects_per_race", s.test_subjects_per_race, w);
      read(sj, "test_images_per_subject", s.test_images_per_subject, w);
    }
  }
  if (j.contains("pairs")) {
    const auto& pj = j.at("pairs");
    read(pj, "path", c.pairs.path, "pairs.");
    read(pj, "pairs_per_race", c.pairs.pairs_per_race, "pairs.");
    read(pj, "folds", c.pairs.folds, "pairs.");
  }
  if (j.contains("sampling")) {
    const auto& sj = j.at("sampling");
    read(sj, "total_subjects", c.sampling.total_subjects, "sampling.");
    read(sj, "images_per_subject", c.sampling.images_per_subject, "sampling.");
    read(sj, "single_race_subjects", c.sampling.single_race_subjects, "sampling.");
    read(sj, "single_race_images", c.sampling.single_race_images, "sampling.");
  }
  if (j.contains("train")) {
    const auto& tj = j.at("train");
    read(tj, "epochs", c.train.epochs, "train.");
    read(tj, "batch_size", c.train.batch_size, "train.");
    read(tj, "learning_rate", c.train.learning_rate, "train.");
    read(tj, "momentum", c.train.momentum, "train.");
    read(tj, "weight_decay", c.train.weight_decay, "train.");
    read(tj, "hidden", c.train.hidden, "train.");
    read(tj, "embedding_dim", c.train.embedding_dim, "train.");
  }
  if (j.contains("cluster")) {
    const auto& kj = j.at("cluster");
    read(kj, "enabled", c.cluster.enabled, "cluster.");
    read(kj, "k", c.cluster.k, "cluster.");
    read(kj, "samples_per_race", c.cluster.samples_per_race, "cluster.");
    read(kj, "epsilon", c.cluster.epsilon, "cluster.");
  }
  if (j.contains("growth")) {
    const auto& gj = j.at("growth");
    read(gj, "base_subjects", c.growth.base_subjects, "growth.");
    read(gj, "base_images", c.growth.base_images, "growth.");
    read(gj, "extra_images", c.growth.extra_images, "growth.");
    read(gj, "new_subjects", c.growth.new_subjects, "growth.");
    read(gj, "new_subject_images", c.growth.new_subject_images, "growth.");
  }
  if (j.contains("noise")) {
    const auto& nj = j.at("noise");
    read(nj, "probabilities", c.noise.probabilities, "noise.");
    read(nj, "grid", c.noise.grid, "noise.");
    read(nj, "kmin", c.noise.kmin, "noise.");
    read(nj, "kmax", c.noise.kmax, "noise.");
    read(nj, "variance", c.noise.variance, "noise.");
  }
  return c;
}

void apply_override(nlohmann::json& j, std::string_view dotted_key, std::string_view value) {
  if (dotted_key.empty()) throw std::invalid_argument("empty override key");
  nlohmann::json* node = &j;
  std::string_view rest = dotted_key;
  while (true) {
    const auto dot = rest.find('.');
    const std::string key(rest.substr(0, dot));
    if (key.empty()) throw std::invalid_argument("malformed override key: " + std::string(dotted_key));
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string_view::npos) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(std::string(value)) : parsed;
      return;
    }
    node = &(*node)[key];
    rest = rest.substr(dot + 1);
  }
}

ExperimentConfig build_config(Design design, const std::optional<std::filesystem::path>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw std::invalid_argument("cannot open config " + file->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::invalid_argument("config " + file->string() + ": " + e.what());
    }
    if (j.contains("design") && parse_design(j.at("design").get<std::string>()) != design) {
      throw std::invalid_argument(fmt::format("config {} is for design '{}', not '{}'", file->string(),
                                              j.at("design").get<std::string>(), design_name(design)));
    }
  }
  for (const auto& [k, v] : overrides) apply_override(j, k, v);
  j["design"] = std::string(design_name(design));
  auto cfg = config_from_json(j, design);
  cfg.validate();
  return cfg;
}

std::string config_hash(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("output_dir");
  return fmt::format("{:016x}", derive_seed(0, j.dump()));
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  std::filesystem::path dir = cfg.output_dir.empty()
                                  ? std::filesystem::path("runs") / std::string(design_name(cfg.design))
                                  : std::filesystem::path(cfg.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("FAIRMIX_OUTPUT_ROOT"); root && *root) dir = std::filesystem::path(root) / dir;
  }
  return dir;
}

}  // namespace fairmix
