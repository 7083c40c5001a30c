#include "fairmix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

#include "fairmix/rng.hpp"

namespace fairmix {

void SynthConfig::validate() const {
  if (dims < 2) throw std::invalid_argument("synthetic corpus needs at least 2 dimensions");
  if (!(sigma_between > 0.0) || !(sigma_within > 0.0)) {
    throw std::invalid_argument("synthetic spreads must be > 0");
  }
  if (subjects_per_race == 0 || images_per_subject == 0) {
    throw std::invalid_argument("synthetic corpus needs subjects and images");
  }
  for (Race r : kAllRaces) {
    const auto& p = prototypes[index_of(r)];
    if (!p.empty() && p.size() != dims) throw std::invalid_argument("prototype dimension mismatch");
    const auto& s = spread[index_of(r)];
    if (!s.empty() && s.size() != dims) throw std::invalid_argument("spread dimension mismatch");
    for (double v : s) {
      if (!(v > 0.0)) throw std::invalid_argument("spread multipliers must be > 0");
    }
  }
}

SynthConfig block_structured_config(std::size_t dims, std::uint64_t seed, double off_block) {
  SynthConfig cfg;
  cfg.dims = dims;
  cfg.seed = seed;
  for (Race r : kAllRaces) {
    auto& s = cfg.spread[index_of(r)];
    s.assign(dims, off_block);
    const std::size_t begin = index_of(r) * dims / kNumRaces;
    const std::size_t end = (index_of(r) + 1) * dims / kNumRaces;
    for (std::size_t d = begin; d < end; ++d) s[d] = 1.0;
  }
  return cfg;
}

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus out{{}, FeatureStore(cfg.dims)};
  std::vector<float> x(cfg.dims);
  std::vector<double> mu(cfg.dims);

  for (Race race : kAllRaces) {
    const auto ri = index_of(race);
    std::vector<double> proto = cfg.prototypes[ri];
    if (proto.empty()) {
      Rng rng = make_rng(derive_seed(cfg.seed, {"prototype", race_short(race)}));
      proto.resize(cfg.dims);
      for (auto& v : proto) v = standard_normal(rng);
    }
    for (std::size_t s = 0; s < cfg.subjects_per_race; ++s) {
      const std::string subject = fmt::format("{}{}_s{:05d}", cfg.id_prefix, race_short(race), s);
      Rng srng = make_rng(derive_seed(cfg.seed, subject));
      for (std::size_t d = 0; d < cfg.dims; ++d) {
        const double mult = cfg.spread[ri].empty() ? 1.0 : cfg.spread[ri][d];
        mu[d] = proto[d] + cfg.sigma_between * mult * standard_normal(srng);
      }
      const std::size_t n_images =
          cfg.images_per_subject +
          (cfg.extra_images_max ? uniform_index(srng, cfg.extra_images_max + 1) : 0);
      for (std::size_t k = 0; k < n_images; ++k) {
        ImageRecord rec;
        rec.image_id = fmt::format("{}_i{:03d}", subject, k);
        rec.subject_id = subject;
        rec.race = race;
        const std::uint64_t image_seed = derive_seed(cfg.seed, rec.image_id);
        rec.locator = fmt::format("synthetic:{}", image_seed);
        Rng irng = make_rng(image_seed);
        for (std::size_t d = 0; d < cfg.dims; ++d) {
          x[d] = static_cast<float>(mu[d] + cfg.sigma_within * standard_normal(irng));
        }
        // Plausible capture geometry for the face-ratio statistics.
        const int w = 180 + static_cast<int>(uniform_index(irng, 141));
        const int h = 180 + static_cast<int>(uniform_index(irng, 141));
        const double race_bias = (race == Race::Asian || race == Race::Indian) ? 0.15 : 0.0;
        const double ratio = std::min(0.95, 0.08 + race_bias + 0.4 * uniform01(irng));
        int side = static_cast<int>(std::sqrt(ratio * w * h));
        side = std::clamp(side, 1, std::min(w, h));
        const int bx = static_cast<int>(uniform_index(irng, static_cast<std::uint64_t>(w - side + 1)));
        const int by = static_cast<int>(uniform_index(irng, static_cast<std::uint64_t>(h - side + 1)));
        rec.box = FaceBox{bx, by, side, side};
        rec.size = ImageSize{w, h};
        out.features.add(rec.image_id, x);
        out.catalog.push_back(std::move(rec));
      }
    }
  }
  return out;
}

PairSet synth_pairs(const std::vector<ImageRecord>& catalog, std::size_t pairs_per_race,
                    std::size_t folds, std::uint64_t seed) {
  if (folds < 2 || pairs_per_race == 0 || pairs_per_race % (2 * folds) != 0) {
    throw std::invalid_argument("pairs_per_race must be a positive multiple of 2*folds");
  }
  PerRace<std::map<std::string, std::vector<std::string>>> by_subject;
  for (const auto& r : catalog) by_subject[index_of(r.race)][r.subject_id].push_back(r.image_id);

  PairSet set;
  set.folds = folds;
  const std::size_t half = pairs_per_race / folds / 2;
  for (Race race : kAllRaces) {
    const auto& subjects = by_subject[index_of(race)];
    std::vector<const std::vector<std::string>*> all, multi;
    for (const auto& [id, imgs] : subjects) {
      all.push_back(&imgs);
      if (imgs.size() >= 2) multi.push_back(&imgs);
    }
    if (all.size() < 2 || multi.empty()) {
      throw std::invalid_argument("not enough " + std::string(race_name(race)) +
                                  " test subjects to form pairs");
    }
    Rng rng = make_rng(derive_seed(seed, {"pairs", race_short(race)}));
    auto& out = set.pairs[index_of(race)];
    for (std::size_t f = 0; f < folds; ++f) {
      for (std::size_t k = 0; k < half; ++k) {
        const auto& imgs = *multi[uniform_index(rng, multi.size())];
        const auto a = uniform_index(rng, imgs.size());
        auto b = uniform_index(rng, imgs.size() - 1);
        if (b >= a) ++b;
        out.push_back({imgs[a], imgs[b], true, static_cast<int>(f)});
      }
      for (std::size_t k = 0; k < half; ++k) {
        const auto sa = uniform_index(rng, all.size());
        auto sb = uniform_index(rng, all.size() - 1);
        if (sb >= sa) ++sb;
        const auto& ia = *all[sa];
        const auto& ib = *all[sb];
        out.push_back({ia[uniform_index(rng, ia.size())], ib[uniform_index(rng, ib.size())], false,
                       static_cast<int>(f)});
      }
    }
  }
  return set;
}

}  // namespace fairmix
