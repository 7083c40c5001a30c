#include "fairmix/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "fairmix/csv.hpp"
#include "fairmix/rng.hpp"

namespace fairmix {

namespace {

using nlohmann::json;

/// k images chosen without replacement from a per-subject stream; returned ascending.
std::vector<std::string> choose_images(const std::vector<std::string>& candidates, std::size_t k,
                                       std::uint64_t stream_seed) {
  std::vector<std::string> pick = candidates;
  Rng rng = make_rng(stream_seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + uniform_index(rng, pick.size() - i);
    std::swap(pick[i], pick[j]);
  }
  pick.resize(k);
  std::sort(pick.begin(), pick.end());
  return pick;
}

std::optional<int> opt_int(const std::vector<std::string>& row,
                           std::optional<std::size_t> col, std::string_view what) {
  if (!col || row[*col].empty()) return std::nullopt;
  return static_cast<int>(csv::to_int(row[*col], what));
}

}  // namespace

void validate_record(const ImageRecord& r) {
  if (r.image_id.empty() || r.subject_id.empty()) {
    throw std::invalid_argument("image record needs image and subject ids");
  }
  if (r.box && r.size) {
    const auto& b = *r.box;
    if (b.x < 0 || b.y < 0 || b.width < 0 || b.height < 0 || b.x + b.width > r.size->width ||
        b.y + b.height > r.size->height) {
      throw std::invalid_argument("face box of image " + r.image_id + " lies outside the image");
    }
  }
}

std::vector<ImageRecord> read_catalog(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const auto c_img = t.require_column("image_id");
  const auto c_subj = t.require_column("subject_id");
  const auto c_race = t.require_column("race");
  const auto c_path = t.column("path");
  const auto bx = t.column("box_x"), by = t.column("box_y"), bw = t.column("box_w"),
             bh = t.column("box_h"), iw = t.column("img_w"), ih = t.column("img_h");
  std::vector<ImageRecord> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    ImageRecord r;
    r.image_id = row[c_img];
    r.subject_id = row[c_subj];
    r.race = parse_race(row[c_race]);
    if (c_path) r.locator = row[*c_path];
    const auto x = opt_int(row, bx, "box_x"), y = opt_int(row, by, "box_y"),
               w = opt_int(row, bw, "box_w"), h = opt_int(row, bh, "box_h");
    if (x && y && w && h) r.box = FaceBox{*x, *y, *w, *h};
    const auto W = opt_int(row, iw, "img_w"), H = opt_int(row, ih, "img_h");
    if (W && H) r.size = ImageSize{*W, *H};
    try {
      validate_record(r);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(t.source + ":" + std::to_string(t.lines[i]) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_catalog(const std::filesystem::path& path, std::span<const ImageRecord> catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "image_id,subject_id,race,path,box_x,box_y,box_w,box_h,img_w,img_h\n";
  for (const auto& r : catalog) {
    std::vector<std::string> f{r.image_id, r.subject_id, std::string(race_name(r.race)), r.locator};
    if (r.box) {
      for (int v : {r.box->x, r.box->y, r.box->width, r.box->height}) f.push_back(std::to_string(v));
    } else {
      f.insert(f.end(), 4, "");
    }
    if (r.size) {
      f.push_back(std::to_string(r.size->width));
      f.push_back(std::to_string(r.size->height));
    } else {
      f.insert(f.end(), 2, "");
    }
    out << csv::join(f) << '\n';
  }
}

const PoolSubject* SubjectPool::find(const std::string& subject_id) const {
  for (const auto& race : ranked) {
    for (const auto& s : race) {
      if (s.subject_id == subject_id) return &s;
    }
  }
  return nullptr;
}

SubjectPool build_subject_pool(std::span<const ImageRecord> catalog, std::size_t per_race_cap,
                               std::size_t images_per_subject) {
  if (catalog.empty()) throw std::invalid_argument("build_subject_pool: empty catalog");
  // Ordered map keeps construction independent of catalog row order.
  std::map<std::string, PoolSubject> subjects;
  for (const auto& r : catalog) {
    auto [it, inserted] = subjects.try_emplace(r.subject_id);
    if (inserted) {
      it->second.subject_id = r.subject_id;
      it->second.race = r.race;
    } else if (it->second.race != r.race) {
      throw std::invalid_argument("subject " + r.subject_id + " appears under two races");
    }
    it->second.image_ids.push_back(r.image_id);
  }
  SubjectPool pool;
  pool.per_race_cap = per_race_cap;
  for (auto& [id, s] : subjects) {
    std::sort(s.image_ids.begin(), s.image_ids.end());
    if (std::adjacent_find(s.image_ids.begin(), s.image_ids.end()) != s.image_ids.end()) {
      throw std::invalid_argument("duplicate image id under subject " + id);
    }
    if (s.image_ids.size() < images_per_subject) continue;
    pool.ranked[index_of(s.race)].push_back(std::move(s));
  }
  for (Race race : kAllRaces) {
    auto& list = pool.ranked[index_of(race)];
    std::stable_sort(list.begin(), list.end(), [](const PoolSubject& a, const PoolSubject& b) {
      if (a.image_ids.size() != b.image_ids.size()) return a.image_ids.size() > b.image_ids.size();
      return a.subject_id < b.subject_id;
    });
    if (list.size() > per_race_cap) list.resize(per_race_cap);
    if (list.size() < per_race_cap) pool.short_races.push_back(race);
  }
  return pool;
}

SubjectCounts DatasetManifest::subject_counts() const {
  SubjectCounts c;
  for (const auto& e : entries) ++c.counts[index_of(e.race)];
  return c;
}

PerRace<std::int64_t> DatasetManifest::image_counts() const {
  PerRace<std::int64_t> c{};
  for (const auto& e : entries) c[index_of(e.race)] += static_cast<std::int64_t>(e.image_ids.size());
  return c;
}

std::size_t DatasetManifest::image_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.image_ids.size();
  return n;
}

void DatasetManifest::check_unique_images() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    for (const auto& id : e.image_ids) {
      if (!seen.insert(id).second) throw std::logic_error("manifest repeats image id " + id);
    }
  }
}

DatasetManifest sample_manifest(const SubjectPool& pool, const SubjectCounts& counts,
                                std::size_t images_per_subject, std::uint64_t seed) {
  DatasetManifest m;
  m.design = "distribution";
  m.seed = seed;
  for (Race race : kAllRaces) {
    const auto want = counts[race];
    const auto& ranked = pool[race];
    if (want < 0 || static_cast<std::size_t>(want) > ranked.size()) {
      throw std::runtime_error("insufficient pool for " + std::string(race_name(race)) + ": need " +
                               std::to_string(want) + " subjects, have " +
                               std::to_string(ranked.size()));
    }
    for (std::size_t i = 0; i < static_cast<std::size_t>(want); ++i) {
      const auto& s = ranked[i];
      if (s.image_ids.size() < images_per_subject) {
        throw std::runtime_error("subject " + s.subject_id + " has fewer than " +
                                 std::to_string(images_per_subject) + " images");
      }
      m.entries.push_back({s.subject_id, race,
                           choose_images(s.image_ids, images_per_subject,
                                         derive_seed(seed, s.subject_id))});
    }
  }
  return m;
}

DatasetManifest single_race_manifest(const SubjectPool& pool, Race race, std::size_t subjects,
                                     std::uint64_t seed,
                                     std::optional<std::size_t> images_per_subject) {
  const auto& ranked = pool[race];
  if (subjects > ranked.size()) {
    throw std::runtime_error("insufficient pool for " + std::string(race_name(race)) + ": need " +
                             std::to_string(subjects) + " subjects, have " +
                             std::to_string(ranked.size()));
  }
  DatasetManifest m;
  m.design = "single-race";
  m.mix = RaceMix::corner(race);
  m.seed = seed;
  for (std::size_t i = 0; i < subjects; ++i) {
    const auto& s = ranked[i];
    if (!images_per_subject) {
      m.entries.push_back({s.subject_id, race, s.image_ids});
      continue;
    }
    if (s.image_ids.size() < *images_per_subject) {
      throw std::runtime_error("subject " + s.subject_id + " has too few images");
    }
    m.entries.push_back(
        {s.subject_id, race, choose_images(s.image_ids, *images_per_subject, derive_seed(seed, s.subject_id))});
  }
  return m;
}

std::string_view growth_mode_name(GrowthMode m) noexcept {
  return m == GrowthMode::MoreImages ? "more-images" : "more-subjects";
}

GrowthMode parse_growth_mode(std::string_view text) {
  if (text == "more-images" || text == "MoreImages" || text == "images") return GrowthMode::MoreImages;
  if (text == "more-subjects" || text == "MoreSubjects" || text == "subjects") return GrowthMode::MoreSubjects;
  throw std::invalid_argument("unknown growth mode: " + std::string(text));
}

DatasetManifest growth_base_manifest(const SubjectPool& pool, const GrowthPreset& preset,
                                     std::uint64_t seed) {
  SubjectCounts counts;
  counts.counts.fill(static_cast<std::int64_t>(preset.base_subjects));
  auto m = sample_manifest(pool, counts, preset.base_images, seed);
  m.design = "growth-base";
  m.mix = RaceMix::uniform();
  return m;
}

DatasetManifest grow_manifest(const DatasetManifest& base, Race race, GrowthMode mode,
                              const SubjectPool& pool, const GrowthPreset& preset,
                              std::uint64_t seed) {
  DatasetManifest out = base;
  out.design = "growth-" + std::string(growth_mode_name(mode));
  out.mix.reset();
  out.seed = seed;
  const std::string race_label(race_name(race));

  if (mode == GrowthMode::MoreImages) {
    for (auto& e : out.entries) {
      if (e.race != race) continue;
      const PoolSubject* s = pool.find(e.subject_id);
      if (!s) throw std::runtime_error("subject " + e.subject_id + " missing from pool");
      std::vector<std::string> unused;
      std::set_difference(s->image_ids.begin(), s->image_ids.end(), e.image_ids.begin(),
                          e.image_ids.end(), std::back_inserter(unused));
      if (unused.size() < preset.extra_images) {
        throw std::runtime_error("subject " + e.subject_id + " has only " +
                                 std::to_string(unused.size()) + " spare images");
      }
      auto extra = choose_images(unused, preset.extra_images,
                                 derive_seed(seed, {"grow-images", e.subject_id}));
      e.image_ids.insert(e.image_ids.end(), extra.begin(), extra.end());
      std::sort(e.image_ids.begin(), e.image_ids.end());
    }
    return out;
  }

  std::set<std::string> present;
  for (const auto& e : base.entries) present.insert(e.subject_id);
  std::size_t added = 0;
  std::vector<ManifestEntry> fresh;
  for (const auto& s : pool[race]) {
    if (added == preset.new_subjects) break;
    if (present.count(s.subject_id) || s.image_ids.size() < preset.new_subject_images) continue;
    fresh.push_back({s.subject_id, race,
                     choose_images(s.image_ids, preset.new_subject_images,
                                   derive_seed(seed, s.subject_id))});
    ++added;
  }
  if (added < preset.new_subjects) {
    throw std::runtime_error("pool has only " + std::to_string(added) + " spare " + race_label +
                             " subjects, need " + std::to_string(preset.new_subjects));
  }
  // Keep race-major order: insert after the last entry of this race.
  auto pos = out.entries.end();
  for (auto it = out.entries.begin(); it != out.entries.end(); ++it) {
    if (index_of(it->race) <= index_of(race)) pos = it + 1;
  }
  out.entries.insert(pos, fresh.begin(), fresh.end());
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  json header{{"type", "header"},
              {"experiment_id", m.experiment_id},
              {"design", m.design},
              {"seed", m.seed},
              {"subjects", m.entries.size()},
              {"images", m.image_count()}};
  if (m.mix) {
    const auto parts = m.mix->to_strings();
    header["mix"] = json::array({parts[0], parts[1], parts[2], parts[3]});
  } else {
    header["mix"] = nullptr;
  }
  out << header.dump() << '\n';
  for (const auto& e : m.entries) {
    out << json{{"subject_id", e.subject_id}, {"race", race_name(e.race)}, {"images", e.image_ids}}.dump()
        << '\n';
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      if (j.value("type", "") != "header") {
        throw std::runtime_error(path.string() + ": first line must be the manifest header");
      }
      m.experiment_id = j.value("experiment_id", "");
      m.design = j.value("design", "");
      m.seed = j.value("seed", std::uint64_t{0});
      if (j.contains("mix") && !j["mix"].is_null()) {
        PerRace<Weight> w{};
        for (std::size_t i = 0; i < kNumRaces; ++i) w[i] = parse_weight(j["mix"].at(i).get<std::string>());
        m.mix = RaceMix(w);
      }
      have_header = true;
      continue;
    }
    ManifestEntry e;
    e.subject_id = j.at("subject_id").get<std::string>();
    e.race = parse_race(j.at("race").get<std::string>());
    e.image_ids = j.at("images").get<std::vector<std::string>>();
    m.entries.push_back(std::move(e));
  }
  if (!have_header) throw std::runtime_error(path.string() + ": empty manifest");
  return m;
}

}  // namespace fairmix
