#include "fairmix/feature_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fairmix {

static_assert(std::endian::native == std::endian::little,
              "feature store I/O assumes a little-endian host");

void FeatureStore::add(std::string id, std::span<const float> values) {
  if (values.size() != dims_) {
    throw std::invalid_argument("feature vector for " + id + " has " + std::to_string(values.size()) +
                                " dims, store expects " + std::to_string(dims_));
  }
  if (!index_.emplace(id, ids_.size()).second) {
    throw std::invalid_argument("duplicate feature id " + id);
  }
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), values.begin(), values.end());
}

std::span<const float> FeatureStore::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no features for image " + id);
  return row(it->second);
}

std::span<float> FeatureStore::mutable_at(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw std::out_of_range("no features for image " + id);
  return {data_.data() + it->second * dims_, dims_};
}

void FeatureStore::save(const std::filesystem::path& path) const {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data_.data()),
              static_cast<std::streamsize>(data_.size() * sizeof(float)));
  }
  nlohmann::json side{{"dims", dims_}, {"count", ids_.size()}, {"dtype", "float32-le"}, {"ids", ids_}};
  std::ofstream out(path.string() + ".json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write sidecar for " + path.string());
  out << side.dump() << '\n';
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
  std::ifstream side_in(path.string() + ".json", std::ios::binary);
  if (!side_in) throw std::runtime_error("missing sidecar " + path.string() + ".json");
  const auto side = nlohmann::json::parse(side_in);
  FeatureStore store(side.at("dims").get<std::size_t>());
  const auto ids = side.at("ids").get<std::vector<std::string>>();
  if (ids.size() != side.at("count").get<std::size_t>()) {
    throw std::runtime_error(path.string() + ".json: count does not match id list");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<float> buf(store.dims_);
  for (const auto& id : ids) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path.string() + ": truncated feature blob");
    store.add(id, buf);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(path.string() + ": feature blob longer than sidecar declares");
  }
  return store;
}

}  // namespace fairmix
