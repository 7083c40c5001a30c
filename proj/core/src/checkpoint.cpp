#include <bit>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "fairmix/embednet.hpp"

namespace fairmix {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kFormat = "fairmix-checkpoint";

std::filesystem::path blob_path(const std::filesystem::path& path) { return path.string() + ".bin"; }

template <class M>
void append(std::vector<float>& out, const M& m) {
  // Row-major so the blob reads naturally as (rows x cols).
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
  }
}

template <class M>
void take(const std::vector<float>& in, std::size_t& pos, M& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[pos++];
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EmbeddingModel& model) {
  std::vector<float> blob;
  blob.reserve(model.parameter_count());
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    append(blob, model.weights[l]);
    append(blob, model.biases[l]);
  }
  append(blob, model.classifier);
  append(blob, model.classifier_bias);
  append(blob, model.centers);

  nlohmann::json header{{"format", kFormat},
                        {"version", 1},
                        {"widths", model.widths},
                        {"num_identities", model.num_identities()},
                        {"head", head_spec(model.head)},
                        {"seed", model.seed},
                        {"has_centers", model.centers.size() > 0},
                        {"dtype", "float32-le"},
                        {"float_count", blob.size()},
                        {"blob", blob_path(path).filename().string()}};
  {
    std::ofstream out(blob_path(path), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + blob_path(path).string());
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header.dump(2) << '\n';
}

EmbeddingModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const auto header = nlohmann::json::parse(in);
  if (header.value("format", "") != kFormat) {
    throw std::runtime_error(path.string() + " is not a model checkpoint");
  }
  const auto widths = header.at("widths").get<std::vector<int>>();
  const int n = header.at("num_identities").get<int>();
  EmbeddingModel m = init_model(widths, n, parse_head(header.at("head").get<std::string>()),
                                header.at("seed").get<std::uint64_t>());
  if (!header.value("has_centers", false)) m.centers.resize(0, 0);

  const auto expected = header.at("float_count").get<std::size_t>();
  if (expected != m.parameter_count()) {
    throw std::runtime_error(path.string() + ": float_count does not match the declared shapes");
  }
  std::vector<float> blob(expected);
  std::ifstream bin(blob_path(path), std::ios::binary);
  if (!bin) throw std::runtime_error("missing weight blob " + blob_path(path).string());
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(expected * sizeof(float)));
  if (static_cast<std::size_t>(bin.gcount()) != expected * sizeof(float)) {
    throw std::runtime_error(blob_path(path).string() + " is truncated");
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(blob_path(path).string() + " has trailing data");
  }
  std::size_t pos = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    take(blob, pos, m.weights[l]);
    take(blob, pos, m.biases[l]);
  }
  take(blob, pos, m.classifier);
  take(blob, pos, m.classifier_bias);
  take(blob, pos, m.centers);
  return m;
}

}  // namespace fairmix
