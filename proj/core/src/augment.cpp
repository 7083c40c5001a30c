#include "fairmix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace fairmix {

void NoiseConfig::validate() const {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("noise: p must lie in [0, 1]");
  if (grid < 1) throw std::invalid_argument("noise: grid must be >= 1");
  if (kmin > kmax) throw std::invalid_argument("noise: kmin must not exceed kmax");
  if (kernel_sizes().empty()) throw std::invalid_argument("noise: no odd kernel size in [kmin, kmax]");
  if (!(variance > 0.0)) throw std::invalid_argument("noise: variance must be > 0");
}

std::vector<int> NoiseConfig::kernel_sizes() const {
  std::vector<int> out;
  for (int k = std::max(kmin, 1); k <= kmax; ++k) {
    if (k % 2 == 1) out.push_back(k);
  }
  return out;
}

PixelImage::PixelImage(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w < 1 || h < 1 || c < 1) throw std::invalid_argument("image dimensions must be positive");
  values.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill);
}

void PixelImage::validate() const {
  if (width < 1 || height < 1 || channels < 1) throw std::invalid_argument("image dimensions must be positive");
  if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
                           static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("image value count does not match its dimensions");
  }
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("image intensity outside [0, 1]");
  }
}

std::vector<double> gaussian_kernel(int size, double variance) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument(fmt::format("kernel size {} is not odd", size));
  if (!(variance > 0.0)) throw std::invalid_argument("kernel variance must be > 0");
  const int c = (size - 1) / 2;
  std::vector<double> w(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * variance));
  }
  // Sum the symmetric halves in matching order so w stays exactly symmetric.
  double sum = w[static_cast<std::size_t>(c)];
  for (int i = 1; i <= c; ++i) sum += 2.0 * w[static_cast<std::size_t>(c + i)];
  for (auto& v : w) v /= sum;
  return w;
}

CellRect grid_cell(const FaceBox& box, int grid, int col, int row) {
  if (box.width < grid || box.height < grid) {
    throw std::invalid_argument(
        fmt::format("face box {}x{} is smaller than a {}x{} grid", box.width, box.height, grid, grid));
  }
  const int cw = box.width / grid;
  const int ch = box.height / grid;
  CellRect r;
  r.x = box.x + col * cw;
  r.y = box.y + row * ch;
  r.width = (col == grid - 1) ? box.width - (grid - 1) * cw : cw;
  r.height = (row == grid - 1) ? box.height - (grid - 1) * ch : ch;
  return r;
}

namespace {

// Symmetric reflection with period 2n: ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
int reflect(int j, int n) {
  const int period = 2 * n;
  int m = j % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

void blur_cell(PixelImage& img, const CellRect& cell, std::span<const double> kernel) {
  if (cell.width < 1 || cell.height < 1 || cell.x < 0 || cell.y < 0 || cell.x + cell.width > img.width ||
      cell.y + cell.height > img.height) {
    throw std::invalid_argument("blur cell lies outside the image");
  }
  const int r = static_cast<int>(kernel.size() / 2);
  const int W = cell.width, H = cell.height;
  std::vector<double> tmp(static_cast<std::size_t>(W) * static_cast<std::size_t>(H));
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          acc += kernel[static_cast<std::size_t>(k + r)] * img.at(cell.x + reflect(x + k, W), cell.y + y, c);
        }
        tmp[static_cast<std::size_t>(y * W + x)] = acc;
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int k = -r; k <= r; ++k) {
          acc += kernel[static_cast<std::size_t>(k + r)] * tmp[static_cast<std::size_t>(reflect(y + k, H) * W + x)];
        }
        img.at(cell.x + x, cell.y + y, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
}

BlurOutcome inject_patch_blur(const PixelImage& img, const FaceBox& box, const NoiseConfig& cfg, Rng& rng) {
  cfg.validate();
  if (box.width < 1 || box.height < 1) throw std::invalid_argument("face box has zero area");
  if (box.x < 0 || box.y < 0 || box.x + box.width > img.width || box.y + box.height > img.height) {
    throw std::invalid_argument("face box lies outside the image");
  }
  const double u = uniform01(rng);
  const auto cell_index = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.grid * cfg.grid)));
  const auto sizes = cfg.kernel_sizes();
  const int ksize = sizes[uniform_index(rng, sizes.size())];

  BlurOutcome out;
  out.image = img;
  if (!(u < cfg.p)) return out;
  out.applied = true;
  out.kernel_size = ksize;
  out.cell = grid_cell(box, cfg.grid, cell_index % cfg.grid, cell_index / cfg.grid);
  const auto kernel = gaussian_kernel(ksize, cfg.variance);
  blur_cell(out.image, out.cell, kernel);
  return out;
}

Rng noise_stream(std::uint64_t seed, std::string_view image_id) {
  return make_rng(derive_seed(seed, {"noise", image_id}));
}

PixelImage features_to_image(std::span<const float> features, int side) {
  if (side < 1 || features.size() != static_cast<std::size_t>(side) * static_cast<std::size_t>(side)) {
    throw std::invalid_argument(fmt::format("{} features do not form a {}x{} image", features.size(), side, side));
  }
  PixelImage img(side, side, 1);
  for (std::size_t i = 0; i < features.size(); ++i) {
    img.values[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(features[i]))));
  }
  return img;
}

bool noise_features(std::span<float> features, int side, const NoiseConfig& cfg, Rng& rng) {
  const PixelImage img = features_to_image(features, side);
  const auto out = inject_patch_blur(img, FaceBox{0, 0, side, side}, cfg, rng);
  if (!out.applied) return false;
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  for (int y = out.cell.y; y < out.cell.y + out.cell.height; ++y) {
    for (int x = out.cell.x; x < out.cell.x + out.cell.width; ++x) {
      const double v = std::clamp(static_cast<double>(out.image.at(x, y)), kLo, kHi);
      features[static_cast<std::size_t>(y * side + x)] = static_cast<float>(std::log(v / (1.0 - v)));
    }
  }
  return true;
}

double face_ratio(const ImageRecord& record) {
  if (!record.box || !record.size) {
    throw std::invalid_argument("image " + record.image_id + " lacks face box or image size");
  }
  const auto& b = *record.box;
  const auto& s = *record.size;
  if (b.width < 1 || b.height < 1 || s.width < 1 || s.height < 1) {
    throw std::invalid_argument("image " + record.image_id + " has a degenerate box or size");
  }
  return (static_cast<double>(b.width) * b.height) / (static_cast<double>(s.width) * s.height);
}

PerRace<std::vector<double>> ratio_curve(std::span<const ImageRecord> records) {
  PerRace<std::vector<double>> out;
  for (const auto& r : records) out[index_of(r.race)].push_back(face_ratio(r));
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

void write_ratio_curve_csv(const std::filesystem::path& path, const PerRace<std::vector<double>>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "race,index,ratio\n";
  for (Race r : kAllRaces) {
    const auto& v = curve[index_of(r)];
    for (std::size_t i = 0; i < v.size(); ++i) out << fmt::format("{},{},{:.6f}\n", race_name(r), i, v[i]);
  }
}

}  // namespace fairmix
