#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fairmix/corpus.hpp"
#include "fairmix/rng.hpp"

namespace fairmix {

struct NoiseConfig {
  double p = 0.0;        ///< per-image injection probability
  int grid = 4;          ///< cells per side of the face box
  int kmin = 11;         ///< kernel sizes are the odd values in [kmin, kmax]
  int kmax = 21;
  double variance = 1.5; ///< sigma^2 in pixels^2
  std::uint64_t seed = 1;

  void validate() const;
  /// Odd kernel sizes in [kmin, kmax], ascending.
  std::vector<int> kernel_sizes() const;
};

/// Row-major, channel-interleaved intensities in [0, 1].
struct PixelImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> values;

  PixelImage() = default;
  PixelImage(int w, int h, int c = 1, float fill = 0.0f);

  float& at(int x, int y, int c = 0) { return values[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return values[index(x, y, c)]; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  /// Throws std::invalid_argument on bad dimensions or out-of-range values.
  void validate() const;

  friend bool operator==(const PixelImage&, const PixelImage&) = default;
};

/// Normalised, symmetric 1-D Gaussian weights. Throws on even or
/// non-positive size, or variance <= 0.
std::vector<double> gaussian_kernel(int size, double variance);

struct CellRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  friend bool operator==(const CellRect&, const CellRect&) = default;
};

/// Cell (col, row) of a grid x grid partition of the box; the last row and
/// column absorb the remainder pixels.
CellRect grid_cell(const FaceBox& box, int grid, int col, int row);

/// Separable blur of one rectangle, reflecting at the rectangle's own edges
/// so nothing outside it is read or written.
void blur_cell(PixelImage& img, const CellRect& cell, std::span<const double> kernel);

struct BlurOutcome {
  PixelImage image;
  bool applied = false;
  CellRect cell;
  int kernel_size = 0;
};

/// With probability p, blurs one uniformly chosen grid cell of the face box
/// with a kernel of uniformly chosen odd size. Always consumes the same
/// draws from `rng` so outcomes depend only on the stream.
BlurOutcome inject_patch_blur(const PixelImage& img, const FaceBox& box, const NoiseConfig& cfg, Rng& rng);

/// Per-image stream keyed by (seed, image id).
Rng noise_stream(std::uint64_t seed, std::string_view image_id);

/// Synthetic pixel stand-in: a feature vector of side*side values mapped
/// through a logistic squash to one grey image.
PixelImage features_to_image(std::span<const float> features, int side);

/// Applies inject_patch_blur to a feature vector via its pixel stand-in and
/// writes back only the blurred cell (logit of the blurred intensities).
/// Returns whether the image was modified.
bool noise_features(std::span<float> features, int side, const NoiseConfig& cfg, Rng& rng);

/// (box_w * box_h) / (img_w * img_h). Throws std::invalid_argument when the
/// box or image size is missing.
double face_ratio(const ImageRecord& record);

/// Ascending face ratios per race.
PerRace<std::vector<double>> ratio_curve(std::span<const ImageRecord> records);

/// race,index,ratio
void write_ratio_curve_csv(const std::filesystem::path& path, const PerRace<std::vector<double>>& curve);

/// 8-bit PNG <-> [0,1] floats. Grey, grey+alpha, RGB, RGBA are accepted;
/// images are returned with 1 (grey) or 3 (colour) channels.
PixelImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const PixelImage& img);

}  // namespace fairmix
