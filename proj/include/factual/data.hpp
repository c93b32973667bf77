#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace factual {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Grayscale intensities in [0,1], row-major; mask marks the target region.
struct LabeledImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::size_t label = 0;
  std::vector<std::uint8_t> mask;

  std::size_t mask_count() const;
  bool operator==(const LabeledImage&) const = default;
};

// Throws DataError when pixels are non-finite or outside [0,1], or sizes disagree.
void validate_image(const LabeledImage& image);

struct SceneConfig {
  std::size_t size = 64;
  double clutter = 0.12;
  double looks = 4.0;
  // Noiseless target intensity is drawn uniformly from [target_low, target_high].
  double target_low = 0.3;
  double target_high = 0.4;
};

// Deterministic per (class_id, seed). Background clutter plus a class-specific target with random
// pose, times gamma(L, 1/L) speckle, clipped to [0,1]. Mask = noiseless target intensity > 0.15.
LabeledImage generate_scene(std::size_t class_id, std::uint64_t seed, const SceneConfig& config = {});

// Multiplicative intensity speckle, gamma(L, 1/L): mean 1, variance 1/L.
std::vector<double> draw_speckle(std::size_t count, double looks, std::uint64_t seed);

// Noiseless target layer used for the mask; exposed for tests.
std::vector<double> target_layer(std::size_t class_id, std::uint64_t seed, const SceneConfig& config = {});

struct AugmentDraw {
  // Resized crop: square window of side `crop_side` at (crop_top, crop_left).
  bool crop = false;
  std::size_t crop_side = 0;
  std::size_t crop_top = 0;
  std::size_t crop_left = 0;
  bool flip = false;
  bool brightness = false;
  double brightness_delta = 0.0;
  bool contrast = false;
  double contrast_factor = 1.0;
};

// Applies crop-resize, horizontal flip, additive brightness and contrast about the mean, in that
// order. Mask follows every geometric step. Color, saturation and hue are identity on one channel.
LabeledImage apply_augment(const LabeledImage& image, const AugmentDraw& draw);
AugmentDraw draw_augment(const LabeledImage& image, std::uint64_t seed);
LabeledImage random_augment(const LabeledImage& image, std::uint64_t seed);

enum class Split : std::uint8_t { train = 0, test = 1 };

struct Dataset {
  std::vector<LabeledImage> images;
  std::size_t class_count = 0;
  Split split = Split::train;
  std::uint64_t seed = 0;
};

// Classes cycle 0,1,..,C-1 so per-class counts differ by at most one.
Dataset generate_dataset(std::size_t classes, std::size_t count, std::uint64_t seed, Split split,
                         const SceneConfig& config = {});

enum class ViewTag : std::uint8_t { clean = 0, object = 1, image = 2 };

struct TripleViews {
  std::vector<LabeledImage> clean;
  std::vector<LabeledImage> object;
  std::vector<LabeledImage> image;
  std::size_t class_count = 0;
};

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
void save_triples(const TripleViews& triples, const std::filesystem::path& path);
TripleViews load_triples(const std::filesystem::path& path);

}  // namespace factual
