#include "factual/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "binary_io.hpp"
#include "factual/rng.hpp"

namespace factual {

std::size_t LabeledImage::mask_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void validate_image(const LabeledImage& image) {
  if (image.height == 0 || image.width == 0) throw DataError("image has zero extent");
  if (image.pixels.size() != image.height * image.width) throw DataError("pixel count does not match extent");
  if (!image.mask.empty() && image.mask.size() != image.pixels.size()) {
    throw DataError("mask size does not match extent");
  }
  for (float v : image.pixels) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw DataError("pixel out of range");
  }
}

namespace {

constexpr double kMaskThreshold = 0.15;

struct Pose {
  double cy, cx, angle, peak;
};

// Signed distance (pixels, positive inside) to the class shape in the target's local frame.
double shape_inside(std::size_t class_id, double u, double v) {
  const double s = 1.0 + 0.25 * static_cast<double>(class_id / 4);
  switch (class_id % 4) {
    case 0: {  // elongated ellipse
      const double a = 14.0 * s, b = 6.0 * s;
      const double r = std::hypot(u / a, v / b);
      return (1.0 - r) * std::min(a, b);
    }
    case 1: {  // square hull
      const double h = 8.5 * s;
      return std::min(h - std::abs(u), h - std::abs(v));
    }
    case 2: {  // twin blobs
      const double r = 5.0 * s, off = 9.0 * s;
      return std::max(r - std::hypot(u - off, v), r - std::hypot(u + off, v));
    }
    default: {  // cross
      const double len = 13.0 * s, half = 2.5 * s;
      const double bar1 = std::min(len - std::abs(u), half - std::abs(v));
      const double bar2 = std::min(half - std::abs(u), len - std::abs(v));
      return std::max(bar1, bar2);
    }
  }
}

Pose draw_pose(std::uint64_t seed, const SceneConfig& config) {
  const std::size_t size = config.size;
  Rng rng(sub_seed(seed, {0x9053}));
  std::uniform_real_distribution<double> offset(-6.0, 6.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
  std::uniform_real_distribution<double> peak(config.target_low, config.target_high);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  Pose p;
  p.cy = c + offset(rng);
  p.cx = c + offset(rng);
  p.angle = angle(rng);
  p.peak = peak(rng);
  return p;
}

void check_scene_config(const SceneConfig& config) {
  if (config.size < 16) throw DataError("invalid geometry: scene size must be at least 16");
  if (!(config.looks >= 1.0)) throw DataError("invalid geometry: speckle looks must be >= 1");
  if (!(config.clutter >= 0.0 && config.clutter <= 1.0)) throw DataError("invalid geometry: clutter outside [0,1]");
  if (!(config.target_low > kMaskThreshold && config.target_low <= config.target_high && config.target_high <= 1.0)) {
    throw DataError("invalid geometry: target intensity range must lie in (0.15, 1]");
  }
}

float to_unit_float(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

std::vector<double> draw_speckle(std::size_t count, double looks, std::uint64_t seed) {
  if (!(looks >= 1.0)) throw DataError("invalid geometry: speckle looks must be >= 1");
  Rng rng(seed);
  std::gamma_distribution<double> gamma(looks, 1.0 / looks);
  std::vector<double> out(count);
  for (auto& v : out) v = gamma(rng);
  return out;
}

std::vector<double> target_layer(std::size_t class_id, std::uint64_t seed, const SceneConfig& config) {
  check_scene_config(config);
  const std::size_t n = config.size;
  const Pose pose = draw_pose(seed, config);
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  std::vector<double> layer(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) - pose.cy, dx = static_cast<double>(x) - pose.cx;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      const double inside = shape_inside(class_id, u, v);
      layer[y * n + x] = pose.peak * std::clamp(0.5 + inside, 0.0, 1.0);
    }
  }
  return layer;
}

LabeledImage generate_scene(std::size_t class_id, std::uint64_t seed, const SceneConfig& config) {
  check_scene_config(config);
  const std::size_t n = config.size;
  const auto target = target_layer(class_id, seed, config);

  // Low-frequency clutter: bilinear upsampling of a coarse random grid.
  constexpr std::size_t kGrid = 5;
  Rng rng(sub_seed(seed, {0xc1077, class_id}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, kGrid * kGrid> coarse{};
  for (auto& c : coarse) c = unit(rng);
  const auto speckle = draw_speckle(n * n, config.looks, sub_seed(seed, {0x5bec, class_id}));

  LabeledImage image;
  image.height = image.width = n;
  image.label = class_id;
  image.pixels.resize(n * n);
  image.mask.resize(n * n);
  const double cell = static_cast<double>(n - 1) / static_cast<double>(kGrid - 1);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double gy = static_cast<double>(y) / cell, gx = static_cast<double>(x) / cell;
      const auto iy = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
      const auto ix = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
      const double fy = gy - static_cast<double>(iy), fx = gx - static_cast<double>(ix);
      const double c = (1 - fy) * ((1 - fx) * coarse[iy * kGrid + ix] + fx * coarse[iy * kGrid + ix + 1]) +
                       fy * ((1 - fx) * coarse[(iy + 1) * kGrid + ix] + fx * coarse[(iy + 1) * kGrid + ix + 1]);
      const double background = config.clutter * (0.5 + c);
      const std::size_t i = y * n + x;
      image.pixels[i] = to_unit_float((background + target[i]) * speckle[i]);
      image.mask[i] = target[i] > kMaskThreshold ? 1 : 0;
    }
  }
  if (image.mask_count() < 16) throw DataError("generated target smaller than 16 pixels");
  return image;
}

LabeledImage apply_augment(const LabeledImage& image, const AugmentDraw& draw) {
  validate_image(image);
  const std::size_t h = image.height, w = image.width;
  std::vector<double> px(image.pixels.begin(), image.pixels.end());
  std::vector<std::uint8_t> mask = image.mask;
  const bool has_mask = !mask.empty();

  if (draw.crop) {
    const std::size_t side = draw.crop_side;
    if (side == 0 || side > std::min(h, w) || draw.crop_top + side > h || draw.crop_left + side > w) {
      throw DataError("crop window outside image");
    }
    std::vector<double> out(h * w);
    std::vector<std::uint8_t> out_mask(has_mask ? h * w : 0);
    const double sy = static_cast<double>(side) / static_cast<double>(h);
    const double sx = static_cast<double>(side) / static_cast<double>(w);
    for (std::size_t y = 0; y < h; ++y) {
      const double src_y = static_cast<double>(draw.crop_top) + (static_cast<double>(y) + 0.5) * sy - 0.5;
      const double cy = std::clamp(src_y, 0.0, static_cast<double>(h - 1));
      const auto y0 = static_cast<std::size_t>(cy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = cy - static_cast<double>(y0);
      for (std::size_t x = 0; x < w; ++x) {
        const double src_x = static_cast<double>(draw.crop_left) + (static_cast<double>(x) + 0.5) * sx - 0.5;
        const double cx = std::clamp(src_x, 0.0, static_cast<double>(w - 1));
        const auto x0 = static_cast<std::size_t>(cx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = cx - static_cast<double>(x0);
        out[y * w + x] = (1 - fy) * ((1 - fx) * px[y0 * w + x0] + fx * px[y0 * w + x1]) +
                         fy * ((1 - fx) * px[y1 * w + x0] + fx * px[y1 * w + x1]);
        if (has_mask) {
          const auto ny = static_cast<std::size_t>(std::lround(cy));
          const auto nx = static_cast<std::size_t>(std::lround(cx));
          out_mask[y * w + x] = mask[std::min(ny, h - 1) * w + std::min(nx, w - 1)];
        }
      }
    }
    px = std::move(out);
    mask = std::move(out_mask);
  }
  if (draw.flip) {
    for (std::size_t y = 0; y < h; ++y) {
      std::reverse(px.begin() + static_cast<long>(y * w), px.begin() + static_cast<long>((y + 1) * w));
      if (has_mask) {
        std::reverse(mask.begin() + static_cast<long>(y * w), mask.begin() + static_cast<long>((y + 1) * w));
      }
    }
  }
  if (draw.brightness) {
    for (auto& v : px) v = std::clamp(v + draw.brightness_delta, 0.0, 1.0);
  }
  if (draw.contrast) {
    double m = 0.0;
    for (double v : px) m += v;
    m /= static_cast<double>(px.size());
    for (auto& v : px) v = std::clamp((v - m) * draw.contrast_factor + m, 0.0, 1.0);
  }

  LabeledImage out;
  out.height = h;
  out.width = w;
  out.label = image.label;
  out.mask = std::move(mask);
  out.pixels.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) out.pixels[i] = to_unit_float(px[i]);
  return out;
}

AugmentDraw draw_augment(const LabeledImage& image, std::uint64_t seed) {
  Rng rng(sub_seed(seed, {0xa06}));
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> scale(0.8, 1.0);
  std::uniform_real_distribution<double> bright(-0.2, 0.2);
  std::uniform_real_distribution<double> log_contrast(std::log(0.8), std::log(1.25));
  AugmentDraw draw;
  const std::size_t min_side = std::min(image.height, image.width);
  if (coin(rng)) {
    // Resample until the window keeps an attackable part of the target.
    for (int attempt = 0; attempt < 32; ++attempt) {
      AugmentDraw trial;
      trial.crop = true;
      trial.crop_side = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(scale(rng) * static_cast<double>(min_side))), 1, min_side);
      std::uniform_int_distribution<std::size_t> top(0, image.height - trial.crop_side);
      std::uniform_int_distribution<std::size_t> left(0, image.width - trial.crop_side);
      trial.crop_top = top(rng);
      trial.crop_left = left(rng);
      if (image.mask.empty() || apply_augment(image, trial).mask_count() >= 16) {
        draw = trial;
        break;
      }
    }
  }
  draw.flip = coin(rng);
  if (coin(rng)) {
    draw.brightness = true;
    draw.brightness_delta = bright(rng);
  }
  if (coin(rng)) {
    draw.contrast = true;
    draw.contrast_factor = std::exp(log_contrast(rng));
  }
  return draw;
}

LabeledImage random_augment(const LabeledImage& image, std::uint64_t seed) {
  return apply_augment(image, draw_augment(image, seed));
}

Dataset generate_dataset(std::size_t classes, std::size_t count, std::uint64_t seed, Split split,
                         const SceneConfig& config) {
  if (classes < 2) throw DataError("dataset needs at least 2 classes");
  Dataset ds;
  ds.class_count = classes;
  ds.split = split;
  ds.seed = seed;
  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.images.push_back(generate_scene(i % classes, sub_seed(seed, {static_cast<std::uint64_t>(split), i}), config));
  }
  return ds;
}

namespace {

constexpr char kMagic[4] = {'F', 'C', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint16_t kFlagMasks = 1u << 0;
constexpr std::uint16_t kFlagTriples = 1u << 1;
constexpr std::uint16_t kFlagTestSplit = 1u << 2;

struct Header {
  std::uint32_t count = 0;
  std::uint16_t height = 0, width = 0, classes = 0, flags = 0;
};

Header make_header(const std::vector<LabeledImage>& images, std::size_t classes) {
  if (images.size() > std::numeric_limits<std::uint32_t>::max()) throw DataError("count overflow");
  if (classes > std::numeric_limits<std::uint16_t>::max()) throw DataError("class count overflow");
  Header h;
  h.count = static_cast<std::uint32_t>(images.size());
  h.classes = static_cast<std::uint16_t>(classes);
  bool masks = true;
  if (!images.empty()) {
    const auto& first = images.front();
    if (first.height > 0xffff || first.width > 0xffff) throw DataError("image extent overflow");
    h.height = static_cast<std::uint16_t>(first.height);
    h.width = static_cast<std::uint16_t>(first.width);
  }
  for (const auto& img : images) {
    validate_image(img);
    if (img.height != h.height || img.width != h.width) throw DataError("images differ in shape");
    if (img.label >= classes) throw DataError("label out of range");
    if (img.mask.empty()) masks = false;
  }
  h.flags = masks ? kFlagMasks : 0;
  return h;
}

void write_header(detail::ByteWriter& w, const Header& h) {
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(h.count);
  w.put<std::uint16_t>(h.height);
  w.put<std::uint16_t>(h.width);
  w.put<std::uint16_t>(h.classes);
  w.put<std::uint16_t>(h.flags);
}

void write_images(detail::ByteWriter& w, const std::vector<LabeledImage>& images, bool masks) {
  for (const auto& img : images) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(img.label));
    w.put_bytes(img.pixels.data(), img.pixels.size() * sizeof(float));
    if (masks) {
      std::vector<std::uint8_t> packed((img.mask.size() + 7) / 8, 0);
      for (std::size_t i = 0; i < img.mask.size(); ++i) {
        if (img.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      }
      w.put_bytes(packed.data(), packed.size());
    }
  }
}

using Reader = detail::ByteReader<DataError>;

Header read_header(Reader& r) {
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw DataError("unsupported version");
  Header h;
  h.count = r.get<std::uint32_t>();
  h.height = r.get<std::uint16_t>();
  h.width = r.get<std::uint16_t>();
  h.classes = r.get<std::uint16_t>();
  h.flags = r.get<std::uint16_t>();
  if (h.count > 0 && (h.height == 0 || h.width == 0)) throw DataError("zero image extent");
  return h;
}

std::vector<LabeledImage> read_images(Reader& r, const Header& h) {
  const bool masks = (h.flags & kFlagMasks) != 0;
  const std::uint64_t plane = std::uint64_t{h.height} * h.width;
  const std::uint64_t record = 2 + plane * sizeof(float) + (masks ? (plane + 7) / 8 : 0);
  if (record != 0 && h.count > std::numeric_limits<std::uint64_t>::max() / record) throw DataError("count overflow");
  if (std::uint64_t{h.count} * record > r.remaining()) throw DataError("truncated file");
  std::vector<LabeledImage> images(h.count);
  std::vector<std::uint8_t> packed((plane + 7) / 8);
  for (auto& img : images) {
    img.height = h.height;
    img.width = h.width;
    img.label = r.get<std::uint16_t>();
    if (img.label >= h.classes) throw DataError("label out of range");
    img.pixels.resize(plane);
    r.get_bytes(img.pixels.data(), plane * sizeof(float));
    if (masks) {
      r.get_bytes(packed.data(), packed.size());
      img.mask.resize(plane);
      for (std::size_t i = 0; i < plane; ++i) img.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
    }
    validate_image(img);
  }
  return images;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  Header h = make_header(dataset.images, dataset.class_count);
  if (dataset.split == Split::test) h.flags |= kFlagTestSplit;
  detail::ByteWriter w;
  write_header(w, h);
  write_images(w, dataset.images, (h.flags & kFlagMasks) != 0);
  detail::write_file<DataError>(path, w.bytes());
}

Dataset load_dataset(const std::filesystem::path& path) {
  Reader r(detail::read_file<DataError>(path));
  const Header h = read_header(r);
  if (h.flags & kFlagTriples) throw DataError("file holds triples, not a dataset");
  Dataset ds;
  ds.class_count = h.classes;
  ds.split = (h.flags & kFlagTestSplit) ? Split::test : Split::train;
  ds.images = read_images(r, h);
  if (r.remaining() != 0) throw DataError("trailing bytes");
  return ds;
}

void save_triples(const TripleViews& triples, const std::filesystem::path& path) {
  const auto n = triples.clean.size();
  if (triples.object.size() != n || triples.image.size() != n) throw DataError("triple views differ in count");
  std::vector<LabeledImage> all;
  all.reserve(3 * n);
  for (const auto* views : {&triples.clean, &triples.object, &triples.image}) {
    all.insert(all.end(), views->begin(), views->end());
  }
  Header h = make_header(all, triples.class_count);
  h.count = static_cast<std::uint32_t>(n);
  h.flags |= kFlagTriples;
  detail::ByteWriter w;
  write_header(w, h);
  const std::pair<ViewTag, const std::vector<LabeledImage>*> blocks[] = {
      {ViewTag::clean, &triples.clean}, {ViewTag::object, &triples.object}, {ViewTag::image, &triples.image}};
  for (const auto& [tag, views] : blocks) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(tag));
    write_images(w, *views, (h.flags & kFlagMasks) != 0);
  }
  detail::write_file<DataError>(path, w.bytes());
}

TripleViews load_triples(const std::filesystem::path& path) {
  Reader r(detail::read_file<DataError>(path));
  const Header h = read_header(r);
  if (!(h.flags & kFlagTriples)) throw DataError("file holds a dataset, not triples");
  TripleViews t;
  t.class_count = h.classes;
  for (auto expected : {ViewTag::clean, ViewTag::object, ViewTag::image}) {
    const auto tag = r.get<std::uint8_t>();
    if (tag != static_cast<std::uint8_t>(expected)) throw DataError("unexpected view tag");
    auto images = read_images(r, h);
    (expected == ViewTag::clean ? t.clean : expected == ViewTag::object ? t.object : t.image) = std::move(images);
  }
  if (r.remaining() != 0) throw DataError("trailing bytes");
  for (std::size_t i = 0; i < t.clean.size(); ++i) {
    if (t.object[i].label != t.clean[i].label || t.image[i].label != t.clean[i].label) {
      throw DataError("triple views disagree on label");
    }
  }
  return t;
}

}  // namespace factual
