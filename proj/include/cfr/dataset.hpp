#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfr/tensor.hpp"

namespace cfr {

using LandClassId = std::uint16_t;

/// Per-pixel land-cover ids, row-major. On disk: width u32, height u32,
/// then width·height u16 ids, all little-endian.
struct LabelRaster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<LandClassId> ids;

  LandClassId at(std::size_t x, std::size_t y) const { return ids[y * width + x]; }

  friend bool operator==(const LabelRaster&, const LabelRaster&) = default;
};

std::vector<std::uint8_t> encode_raster(const LabelRaster& raster);
LabelRaster decode_raster(std::span<const std::uint8_t> bytes);
void write_raster(const std::filesystem::path& path, const LabelRaster& raster);
LabelRaster read_raster(const std::filesystem::path& path);

/// Class id → name. On disk: UTF-8 lines "id,name", LF-terminated, ascending id.
using ClassManifest = std::map<LandClassId, std::string>;

std::string encode_manifest(const ClassManifest& manifest);
ClassManifest parse_manifest(const std::string& text);

/// Throws InputError if the raster uses an id missing from the manifest.
void check_raster_classes(const LabelRaster& raster, const ClassManifest& manifest);

inline constexpr std::size_t kNonNaturalLabel = 0;
inline constexpr std::size_t kNaturalLabel = 1;

/// Parameters of the planted-texture generator.
struct SyntheticSpec {
  std::size_t num_images = 64;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t num_land_classes = 4;
  std::size_t planted_class_id = 0;
  double texture_amplitude = 0.25;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Tensor image;       // channels × size × size, values in [0, 1]
  std::size_t label;  // kNaturalLabel or kNonNaturalLabel
  LabelRaster raster;
};

struct Dataset {
  std::vector<Sample> samples;
  ClassManifest classes;
};

/// Default land-cover names for the first class ids.
ClassManifest default_manifest(std::size_t num_land_classes);

/// Renders sample `index`. Each sample is a Voronoi mosaic of land-cover regions
/// (two sites per class, every class present). Natural samples carry a ±amplitude
/// checkerboard on the planted class; non-natural samples carry a +amplitude
/// grid (every 4th row and column) on one other class. Gaussian noise is added,
/// values are clamped to [0, 1] and rounded to binary32.
///
/// Every random draw is keyed by (seed, index, purpose), so overriding the label
/// changes nothing but the artifact.
Sample render_synthetic(const SyntheticSpec& spec, std::size_t index,
                        std::optional<std::size_t> label_override = std::nullopt);

Dataset generate_synthetic(const SyntheticSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of 0..n-1 cut into three parts, sized by largest-remainder
/// rounding of the fractions (ties go to the earlier part).
SplitIndices split(std::size_t n, double train_fraction, double val_fraction, double test_fraction,
                   std::uint64_t seed);

}  // namespace cfr
