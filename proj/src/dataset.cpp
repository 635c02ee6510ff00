#include "cfr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "cfr/error.hpp"
#include "cfr/random.hpp"
#include "cfr/tensor_file.hpp"

namespace cfr {

// ---------------------------------------------------------------- raster

std::vector<std::uint8_t> encode_raster(const LabelRaster& raster) {
  if (raster.ids.size() != static_cast<std::size_t>(raster.width) * raster.height) {
    throw DimensionError("label raster payload does not match width×height");
  }
  std::vector<std::uint8_t> out;
  out.reserve(8 + 2 * raster.ids.size());
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  put32(raster.width);
  put32(raster.height);
  for (auto id : raster.ids) {
    out.push_back(static_cast<std::uint8_t>(id & 0xff));
    out.push_back(static_cast<std::uint8_t>(id >> 8));
  }
  return out;
}

LabelRaster decode_raster(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("label raster header truncated");
  auto get32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  LabelRaster r;
  r.width = get32(0);
  r.height = get32(4);
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height;
  if (bytes.size() != 8 + 2 * n) {
    throw CorruptionError("label raster payload has " + std::to_string(bytes.size() - 8) + " bytes, expected " +
                          std::to_string(2 * n));
  }
  r.ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.ids[i] = static_cast<LandClassId>(bytes[8 + 2 * i] | (bytes[9 + 2 * i] << 8));
  }
  return r;
}

void write_raster(const std::filesystem::path& path, const LabelRaster& raster) {
  write_bytes(path, encode_raster(raster));
}

LabelRaster read_raster(const std::filesystem::path& path) { return decode_raster(read_bytes(path)); }

// ---------------------------------------------------------------- manifest

std::string encode_manifest(const ClassManifest& manifest) {
  std::string out;
  for (const auto& [id, name] : manifest) {
    if (name.find_first_of(",\n") != std::string::npos) {
      throw InputError("class name '" + name + "' may not contain commas or newlines");
    }
    out += std::to_string(id) + "," + name + "\n";
  }
  return out;
}

ClassManifest parse_manifest(const std::string& text) {
  ClassManifest out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 'id,name'");
    }
    unsigned long id = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(line.substr(0, comma), &used);
      if (used != comma) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad class id");
    }
    if (id > 0xffff) throw FormatError("manifest line " + std::to_string(lineno) + ": class id exceeds u16");
    if (!out.emplace(static_cast<LandClassId>(id), line.substr(comma + 1)).second) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate class id");
    }
  }
  return out;
}

void check_raster_classes(const LabelRaster& raster, const ClassManifest& manifest) {
  std::set<LandClassId> ids(raster.ids.begin(), raster.ids.end());
  for (auto id : ids) {
    if (!manifest.contains(id)) throw InputError("raster class id " + std::to_string(id) + " is not in the manifest");
  }
}

// ---------------------------------------------------------------- synthetic data

namespace {

constexpr std::array<const char*, 8> kClassNames = {"shrubland", "wetland", "forest",   "bare_rock",
                                                    "water",     "cropland", "urban", "grassland"};

// RGB base colours for the named classes; further classes get hashed colours.
constexpr std::array<std::array<double, 3>, 8> kPalette = {{{0.45, 0.55, 0.30},
                                                            {0.30, 0.45, 0.45},
                                                            {0.20, 0.40, 0.22},
                                                            {0.60, 0.58, 0.55},
                                                            {0.15, 0.25, 0.50},
                                                            {0.70, 0.65, 0.35},
                                                            {0.55, 0.50, 0.52},
                                                            {0.50, 0.68, 0.35}}};

double base_colour(std::size_t cls, std::size_t channel) {
  if (cls < kPalette.size() && channel < 3) return kPalette[cls][channel];
  CounterRng rng = CounterRng(0x5eed).split(cls).split(channel);
  return rng.uniform(0.2, 0.8);
}

constexpr std::size_t kGridPeriod = 4;

}  // namespace

void SyntheticSpec::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ParameterError("synthetic spec: " + msg);
  };
  need(num_images > 0, "num_images must be positive");
  need(image_size > 0 && channels > 0, "image_size and channels must be positive");
  need(num_land_classes >= 2, "need at least 2 land classes");
  need(num_land_classes <= 0xffff, "too many land classes");
  need(2 * num_land_classes <= image_size * image_size, "image too small for the mosaic");
  need(planted_class_id < num_land_classes, "planted_class_id must be below num_land_classes");
  need(texture_amplitude >= 0.0 && noise_sigma >= 0.0, "amplitude and sigma must be non-negative");
}

ClassManifest default_manifest(std::size_t num_land_classes) {
  ClassManifest m;
  for (std::size_t c = 0; c < num_land_classes; ++c) {
    m[static_cast<LandClassId>(c)] = c < kClassNames.size() ? kClassNames[c] : "class_" + std::to_string(c);
  }
  return m;
}

Sample render_synthetic(const SyntheticSpec& spec, std::size_t index, std::optional<std::size_t> label_override) {
  spec.validate();
  const std::size_t S = spec.image_size, L = spec.num_land_classes;
  const CounterRng sample_rng = CounterRng(spec.seed).split(index);

  // Mosaic: 2L distinct sites; the first L cover every class once.
  CounterRng mosaic = sample_rng.split("mosaic");
  const std::size_t num_sites = 2 * L;
  std::vector<std::size_t> site_x, site_y, site_class(num_sites);
  std::vector<double> site_jitter(num_sites);
  std::set<std::size_t> taken;
  while (site_x.size() < num_sites) {
    const std::size_t x = mosaic.below(S), y = mosaic.below(S);
    if (!taken.insert(y * S + x).second) continue;
    site_x.push_back(x);
    site_y.push_back(y);
  }
  std::vector<std::size_t> perm(L);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = L; i > 1; --i) std::swap(perm[i - 1], perm[mosaic.below(i)]);
  for (std::size_t k = 0; k < num_sites; ++k) {
    site_class[k] = k < L ? perm[k] : mosaic.below(L);
    site_jitter[k] = mosaic.uniform(-0.05, 0.05);
  }

  Sample out;
  out.raster.width = out.raster.height = static_cast<std::uint32_t>(S);
  out.raster.ids.resize(S * S);
  std::vector<std::size_t> site_of(S * S);
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      std::size_t best = 0;
      std::size_t best_d = ~std::size_t{0};
      for (std::size_t k = 0; k < num_sites; ++k) {
        const std::size_t dx = x > site_x[k] ? x - site_x[k] : site_x[k] - x;
        const std::size_t dy = y > site_y[k] ? y - site_y[k] : site_y[k] - y;
        const std::size_t dist = dx * dx + dy * dy;
        if (dist < best_d) {
          best_d = dist;
          best = k;
        }
      }
      site_of[y * S + x] = best;
      out.raster.ids[y * S + x] = static_cast<LandClassId>(site_class[best]);
    }

  out.label = label_override ? *label_override : static_cast<std::size_t>(sample_rng.split("label").below(2));
  if (out.label > kNaturalLabel) throw InputError("synthetic label must be 0 or 1");

  // The grid class is drawn regardless of the label so both renderings share every other draw.
  std::size_t grid_class = static_cast<std::size_t>(sample_rng.split("artifact").below(L - 1));
  if (grid_class >= spec.planted_class_id) ++grid_class;

  CounterRng noise = sample_rng.split("noise");
  out.image = Tensor({spec.channels, S, S});
  for (std::size_t c = 0; c < spec.channels; ++c)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const std::size_t site = site_of[y * S + x];
        const std::size_t cls = site_class[site];
        double v = base_colour(cls, c) + site_jitter[site];
        if (out.label == kNaturalLabel && cls == spec.planted_class_id) {
          v += ((x + y) % 2 == 0 ? 1.0 : -1.0) * spec.texture_amplitude;
        } else if (out.label == kNonNaturalLabel && cls == grid_class &&
                   (x % kGridPeriod == 0 || y % kGridPeriod == 0)) {
          v += spec.texture_amplitude;
        }
        v += spec.noise_sigma * noise.normal();
        out.image(c, y, x) = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
      }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.classes = default_manifest(spec.num_land_classes);
  ds.samples.reserve(spec.num_images);
  for (std::size_t i = 0; i < spec.num_images; ++i) ds.samples.push_back(render_synthetic(spec, i));
  return ds;
}

// ---------------------------------------------------------------- split

SplitIndices split(std::size_t n, double train_fraction, double val_fraction, double test_fraction,
                   std::uint64_t seed) {
  const std::array<double, 3> f = {train_fraction, val_fraction, test_fraction};
  for (double x : f) {
    if (!(x > 0.0)) throw InputError("split fractions must be positive");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw InputError("split fractions must sum to 1");

  std::array<std::size_t, 3> size{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double quota = f[k] * static_cast<double>(n);
    size[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[k] = quota - static_cast<double>(size[k]);
    assigned += size[k];
  }
  std::array<int, 3> by_remainder = {0, 1, 2};
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++size[by_remainder[k % 3]];
  if (n > 0) {
    for (int k = 0; k < 3; ++k) {
      if (size[k] == 0) throw InputError("split leaves part " + std::to_string(k) + " empty for n=" + std::to_string(n));
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng = CounterRng(seed).split("split");
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size[0]));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(size[0]),
                 order.begin() + static_cast<std::ptrdiff_t>(size[0] + size[1]));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(size[0] + size[1]), order.end());
  return out;
}

}  // namespace cfr
