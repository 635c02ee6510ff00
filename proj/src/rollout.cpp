#include "cfr/rollout.hpp"

#include <algorithm>
#include <cmath>

#include "cfr/error.hpp"
#include "cfr/tensor_file.hpp"

namespace cfr {

BlockFusion fuse_block(const Tensor& attention, const Tensor& gradients, const Tensor& relevance) {
  if (attention.rank() != 3 || attention.dim(1) != attention.dim(2)) {
    throw DimensionError("fuse_block: attention must be H×T×T");
  }
  if (gradients.dims() != attention.dims() || relevance.dims() != attention.dims()) {
    throw DimensionError("fuse_block: attention, gradient and relevance stacks differ in shape");
  }
  const std::size_t H = attention.dim(0), T = attention.dim(1);
  BlockFusion out{Tensor::identity(T)};
  const double inv_heads = 1.0 / static_cast<double>(H);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < T; ++s) {
      double acc = 0.0;
      for (std::size_t h = 0; h < H; ++h) acc += std::max(gradients(h, t, s) * relevance(h, t, s), 0.0);
      out.abar(t, s) += inv_heads * acc;
    }
  return out;
}

Tensor rollout_chain(std::span<const BlockFusion> blocks) {
  if (blocks.empty()) throw InputError("rollout_chain: no blocks");
  const auto& dims = blocks.front().abar.dims();
  if (dims.size() != 2 || dims[0] != dims[1]) throw DimensionError("rollout_chain: blocks must be square");
  Tensor m = blocks.front().abar;
  for (std::size_t b = 1; b < blocks.size(); ++b) {
    if (blocks[b].abar.dims() != dims) throw DimensionError("rollout_chain: blocks differ in token count");
    m = matmul(m, blocks[b].abar);
  }
  return m;
}

Tensor extract_patch_relevance(const Tensor& m, std::size_t cls_index) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) throw DimensionError("extract_patch_relevance: expected T×T");
  const std::size_t T = m.dim(0);
  if (cls_index >= T) throw IndexError("cls index " + std::to_string(cls_index) + " out of range");
  if (T < 2) throw DimensionError("extract_patch_relevance: no patch tokens");
  Tensor out({T - 1});
  std::size_t k = 0;
  for (std::size_t j = 0; j < T; ++j) {
    if (j != cls_index) out[k++] = m(cls_index, j);
  }
  return out;
}

RelevanceMap normalized(const RelevanceMap& map) {
  RelevanceMap out = map;
  out.normalization = Normalization::minmax;
  auto v = out.values.data();
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, range = *hi - *lo;
  for (auto& x : v) x = range > 0.0 ? (x - mn) / range : 0.0;
  return out;
}

RelevanceMap to_pixel_map(const Tensor& patch_relevance, std::size_t image_size, std::size_t patch_size,
                          bool normalize) {
  if (patch_size == 0 || image_size % patch_size != 0) {
    throw DimensionError("to_pixel_map: image size is not a multiple of the patch size");
  }
  const std::size_t g = image_size / patch_size;
  if (patch_relevance.rank() != 1 || patch_relevance.size() != g * g) {
    throw DimensionError("to_pixel_map: expected " + std::to_string(g * g) + " patch values");
  }
  RelevanceMap map;
  map.width = map.height = image_size;
  map.values = Tensor({image_size, image_size});
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x) {
      const double v = patch_relevance[(y / patch_size) * g + x / patch_size];
      if (v < 0.0 || !std::isfinite(v)) throw InputError("to_pixel_map: patch relevance must be finite and >= 0");
      map.values(y, x) = v;
    }
  return normalize ? normalized(map) : map;
}

Explanation explain(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                    const ExplainOptions& options) {
  auto fwd = forward(image, params, config);
  const auto grads = attention_gradients(fwd.cache, params, options.target_class);
  std::vector<Tensor> relevance;
  if (options.provider == RelevanceProvider::lrp) {
    relevance = lrp_relevance(fwd.cache, params, options.target_class, options.epsilon).relevance;
  } else {
    for (const auto& bc : fwd.cache.blocks) relevance.push_back(bc.attention);
  }

  Explanation out;
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    out.blocks.push_back(fuse_block(fwd.cache.blocks[b].attention, grads[b], relevance[b]));
  }
  out.rollout = rollout_chain(out.blocks);
  out.patch_relevance = extract_patch_relevance(out.rollout, 0);
  out.map = to_pixel_map(out.patch_relevance, config.image_size, config.patch_size, false);
  return out;
}

std::string encode_pgm(const RelevanceMap& map) {
  const RelevanceMap scaled = map.normalization == Normalization::minmax ? map : normalized(map);
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  for (double v : scaled.values.data()) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const RelevanceMap& map) { write_text(path, encode_pgm(map)); }

}  // namespace cfr
