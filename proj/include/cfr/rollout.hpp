#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cfr/model.hpp"
#include "cfr/tensor.hpp"

namespace cfr {

/// Relevance-adjusted attention of one block: I + mean over heads of max(∇A ⊙ R, 0).
struct BlockFusion {
  Tensor abar;  // T × T
};

enum class Normalization { raw, minmax };

/// Per-pixel relevance for one image. values is height × width and non-negative.
struct RelevanceMap {
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor values;
  Normalization normalization = Normalization::raw;
};

/// Where the per-head relevance stack comes from.
enum class RelevanceProvider {
  lrp,        // ε-rule propagation through the model
  attention,  // R := A, a baseline that reduces the fusion to positive ∇A ⊙ A
};

BlockFusion fuse_block(const Tensor& attention, const Tensor& gradients, const Tensor& relevance);

/// Ā(1)·Ā(2)·…·Ā(B), block 1 (nearest the input) first.
Tensor rollout_chain(std::span<const BlockFusion> blocks);

/// Row `cls_index` of m with column `cls_index` removed.
Tensor extract_patch_relevance(const Tensor& m, std::size_t cls_index);

/// Nearest replication of each patch value over its patch_size² footprint.
RelevanceMap to_pixel_map(const Tensor& patch_relevance, std::size_t image_size, std::size_t patch_size,
                          bool normalize);

/// Min-max scaled copy; a constant map becomes all zeros.
RelevanceMap normalized(const RelevanceMap& map);

struct ExplainOptions {
  std::size_t target_class = 1;
  RelevanceProvider provider = RelevanceProvider::lrp;
  double epsilon = 1e-6;
};

struct Explanation {
  std::vector<BlockFusion> blocks;
  Tensor rollout;          // T × T
  Tensor patch_relevance;  // num_patches
  RelevanceMap map;        // raw
};

/// Forward pass, attribution inputs, fusion, chain, CLS readout and pixel projection.
Explanation explain(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                    const ExplainOptions& options = {});

/// Binary 8-bit PGM (P5) of the min-max scaled map.
std::string encode_pgm(const RelevanceMap& map);
void write_pgm(const std::filesystem::path& path, const RelevanceMap& map);

}  // namespace cfr
