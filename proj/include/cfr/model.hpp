#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfr/tensor.hpp"
#include "cfr/tensor_file.hpp"

namespace cfr {

/// Shape of the encoder classifier. Images are channels×image_size×image_size.
struct ModelConfig {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t num_blocks = 2;
  std::size_t num_heads = 2;
  std::size_t embed_dim = 16;
  std::size_t mlp_dim = 32;
  std::size_t num_classes = 2;
  std::uint64_t seed = 7;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  /// Patch tokens plus the CLS token at index 0.
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return embed_dim / num_heads; }

  /// Throws ParameterError on zero extents or indivisible sizes.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weights are stored input-major (in×out); a linear layer computes x·W + b on row vectors.
struct BlockParams {
  Tensor norm1_gain, norm1_bias;
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor out_weight, out_bias;
  Tensor norm2_gain, norm2_bias;
  Tensor mlp1_weight, mlp1_bias;
  Tensor mlp2_weight, mlp2_bias;
  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

struct ModelParams {
  Tensor patch_weight;  // patch_dim × d
  Tensor patch_bias;    // d
  Tensor cls_token;     // d
  Tensor pos_embed;     // T × d
  std::vector<BlockParams> blocks;
  Tensor final_norm_gain, final_norm_bias;
  Tensor head_weight;  // d × num_classes
  Tensor head_bias;    // num_classes

  /// Every parameter with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;

  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
  /// this += scale * other, parameter by parameter.
  void axpy(double scale, const ModelParams& other);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Seeded uniform(-a, a) initialization with a = sqrt(6 / (fan_in + fan_out)).
/// Biases and norm offsets start at 0, norm gains at 1.
ModelParams init_params(const ModelConfig& config);

/// Throws DimensionError if any parameter shape disagrees with the config.
void check_params(const ModelParams& params, const ModelConfig& config);
std::uint64_t fingerprint(const ModelParams& params);

std::vector<NamedTensor> to_named_tensors(const ModelParams& params);
ModelParams from_named_tensors(const std::vector<NamedTensor>& tensors, const ModelConfig& config);

struct LayerNormCache {
  Tensor normalized;            // (x - mean) / sqrt(var + eps), per row
  std::vector<double> inv_std;  // one per row
};

struct BlockCache {
  Tensor input;
  LayerNormCache norm1;
  Tensor norm1_out;
  Tensor query, key, value;  // T × d
  Tensor scores;             // H × T × T, pre-softmax
  Tensor attention;          // H × T × T, post-softmax
  Tensor mixed;              // T × d, heads concatenated
  Tensor attn_out;           // T × d
  Tensor resid;              // input + attn_out
  LayerNormCache norm2;
  Tensor norm2_out;
  Tensor mlp_pre, mlp_act, mlp_out;
  Tensor output;  // resid + mlp_out
};

struct ActivationCache {
  ModelConfig config;
  Tensor image;
  std::uint64_t image_fingerprint = 0;
  std::uint64_t params_fingerprint = 0;
  Tensor patches;  // P × patch_dim
  Tensor tokens;   // T × d, encoder input
  std::vector<BlockCache> blocks;
  LayerNormCache final_norm;  // CLS row only
  Tensor cls_embedding;       // d, encoder output at the CLS position
  Tensor logits;
};

struct ForwardHooks {
  /// Called with each block's H×T×T attention stack after the softmax and before
  /// value mixing. Edits are used downstream and recorded in the cache.
  std::function<void(std::size_t block, Tensor& attention)> on_attention;
};

struct ForwardResult {
  Tensor logits;
  ActivationCache cache;
};

ForwardResult forward(const Tensor& image, const ModelParams& params, const ModelConfig& config,
                      const ForwardHooks* hooks = nullptr);

Tensor softmax(const Tensor& logits);
double cross_entropy(const Tensor& logits, std::size_t label);

/// Gradient of cross_entropy(logits, label) with respect to every parameter.
ModelParams backward_params(const ActivationCache& cache, std::size_t label, const ModelParams& params);

/// d logit[target] / d A for every block (H×T×T each), with the post-softmax
/// attention treated as an independent intermediate.
std::vector<Tensor> attention_gradients(const ActivationCache& cache, const ModelParams& params,
                                        std::size_t target_class);

struct LrpResult {
  /// Relevance on the post-softmax attention entries, per block, H×T×T.
  std::vector<Tensor> relevance;
  /// Total relevance at each stage of the backward pass, seed first, encoder input last.
  std::vector<std::pair<std::string, double>> layer_totals;
};

/// ε-rule relevance propagation from the target logit. Layer norms and
/// activations pass relevance through unchanged; residual sums split it in
/// proportion to each branch's contribution; attention entries receive the
/// relevance of their A·V mixing terms while propagation continues through V.
LrpResult lrp_relevance(const ActivationCache& cache, const ModelParams& params, std::size_t target_class,
                        double epsilon = 1e-6);

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 0.05;
  std::uint64_t seed = 11;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;  // mean batch loss per step, before the update
};

/// Mini-batch gradient descent with a fixed learning rate. Starts from
/// init_params(config) unless `initial` is given.
TrainResult train(std::span<const Tensor> images, std::span<const std::size_t> labels, const ModelConfig& config,
                  const TrainOptions& options, const ModelParams* initial = nullptr);

}  // namespace cfr
