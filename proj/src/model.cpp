#include "cfr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "cfr/error.hpp"
#include "cfr/random.hpp"

namespace cfr {

namespace {

constexpr double kNormEps = 1e-5;

// ---------------------------------------------------------------- helpers

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  for (std::size_t t = 0; t < y.dim(0); ++t) {
    auto r = y.row(t);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  return y;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// dW += xᵀ·dy, db += colsum(dy); returns dx = dy·Wᵀ.
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db) {
  add_into(dw, matmul(transpose(x), dy));
  for (std::size_t t = 0; t < dy.dim(0); ++t) {
    auto r = dy.row(t);
    for (std::size_t j = 0; j < r.size(); ++j) db[j] += r[j];
  }
  return matmul(dy, transpose(w));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormCache& cache) {
  const std::size_t rows = x.dim(0), d = x.dim(1);
  cache.normalized = Tensor({rows, d});
  cache.inv_std.assign(rows, 0.0);
  Tensor y({rows, d});
  for (std::size_t t = 0; t < rows; ++t) {
    auto xr = x.row(t);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kNormEps);
    cache.inv_std[t] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xr[j] - mean) * inv;
      cache.normalized(t, j) = n;
      y(t, j) = n * gain[j] + bias[j];
    }
  }
  return y;
}

Tensor layer_norm_backward(const LayerNormCache& cache, const Tensor& gain, const Tensor& dy, Tensor& dgain,
                           Tensor& dbias) {
  const std::size_t rows = dy.dim(0), d = dy.dim(1);
  Tensor dx({rows, d});
  std::vector<double> dn(d);
  for (std::size_t t = 0; t < rows; ++t) {
    double mean_dn = 0.0, mean_dn_n = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy(t, j);
      const double n = cache.normalized(t, j);
      dgain[j] += g * n;
      dbias[j] += g;
      dn[j] = g * gain[j];
      mean_dn += dn[j];
      mean_dn_n += dn[j] * n;
    }
    mean_dn /= static_cast<double>(d);
    mean_dn_n /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(t, j) = cache.inv_std[t] * (dn[j] - mean_dn - cache.normalized(t, j) * mean_dn_n);
    }
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) {
  const double inner = kGeluC * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad(double x) {
  const double inner = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
}

Tensor extract_patches(const Tensor& image, const ModelConfig& cfg) {
  const std::size_t p = cfg.patch_size, g = cfg.grid();
  Tensor patches({cfg.num_patches(), cfg.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      auto row = patches.row(gy * g + gx);
      std::size_t k = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) row[k++] = image(c, gy * p + dy, gx * p + dx);
    }
  return patches;
}

void check_cache(const ActivationCache& cache, const ModelParams& params) {
  if (cache.blocks.size() != cache.config.num_blocks || cache.logits.empty()) {
    throw CacheInvalidError("activation cache is incomplete");
  }
  if (fingerprint(cache.image) != cache.image_fingerprint) {
    throw CacheInvalidError("activation cache input no longer matches its recorded hash");
  }
  if (fingerprint(params) != cache.params_fingerprint) {
    throw CacheInvalidError("activation cache was produced with different parameters");
  }
}

struct Backprop {
  ModelParams grads;
  std::vector<Tensor> attention_grads;
};

// Reverse-mode pass seeded with d(objective)/d(logits).
Backprop backprop(const ActivationCache& c, const ModelParams& p, const Tensor& dlogits) {
  const ModelConfig& cfg = c.config;
  const std::size_t T = cfg.num_tokens(), d = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Backprop out;
  ModelParams& g = out.grads;
  g = p.zeros_like();
  out.attention_grads.resize(cfg.num_blocks);

  // Classifier head on the CLS embedding.
  Tensor z_row = c.cls_embedding.reshaped({1, d});
  Tensor dlog_row = dlogits.reshaped({1, cfg.num_classes});
  Tensor dz = linear_backward(z_row, p.head_weight, dlog_row, g.head_weight, g.head_bias);
  Tensor dcls = layer_norm_backward(c.final_norm, p.final_norm_gain, dz, g.final_norm_gain, g.final_norm_bias);

  Tensor dx({T, d});
  for (std::size_t j = 0; j < d; ++j) dx(0, j) = dcls(0, j);

  for (std::size_t b = cfg.num_blocks; b-- > 0;) {
    const BlockCache& bc = c.blocks[b];
    const BlockParams& bp = p.blocks[b];
    BlockParams& bg = g.blocks[b];

    // output = resid + mlp(norm2(resid))
    Tensor dresid = dx;
    Tensor dact = linear_backward(bc.mlp_act, bp.mlp2_weight, dx, bg.mlp2_weight, bg.mlp2_bias);
    for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= gelu_grad(bc.mlp_pre[i]);
    Tensor dnorm2 = linear_backward(bc.norm2_out, bp.mlp1_weight, dact, bg.mlp1_weight, bg.mlp1_bias);
    add_into(dresid, layer_norm_backward(bc.norm2, bp.norm2_gain, dnorm2, bg.norm2_gain, bg.norm2_bias));

    // resid = input + attn(norm1(input))
    Tensor dinput = dresid;
    Tensor dmixed = linear_backward(bc.mixed, bp.out_weight, dresid, bg.out_weight, bg.out_bias);

    Tensor dA({H, T, T});
    Tensor dq({T, d}), dk({T, d}), dv({T, d});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < T; ++s) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dh; ++j) acc += dmixed(t, off + j) * bc.value(s, off + j);
          dA(h, t, s) = acc;
        }
      for (std::size_t s = 0; s < T; ++s)
        for (std::size_t j = 0; j < dh; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t) acc += bc.attention(h, t, s) * dmixed(t, off + j);
          dv(s, off + j) = acc;
        }
      for (std::size_t t = 0; t < T; ++t) {
        double dot = 0.0;
        for (std::size_t s = 0; s < T; ++s) dot += bc.attention(h, t, s) * dA(h, t, s);
        for (std::size_t s = 0; s < T; ++s) {
          const double dscore = bc.attention(h, t, s) * (dA(h, t, s) - dot) * scale;
          if (dscore == 0.0) continue;
          for (std::size_t j = 0; j < dh; ++j) {
            dq(t, off + j) += dscore * bc.key(s, off + j);
            dk(s, off + j) += dscore * bc.query(t, off + j);
          }
        }
      }
    }
    out.attention_grads[b] = std::move(dA);

    Tensor dnorm1 = linear_backward(bc.norm1_out, bp.query_weight, dq, bg.query_weight, bg.query_bias);
    add_into(dnorm1, linear_backward(bc.norm1_out, bp.key_weight, dk, bg.key_weight, bg.key_bias));
    add_into(dnorm1, linear_backward(bc.norm1_out, bp.value_weight, dv, bg.value_weight, bg.value_bias));
    add_into(dinput, layer_norm_backward(bc.norm1, bp.norm1_gain, dnorm1, bg.norm1_gain, bg.norm1_bias));
    dx = std::move(dinput);
  }

  // tokens[0] = cls + pos[0]; tokens[i] = patch_{i-1}·W + b + pos[i]
  add_into(g.pos_embed, dx);
  for (std::size_t j = 0; j < d; ++j) g.cls_token[j] += dx(0, j);
  const std::size_t P = cfg.num_patches();
  Tensor dpatch_tokens({P, d});
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < d; ++j) dpatch_tokens(i, j) = dx(i + 1, j);
  linear_backward(c.patches, p.patch_weight, dpatch_tokens, g.patch_weight, g.patch_bias);
  return out;
}

// ---------------------------------------------------------------- LRP helpers

double stabilize(double v, double eps) { return v + (v >= 0.0 ? eps : -eps); }

// ε-rule through x·W (+ bias, which is left out of the denominator so it absorbs nothing).
Tensor lrp_linear(const Tensor& x, const Tensor& w, const Tensor& rel_out, double eps) {
  Tensor z = matmul(x, w);
  Tensor s = rel_out;
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = rel_out[i] / stabilize(z[i], eps);
  Tensor back = matmul(s, transpose(w));
  for (std::size_t i = 0; i < back.size(); ++i) back[i] *= x[i];
  return back;
}

// out = a + b, split elementwise by magnitude: |a|/(|a|+|b|). The signed ratio a/out
// explodes wherever the stream and the branch nearly cancel.
void lrp_sum(const Tensor& a, const Tensor& b, const Tensor& rel_out, Tensor& rel_a, Tensor& rel_b) {
  rel_a = Tensor(rel_out.dims());
  rel_b = Tensor(rel_out.dims());
  for (std::size_t i = 0; i < rel_out.size(); ++i) {
    const double ma = std::abs(a[i]), mb = std::abs(b[i]);
    rel_a[i] = ma + mb > 0.0 ? rel_out[i] * (ma / (ma + mb)) : 0.5 * rel_out[i];
    rel_b[i] = rel_out[i] - rel_a[i];
  }
}

double total(const Tensor& t) { return exact_sum(t.data()); }

}  // namespace

// ---------------------------------------------------------------- config / params

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ParameterError("model config: " + msg);
  };
  need(channels > 0 && image_size > 0 && patch_size > 0, "channels, image_size and patch_size must be positive");
  need(num_blocks > 0 && num_heads > 0 && embed_dim > 0 && mlp_dim > 0, "block, head and width counts must be positive");
  need(num_classes >= 2, "num_classes must be at least 2");
  need(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  need(embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out = {
      {"patch_weight", &patch_weight},
      {"patch_bias", &patch_bias},
      {"cls_token", &cls_token},
      {"pos_embed", &pos_embed},
  };
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string pre = "blocks." + std::to_string(b) + ".";
    BlockParams& bp = blocks[b];
    for (auto [name, t] : std::initializer_list<std::pair<const char*, Tensor*>>{
             {"norm1_gain", &bp.norm1_gain},   {"norm1_bias", &bp.norm1_bias},   {"query_weight", &bp.query_weight},
             {"query_bias", &bp.query_bias},   {"key_weight", &bp.key_weight},   {"key_bias", &bp.key_bias},
             {"value_weight", &bp.value_weight}, {"value_bias", &bp.value_bias}, {"out_weight", &bp.out_weight},
             {"out_bias", &bp.out_bias},       {"norm2_gain", &bp.norm2_gain},   {"norm2_bias", &bp.norm2_bias},
             {"mlp1_weight", &bp.mlp1_weight}, {"mlp1_bias", &bp.mlp1_bias},     {"mlp2_weight", &bp.mlp2_weight},
             {"mlp2_bias", &bp.mlp2_bias}}) {
      out.emplace_back(pre + name, t);
    }
  }
  out.emplace_back("final_norm_gain", &final_norm_gain);
  out.emplace_back("final_norm_bias", &final_norm_bias);
  out.emplace_back("head_weight", &head_weight);
  out.emplace_back("head_bias", &head_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mutable_list = const_cast<ModelParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mutable_list.size());
  for (auto& [name, t] : mutable_list) out.emplace_back(std::move(name), t);
  return out;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& [name, t] : z.named()) std::fill(t->data().begin(), t->data().end(), 0.0);
  return z;
}

void ModelParams::axpy(double scale, const ModelParams& other) {
  auto mine = named();
  auto theirs = other.named();
  if (mine.size() != theirs.size()) throw DimensionError("axpy: parameter sets differ");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    Tensor& a = *mine[i].second;
    const Tensor& b = *theirs[i].second;
    if (a.dims() != b.dims()) throw DimensionError("axpy: shape mismatch in " + mine[i].first);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += scale * b[k];
  }
}

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  CounterRng root = CounterRng(cfg.seed).split("init");
  std::uint64_t stream = 0;
  auto uniform_matrix = [&](std::size_t in, std::size_t out) {
    CounterRng rng = root.split(stream++);
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({in, out});
    for (auto& v : w.data()) v = rng.uniform(-a, a);
    return w;
  };
  const std::size_t d = cfg.embed_dim, T = cfg.num_tokens();
  ModelParams p;
  p.patch_weight = uniform_matrix(cfg.patch_dim(), d);
  p.patch_bias = Tensor({d});
  p.cls_token = uniform_matrix(1, d).reshaped({d});
  p.pos_embed = uniform_matrix(T, d);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    BlockParams bp;
    bp.norm1_gain = Tensor::filled({d}, 1.0);
    bp.norm1_bias = Tensor({d});
    bp.query_weight = uniform_matrix(d, d);
    bp.query_bias = Tensor({d});
    bp.key_weight = uniform_matrix(d, d);
    bp.key_bias = Tensor({d});
    bp.value_weight = uniform_matrix(d, d);
    bp.value_bias = Tensor({d});
    bp.out_weight = uniform_matrix(d, d);
    bp.out_bias = Tensor({d});
    bp.norm2_gain = Tensor::filled({d}, 1.0);
    bp.norm2_bias = Tensor({d});
    bp.mlp1_weight = uniform_matrix(d, cfg.mlp_dim);
    bp.mlp1_bias = Tensor({cfg.mlp_dim});
    bp.mlp2_weight = uniform_matrix(cfg.mlp_dim, d);
    bp.mlp2_bias = Tensor({d});
    p.blocks.push_back(std::move(bp));
  }
  p.final_norm_gain = Tensor::filled({d}, 1.0);
  p.final_norm_bias = Tensor({d});
  p.head_weight = uniform_matrix(d, cfg.num_classes);
  p.head_bias = Tensor({cfg.num_classes});
  return p;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  cfg.validate();
  if (params.blocks.size() != cfg.num_blocks) {
    throw DimensionError("params have " + std::to_string(params.blocks.size()) + " blocks, config expects " +
                         std::to_string(cfg.num_blocks));
  }
  const ModelParams expected = init_params(cfg);
  auto have = params.named();
  auto want = expected.named();
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (have[i].second->dims() != want[i].second->dims()) {
      throw DimensionError("parameter " + want[i].first + " has the wrong shape");
    }
  }
}

std::uint64_t fingerprint(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params.named()) h = fingerprint(*t, h);
  return h;
}

std::vector<NamedTensor> to_named_tensors(const ModelParams& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params.named()) out.push_back({name, *t});
  return out;
}

ModelParams from_named_tensors(const std::vector<NamedTensor>& tensors, const ModelConfig& config) {
  ModelParams p = init_params(config);
  const auto slots = p.named();
  if (tensors.size() != slots.size()) {
    throw DimensionError("parameter file has " + std::to_string(tensors.size()) + " tensors, the config needs " +
                         std::to_string(slots.size()));
  }
  for (auto& [name, t] : slots) {
    const Tensor& src = find_tensor(tensors, name);
    if (src.dims() != t->dims()) throw DimensionError("parameter " + name + " has the wrong shape");
    *t = src;
  }
  return p;
}

// ---------------------------------------------------------------- forward

ForwardResult forward(const Tensor& image, const ModelParams& p, const ModelConfig& cfg, const ForwardHooks* hooks) {
  cfg.validate();
  if (image.dims() != std::vector<std::size_t>{cfg.channels, cfg.image_size, cfg.image_size}) {
    throw DimensionError("forward: image shape does not match the model config");
  }
  if (p.blocks.size() != cfg.num_blocks || p.pos_embed.empty() || p.pos_embed.dim(0) != cfg.num_tokens() ||
      p.patch_weight.dim(0) != cfg.patch_dim()) {
    throw DimensionError("forward: parameters do not match the model config");
  }
  const std::size_t T = cfg.num_tokens(), d = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ActivationCache c;
  c.config = cfg;
  c.image = image;
  c.image_fingerprint = fingerprint(image);
  c.params_fingerprint = fingerprint(p);
  c.patches = extract_patches(image, cfg);

  Tensor embedded = linear(c.patches, p.patch_weight, p.patch_bias);
  c.tokens = Tensor({T, d});
  for (std::size_t j = 0; j < d; ++j) c.tokens(0, j) = p.cls_token[j] + p.pos_embed(0, j);
  for (std::size_t i = 1; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j) c.tokens(i, j) = embedded(i - 1, j) + p.pos_embed(i, j);

  Tensor x = c.tokens;
  c.blocks.resize(cfg.num_blocks);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const BlockParams& bp = p.blocks[b];
    BlockCache& bc = c.blocks[b];
    bc.input = x;
    bc.norm1_out = layer_norm(x, bp.norm1_gain, bp.norm1_bias, bc.norm1);
    bc.query = linear(bc.norm1_out, bp.query_weight, bp.query_bias);
    bc.key = linear(bc.norm1_out, bp.key_weight, bp.key_bias);
    bc.value = linear(bc.norm1_out, bp.value_weight, bp.value_bias);

    bc.scores = Tensor({H, T, T});
    bc.attention = Tensor({H, T, T});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      Tensor s({T, T});
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < T; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dh; ++j) acc += bc.query(t, off + j) * bc.key(u, off + j);
          s(t, u) = acc * scale;
        }
      Tensor a = softmax_rows(s);
      std::copy(s.data().begin(), s.data().end(), bc.scores.row(h).begin());
      std::copy(a.data().begin(), a.data().end(), bc.attention.row(h).begin());
    }
    if (hooks && hooks->on_attention) {
      hooks->on_attention(b, bc.attention);
      if (bc.attention.dims() != std::vector<std::size_t>{H, T, T}) {
        throw DimensionError("attention hook changed the attention shape");
      }
    }

    bc.mixed = Tensor({T, d});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u < T; ++u) {
          const double a = bc.attention(h, t, u);
          for (std::size_t j = 0; j < dh; ++j) bc.mixed(t, off + j) += a * bc.value(u, off + j);
        }
    }
    bc.attn_out = linear(bc.mixed, bp.out_weight, bp.out_bias);
    bc.resid = x;
    add_into(bc.resid, bc.attn_out);

    bc.norm2_out = layer_norm(bc.resid, bp.norm2_gain, bp.norm2_bias, bc.norm2);
    bc.mlp_pre = linear(bc.norm2_out, bp.mlp1_weight, bp.mlp1_bias);
    bc.mlp_act = bc.mlp_pre;
    for (auto& v : bc.mlp_act.data()) v = gelu(v);
    bc.mlp_out = linear(bc.mlp_act, bp.mlp2_weight, bp.mlp2_bias);
    bc.output = bc.resid;
    add_into(bc.output, bc.mlp_out);
    x = bc.output;
  }

  Tensor cls_row({1, d});
  for (std::size_t j = 0; j < d; ++j) cls_row(0, j) = x(0, j);
  Tensor z = layer_norm(cls_row, p.final_norm_gain, p.final_norm_bias, c.final_norm);
  c.cls_embedding = z.reshaped({d});
  c.logits = linear(z, p.head_weight, p.head_bias).reshaped({cfg.num_classes});
  return {c.logits, std::move(c)};
}

Tensor softmax(const Tensor& logits) {
  return softmax_rows(logits.reshaped({1, logits.size()})).reshaped({logits.size()});
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) throw IndexError("label out of range");
  const double mx = *std::max_element(logits.data().begin(), logits.data().end());
  double sum = 0.0;
  for (double v : logits.data()) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits[label];
}

// ---------------------------------------------------------------- backward

ModelParams backward_params(const ActivationCache& cache, std::size_t label, const ModelParams& params) {
  check_cache(cache, params);
  if (label >= cache.config.num_classes) throw IndexError("label out of range");
  Tensor dlogits = softmax(cache.logits);
  dlogits[label] -= 1.0;
  return backprop(cache, params, dlogits).grads;
}

std::vector<Tensor> attention_gradients(const ActivationCache& cache, const ModelParams& params,
                                        std::size_t target_class) {
  check_cache(cache, params);
  if (target_class >= cache.config.num_classes) {
    throw IndexError("target class " + std::to_string(target_class) + " out of range");
  }
  Tensor seed({cache.config.num_classes});
  seed[target_class] = 1.0;
  return backprop(cache, params, seed).attention_grads;
}

LrpResult lrp_relevance(const ActivationCache& cache, const ModelParams& params, std::size_t target_class,
                        double epsilon) {
  if (!(epsilon > 0.0)) throw ParameterError("epsilon must be positive");
  check_cache(cache, params);
  const ModelConfig& cfg = cache.config;
  if (target_class >= cfg.num_classes) {
    throw IndexError("target class " + std::to_string(target_class) + " out of range");
  }
  const std::size_t T = cfg.num_tokens(), d = cfg.embed_dim, H = cfg.num_heads, dh = cfg.head_dim();

  LrpResult out;
  out.relevance.resize(cfg.num_blocks);

  const double seed = cache.logits[target_class];
  Tensor rel_logits({1, cfg.num_classes});
  rel_logits(0, target_class) = seed;
  out.layer_totals.emplace_back("logit", seed);

  Tensor z_row = cache.cls_embedding.reshaped({1, d});
  Tensor rel_z = lrp_linear(z_row, params.head_weight, rel_logits, epsilon);
  out.layer_totals.emplace_back("cls_embedding", total(rel_z));

  // Final norm passes relevance through to the CLS row of the last block output.
  Tensor rel({T, d});
  for (std::size_t j = 0; j < d; ++j) rel(0, j) = rel_z(0, j);

  for (std::size_t b = cfg.num_blocks; b-- > 0;) {
    const BlockCache& bc = cache.blocks[b];
    const BlockParams& bp = params.blocks[b];

    Tensor rel_resid, rel_mlp;
    lrp_sum(bc.resid, bc.mlp_out, rel, rel_resid, rel_mlp);
    Tensor rel_act = lrp_linear(bc.mlp_act, bp.mlp2_weight, rel_mlp, epsilon);
    add_into(rel_resid, lrp_linear(bc.norm2_out, bp.mlp1_weight, rel_act, epsilon));

    Tensor rel_input, rel_attn;
    lrp_sum(bc.input, bc.attn_out, rel_resid, rel_input, rel_attn);
    Tensor rel_mixed = lrp_linear(bc.mixed, bp.out_weight, rel_attn, epsilon);

    Tensor rel_A({H, T, T});
    Tensor rel_value({T, d});
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < dh; ++j) {
          const double share = rel_mixed(t, off + j) / stabilize(bc.mixed(t, off + j), epsilon);
          if (share == 0.0) continue;
          for (std::size_t s = 0; s < T; ++s) {
            const double r = bc.attention(h, t, s) * bc.value(s, off + j) * share;
            rel_A(h, t, s) += r;
            rel_value(s, off + j) += r;
          }
        }
    }
    out.relevance[b] = std::move(rel_A);
    add_into(rel_input, lrp_linear(bc.norm1_out, bp.value_weight, rel_value, epsilon));
    rel = std::move(rel_input);
    out.layer_totals.emplace_back("block" + std::to_string(b) + ".input", total(rel));
  }
  return out;
}

// ---------------------------------------------------------------- training

TrainResult train(std::span<const Tensor> images, std::span<const std::size_t> labels, const ModelConfig& config,
                  const TrainOptions& options, const ModelParams* initial) {
  config.validate();
  if (images.empty()) throw InputError("training set is empty");
  if (images.size() != labels.size()) throw InputError("images and labels differ in count");
  for (auto l : labels) {
    if (l >= config.num_classes) throw InputError("label " + std::to_string(l) + " out of range");
  }
  if (options.batch_size == 0) throw ParameterError("batch_size must be positive");
  if (!(options.learning_rate >= 0.0)) throw ParameterError("learning_rate must be non-negative");

  TrainResult result;
  result.params = initial ? *initial : init_params(config);
  check_params(result.params, config);

  const CounterRng shuffle_root = CounterRng(options.seed).split("shuffle");
  std::vector<std::size_t> order(images.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng = shuffle_root.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t stop = std::min(order.size(), start + options.batch_size);
      ModelParams grad = result.params.zeros_like();
      double loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t idx = order[k];
        auto fwd = forward(images[idx], result.params, config);
        loss += cross_entropy(fwd.logits, labels[idx]);
        grad.axpy(1.0, backward_params(fwd.cache, labels[idx], result.params));
      }
      const double n = static_cast<double>(stop - start);
      loss /= n;
      if (!std::isfinite(loss)) throw DivergenceError("training diverged at step " + std::to_string(step));
      result.params.axpy(-options.learning_rate / n, grad);
      result.losses.push_back(loss);
      ++step;
    }
  }
  return result;
}

}  // namespace cfr
