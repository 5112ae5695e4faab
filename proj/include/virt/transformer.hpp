#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "virt/grad_check.hpp"
#include "virt/tensor.hpp"

namespace virt {

using ParameterList = std::vector<NamedParameter>;

enum class Activation { Gelu, Relu };

enum class AttentionScale {
  PerHead,  // 1/√(d/h)
  Hidden,   // 1/√d
};

struct EncoderConfig {
  int num_layers = 2;
  int hidden_dim = 32;
  int num_heads = 2;
  int ffn_dim = 64;
  int vocab_size = 64;
  int max_len_x = 12;
  int max_len_y = 12;
  int num_classes = 2;
  bool use_segments = true;
  Activation activation = Activation::Gelu;
  AttentionScale attention_scale = AttentionScale::PerHead;

  int head_dim() const { return hidden_dim / num_heads; }
  int position_table_size() const { return max_len_x + max_len_y; }
  double score_scale() const;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const EncoderConfig&) const = default;
};

/// Everything one encoder layer exposes for distillation. Per-head tensors
/// are stored head-major: element h is head h's matrix.
struct LayerActivations {
  std::vector<Tensor> scores;   // pre-softmax, [p×p]
  std::vector<Tensor> maps;     // post-softmax, [p×p]
  std::vector<Tensor> queries;  // [p×d_h]
  std::vector<Tensor> keys;     // [p×d_h]
  Tensor hidden;                // layer output, [p×d]
};

struct EncodeResult {
  Tensor hidden;
  std::vector<LayerActivations> layers;  // empty unless capture was requested
};

// Per-head scaled dot products Q_a·K_bᵀ·scale. Throws DimensionError when the
// head counts or per-head widths disagree.
std::vector<Tensor> attention_scores(std::span<const Tensor> queries, std::span<const Tensor> keys,
                                     double factor);

// Stacks per-head [p×q] matrices into one [h×p×q] tensor (no gradient).
Tensor stack_heads(std::span<const Tensor> heads);

class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }

  // Token + position (from position_offset) + segment embeddings.
  Tensor embed(std::span<const int> tokens, std::span<const int> segments, int position_offset) const;
  Tensor embed(std::span<const int> tokens, int segment, int position_offset) const;

  // One post-LN transformer layer. Rows at or beyond valid_len are padding:
  // no query attends to them.
  std::pair<Tensor, LayerActivations> layer(std::size_t index, const Tensor& input,
                                            std::size_t valid_len) const;

  EncodeResult encode(std::span<const int> tokens, std::span<const int> segments,
                      int position_offset, std::size_t valid_len, bool capture) const;

  void append_parameters(ParameterList& out, const std::string& prefix) const;

 private:
  struct LayerParams {
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor ln1_gain, ln1_bias;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gain, ln2_bias;
  };

  EncoderConfig config_;
  Tensor token_table_;
  Tensor position_table_;
  Tensor segment_table_;
  std::vector<LayerParams> layers_;
};

// Normal(0, std) initialized parameter of the given shape.
Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng);

// Affine map x·W + b for a matrix or a single vector x.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

std::size_t parameter_count(const ParameterList& params);

}  // namespace virt
