#pragma once

#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "virt/cross_encoder.hpp"
#include "virt/transformer.hpp"

namespace virt {

enum class InteractionMode {
  Adapted,  // cross-attention over final hidden states before pooling
  Siamese   // independent mean pooling (the "w/o adapted interaction" arm)
};

struct StudentOptions {
  int fusion_dim = 0;  // inner MLP width; 0 means hidden_dim
  InteractionMode interaction = InteractionMode::Adapted;
};

// One side encoded on its own. This is also what the embedding cache stores.
struct EncodedSide {
  Tensor hidden;       // [p×d]
  std::size_t length;  // valid rows
  std::vector<LayerActivations> layers;
};

struct AdaptedInteraction {
  Tensor map_xy;  // [m×n]
  Tensor map_yx;  // [n×m]
  Tensor u;
  Tensor v;
};

struct StudentForward {
  Tensor hx;
  Tensor hy;
  std::vector<CrossMaps> virtual_maps;  // per layer, only when captured
  Tensor adapted_xy;                    // undefined in siamese mode
  Tensor adapted_yx;
  Tensor u;
  Tensor v;
  Tensor r;
  Tensor logits;
};

// softmax(Q̃x·K̃yᵀ·scale) and the reverse direction for every head of one layer.
CrossMaps virtual_cross_maps(const LayerActivations& x, const LayerActivations& y,
                             std::size_t x_len, std::size_t y_len, double scale);

// Single-head cross attention between raw final hidden states, scaled by
// 1/√d, followed by mean pooling over each side's valid rows.
AdaptedInteraction adapted_interaction(const Tensor& hx, const Tensor& hy, std::size_t x_len,
                                       std::size_t y_len);

// Mean pooling of each side with no cross attention.
std::pair<Tensor, Tensor> siamese_pool(const Tensor& hx, const Tensor& hy, std::size_t x_len,
                                       std::size_t y_len);

// r = (u, v, u−v, max(u, v))
Tensor fusion_vector(const Tensor& u, const Tensor& v);

/// logits = W_o·(MLP(r) + r) + b_o with MLP: 4d → fusion_dim → 4d (GELU).
class FusionHead {
 public:
  FusionHead(int hidden_dim, int fusion_dim, int num_classes, std::mt19937_64& rng);

  Tensor predict(const Tensor& u, const Tensor& v, Tensor* r_out = nullptr) const;

  void zero_output_layer();
  void append_parameters(ParameterList& out, const std::string& prefix) const;

 private:
  std::size_t hidden_dim_;
  Tensor inner_w1_, inner_b1_, inner_w2_, inner_b2_;
  Tensor outer_w_, outer_b_;
};

/// Representation-based student: one parameter set encodes X (segment 0) and
/// Y (segment 1) independently, positions restarting at 0 on each side.
class DualEncoder {
 public:
  static constexpr std::size_t kAllValid = std::numeric_limits<std::size_t>::max();

  DualEncoder(const EncoderConfig& config, const StudentOptions& options, std::mt19937_64& rng);

  const EncoderConfig& config() const { return encoder_.config(); }
  const StudentOptions& options() const { return options_; }
  void set_interaction(InteractionMode mode) { options_.interaction = mode; }

  EncodedSide encode_side(std::span<const int> tokens, int segment, bool capture,
                          std::size_t valid_len = kAllValid) const;

  // Full forward; with capture_virtual the per-layer virtual cross maps are
  // built from each side's own query/key projections.
  StudentForward forward(std::span<const int> x, std::span<const int> y, bool capture_virtual) const;

  // Prediction head over already-encoded sides (the online path once Y is cached).
  StudentForward score(const EncodedSide& x, const EncodedSide& y) const;

  std::vector<CrossMaps> virtual_maps(const EncodedSide& x, const EncodedSide& y) const;

  FusionHead& head() { return head_; }
  ParameterList parameters() const;

 private:
  Encoder encoder_;
  StudentOptions options_;
  FusionHead head_;
};

}  // namespace virt
