#pragma once

#include <random>
#include <span>
#include <vector>

#include "virt/transformer.hpp"

namespace virt {

// How teacher cross blocks are turned into target distributions.
enum class TeacherMapMode {
  Renormalized,    // softmax of the raw cross-block scores over the block
  FullRowSubblock  // the cross sub-block of the teacher's full-row softmax
};

/// Four-way split of one layer's joint score matrix, per head. X occupies
/// rows/cols [0, m), Y occupies [m, m+n).
struct BlockPartition {
  std::vector<Tensor> s_xx;  // [m×m]
  std::vector<Tensor> s_xy;  // [m×n]
  std::vector<Tensor> s_yx;  // [n×m]
  std::vector<Tensor> s_yy;  // [n×n]
  std::vector<Tensor> fullrow_xy;  // full-row softmax restricted to X→Y
  std::vector<Tensor> fullrow_yx;
  std::size_t m = 0;
  std::size_t n = 0;
};

// Cross-attention distributions per head.
struct CrossMaps {
  std::vector<Tensor> xy;  // [m×n]
  std::vector<Tensor> yx;  // [n×m]
};

BlockPartition partition_scores(const LayerActivations& acts, std::size_t m, std::size_t n);

// [[S_xx, S_xy], [S_yx, S_yy]] for one head, rebuilt by copying.
Tensor reassemble(const BlockPartition& part, std::size_t head);

// Target maps for distillation, detached from any tape. x_len/y_len may be
// shorter than the block extents, in which case trailing columns are masked.
CrossMaps extract_target_maps(const BlockPartition& part, std::size_t x_len, std::size_t y_len,
                              TeacherMapMode mode = TeacherMapMode::Renormalized);

struct TeacherOutput {
  Tensor logits;
  std::vector<BlockPartition> partitions;  // one per layer when captured
  std::vector<LayerActivations> layers;    // the joint activations they were cut from
};

/// Interaction-based teacher: encodes [X;Y] jointly (X at positions 0..m-1 with
/// segment 0, Y at m..m+n-1 with segment 1), mean-pools every position and
/// classifies with a single affine layer.
class CrossEncoder {
 public:
  CrossEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  const EncoderConfig& config() const { return encoder_.config(); }

  TeacherOutput forward(std::span<const int> x, std::span<const int> y, bool capture) const;

  ParameterList parameters() const;

 private:
  Encoder encoder_;
  Tensor classifier_weight_;
  Tensor classifier_bias_;
};

}  // namespace virt
