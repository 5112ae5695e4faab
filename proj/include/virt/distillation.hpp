#pragma once

#include <string>
#include <vector>

#include "virt/cross_encoder.hpp"
#include "virt/tensor.hpp"

namespace virt {

enum class LayerStrategyKind { All, First, Last, Skip };

struct LayerStrategy {
  LayerStrategyKind kind = LayerStrategyKind::All;
  int k = 1;

  // "all", "first:K", "last:K", "skip:K"
  static LayerStrategy parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const LayerStrategy&) const = default;
};

enum class DistanceNorm { Frobenius, SquaredFrobenius };

struct DistillConfig {
  double alpha = 1.0;
  LayerStrategy strategy;
  TeacherMapMode teacher_map_mode = TeacherMapMode::Renormalized;
  DistanceNorm norm = DistanceNorm::Frobenius;
};

// 1-based layer indices. Throws ConfigError when k is out of range.
std::vector<int> select_layers(const LayerStrategy& strategy, int num_layers);

/// Attention-map distillation loss:
///   1/(2|S|) · Σ_{l∈S} mean_h ( ‖M̃xy − Mxy‖/m + ‖M̃yx − Myx‖/n )
/// over the valid [m×n] / [n×m] blocks. `student` and `teacher` are indexed
/// by 0-based layer; `selected` holds 1-based layer indices.
Tensor virt_loss(const std::vector<CrossMaps>& student, const std::vector<CrossMaps>& teacher,
                 std::size_t x_len, std::size_t y_len, const std::vector<int>& selected,
                 DistanceNorm norm = DistanceNorm::Frobenius);

// task + alpha·virt. With alpha == 0 the task loss is returned untouched.
Tensor combined_loss(const Tensor& task_loss, const Tensor& virt, double alpha);

// The α grid used by the sweep runner.
std::vector<double> alpha_grid();

}  // namespace virt
