#include "virt/distillation.hpp"

#include <cmath>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

LayerStrategy LayerStrategy::parse(const std::string& text) {
  LayerStrategy s;
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  if (name == "all") {
    if (colon != std::string::npos) throw ConfigError("layer strategy 'all' takes no argument");
    s.kind = LayerStrategyKind::All;
    return s;
  }
  if (name == "first") {
    s.kind = LayerStrategyKind::First;
  } else if (name == "last") {
    s.kind = LayerStrategyKind::Last;
  } else if (name == "skip") {
    s.kind = LayerStrategyKind::Skip;
  } else {
    throw ConfigError("unknown layer strategy '" + text + "'");
  }
  if (colon == std::string::npos) throw ConfigError("layer strategy '" + text + "' needs :k");
  try {
    std::size_t used = 0;
    s.k = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad k in layer strategy '" + text + "'");
  }
  return s;
}

std::string LayerStrategy::to_string() const {
  switch (kind) {
    case LayerStrategyKind::All:
      return "all";
    case LayerStrategyKind::First:
      return "first:" + std::to_string(k);
    case LayerStrategyKind::Last:
      return "last:" + std::to_string(k);
    case LayerStrategyKind::Skip:
      return "skip:" + std::to_string(k);
  }
  return "all";
}

std::vector<int> select_layers(const LayerStrategy& strategy, int num_layers) {
  if (num_layers < 1) throw ConfigError("select_layers: no layers");
  std::vector<int> layers;
  const int k = strategy.k;
  switch (strategy.kind) {
    case LayerStrategyKind::All:
      for (int l = 1; l <= num_layers; ++l) layers.push_back(l);
      break;
    case LayerStrategyKind::First:
      if (k < 1 || k > num_layers) throw ConfigError("first:k needs 1 <= k <= L");
      for (int l = 1; l <= k; ++l) layers.push_back(l);
      break;
    case LayerStrategyKind::Last:
      if (k < 1 || k > num_layers) throw ConfigError("last:k needs 1 <= k <= L");
      for (int l = num_layers - k + 1; l <= num_layers; ++l) layers.push_back(l);
      break;
    case LayerStrategyKind::Skip:
      if (k < 1) throw ConfigError("skip:k needs k >= 1");
      for (int l = 1; l <= num_layers; ++l)
        if ((l - 1) % k == 0) layers.push_back(l);
      break;
  }
  return layers;
}

namespace {

Tensor distance(const Tensor& student, const Tensor& teacher, std::size_t rows, std::size_t cols,
                DistanceNorm norm) {
  Tensor s = student;
  if (s.rows() != rows || s.cols() != cols) s = slice_cols(slice_rows(s, 0, rows), 0, cols);
  Tensor t = teacher;
  if (t.rows() != rows || t.cols() != cols) {
    NoGrad no_grad;
    t = slice_cols(slice_rows(t, 0, rows), 0, cols);
  }
  Tensor diff = sub(s, t.detach());
  return norm == DistanceNorm::Frobenius ? frobenius_norm(diff) : sum_squares(diff);
}

}  // namespace

Tensor virt_loss(const std::vector<CrossMaps>& student, const std::vector<CrossMaps>& teacher,
                 std::size_t x_len, std::size_t y_len, const std::vector<int>& selected,
                 DistanceNorm norm) {
  if (selected.empty()) throw ContractError("virt_loss: empty layer selection");
  if (x_len == 0 || y_len == 0) throw ContractError("virt_loss: empty side");
  TapeScope scope("distill");
  Tensor total;
  for (int layer : selected) {
    const auto l = static_cast<std::size_t>(layer - 1);
    if (layer < 1 || l >= student.size() || l >= teacher.size()) {
      throw ContractError("virt_loss: layer " + std::to_string(layer) + " not captured");
    }
    const auto& s = student[l];
    const auto& t = teacher[l];
    const std::size_t heads = s.xy.size();
    if (heads == 0 || t.xy.size() != heads || s.yx.size() != heads || t.yx.size() != heads) {
      throw DimensionError("virt_loss: head counts differ at layer " + std::to_string(layer));
    }
    Tensor layer_sum;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor term = add(scale(distance(s.xy[h], t.xy[h], x_len, y_len, norm), 1.0 / x_len),
                        scale(distance(s.yx[h], t.yx[h], y_len, x_len, norm), 1.0 / y_len));
      layer_sum = layer_sum.defined() ? add(layer_sum, term) : term;
    }
    Tensor layer_mean = scale(layer_sum, 1.0 / static_cast<double>(heads));
    total = total.defined() ? add(total, layer_mean) : layer_mean;
  }
  return scale(total, 1.0 / (2.0 * static_cast<double>(selected.size())));
}

Tensor combined_loss(const Tensor& task_loss, const Tensor& virt, double alpha) {
  if (!std::isfinite(task_loss.item()) || (virt.defined() && !std::isfinite(virt.item()))) {
    throw NumericError("combined_loss: non-finite loss term");
  }
  if (alpha == 0.0 || !virt.defined()) return task_loss;
  return add(task_loss, scale(virt, alpha));
}

std::vector<double> alpha_grid() { return {0.0, 0.2, 0.6, 1.0, 2.0, 10.0}; }

}  // namespace virt
