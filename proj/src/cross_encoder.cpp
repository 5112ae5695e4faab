#include "virt/cross_encoder.hpp"

#include <algorithm>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

namespace {

// Plain copy of a rectangular block; no tape involvement.
Tensor block(const Tensor& full, std::size_t r0, std::size_t rows, std::size_t c0,
             std::size_t cols) {
  const std::size_t width = full.cols();
  auto src = full.data();
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(src.data() + (r0 + i) * width + c0, cols, out.data() + i * cols);
  return Tensor({rows, cols}, std::move(out));
}

}  // namespace

BlockPartition partition_scores(const LayerActivations& acts, std::size_t m, std::size_t n) {
  BlockPartition part;
  part.m = m;
  part.n = n;
  for (std::size_t h = 0; h < acts.scores.size(); ++h) {
    const Tensor& s = acts.scores[h];
    if (s.rows() != m + n || s.cols() != m + n) {
      throw DimensionError("partition_scores: score matrix " + shape_string(s.shape()) +
                           " does not split into " + std::to_string(m) + "+" + std::to_string(n));
    }
    part.s_xx.push_back(block(s, 0, m, 0, m));
    part.s_xy.push_back(block(s, 0, m, m, n));
    part.s_yx.push_back(block(s, m, n, 0, m));
    part.s_yy.push_back(block(s, m, n, m, n));
    part.fullrow_xy.push_back(block(acts.maps[h], 0, m, m, n));
    part.fullrow_yx.push_back(block(acts.maps[h], m, n, 0, m));
  }
  return part;
}

Tensor reassemble(const BlockPartition& part, std::size_t head) {
  const std::size_t m = part.m, n = part.n, p = m + n;
  std::vector<double> out(p * p);
  auto put = [&](const Tensor& b, std::size_t r0, std::size_t c0) {
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j) out[(r0 + i) * p + c0 + j] = b(i, j);
  };
  put(part.s_xx.at(head), 0, 0);
  put(part.s_xy.at(head), 0, m);
  put(part.s_yx.at(head), m, 0);
  put(part.s_yy.at(head), m, m);
  return Tensor({p, p}, std::move(out));
}

CrossMaps extract_target_maps(const BlockPartition& part, std::size_t x_len, std::size_t y_len,
                              TeacherMapMode mode) {
  NoGrad no_grad;
  CrossMaps maps;
  for (std::size_t h = 0; h < part.s_xy.size(); ++h) {
    if (mode == TeacherMapMode::Renormalized) {
      const Tensor& sxy = part.s_xy[h];
      const Tensor& syx = part.s_yx[h];
      maps.xy.push_back(softmax_rows(sxy, key_mask(sxy.rows(), sxy.cols(), y_len)).detach());
      maps.yx.push_back(softmax_rows(syx, key_mask(syx.rows(), syx.cols(), x_len)).detach());
    } else {
      maps.xy.push_back(part.fullrow_xy[h].detach());
      maps.yx.push_back(part.fullrow_yx[h].detach());
    }
  }
  return maps;
}

CrossEncoder::CrossEncoder(const EncoderConfig& config, std::mt19937_64& rng)
    : encoder_(config, rng) {
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  const auto c = static_cast<std::size_t>(config.num_classes);
  classifier_weight_ = init_normal({d, c}, 0.02, rng);
  classifier_bias_ = Tensor::zeros({c}).set_requires_grad(true);
}

TeacherOutput CrossEncoder::forward(std::span<const int> x, std::span<const int> y,
                                    bool capture) const {
  const auto& cfg = encoder_.config();
  if (x.empty() || y.empty()) throw DataError("teacher_forward: empty X or Y");
  if (x.size() > static_cast<std::size_t>(cfg.max_len_x) ||
      y.size() > static_cast<std::size_t>(cfg.max_len_y)) {
    throw DataError("teacher_forward: pair lengths " + std::to_string(x.size()) + "+" +
                    std::to_string(y.size()) + " exceed configured maxima");
  }
  std::vector<int> tokens(x.begin(), x.end());
  tokens.insert(tokens.end(), y.begin(), y.end());
  std::vector<int> segments(x.size(), 0);
  segments.resize(tokens.size(), 1);

  auto encoded = encoder_.encode(tokens, segments, 0, tokens.size(), capture);
  TeacherOutput out;
  Tensor pooled = mean_rows(encoded.hidden, tokens.size());
  out.logits = affine(pooled, classifier_weight_, classifier_bias_);
  for (const auto& layer : encoded.layers) {
    out.partitions.push_back(partition_scores(layer, x.size(), y.size()));
  }
  out.layers = std::move(encoded.layers);
  return out;
}

ParameterList CrossEncoder::parameters() const {
  ParameterList params;
  encoder_.append_parameters(params, "encoder.");
  params.push_back({"classifier.weight", classifier_weight_});
  params.push_back({"classifier.bias", classifier_bias_});
  return params;
}

}  // namespace virt
