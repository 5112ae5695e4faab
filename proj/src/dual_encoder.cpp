#include "virt/dual_encoder.hpp"

#include <cmath>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

CrossMaps virtual_cross_maps(const LayerActivations& x, const LayerActivations& y,
                             std::size_t x_len, std::size_t y_len, double scale_factor) {
  TapeScope scope("virtual");
  CrossMaps maps;
  auto xy_scores = attention_scores(x.queries, y.keys, scale_factor);
  auto yx_scores = attention_scores(y.queries, x.keys, scale_factor);
  for (std::size_t h = 0; h < xy_scores.size(); ++h) {
    const Tensor& sxy = xy_scores[h];
    const Tensor& syx = yx_scores[h];
    maps.xy.push_back(softmax_rows(sxy, key_mask(sxy.rows(), sxy.cols(), y_len)));
    maps.yx.push_back(softmax_rows(syx, key_mask(syx.rows(), syx.cols(), x_len)));
  }
  return maps;
}

AdaptedInteraction adapted_interaction(const Tensor& hx, const Tensor& hy, std::size_t x_len,
                                       std::size_t y_len) {
  if (hx.cols() != hy.cols()) {
    throw DimensionError("adapted_interaction: hidden widths " + shape_string(hx.shape()) +
                         " vs " + shape_string(hy.shape()));
  }
  TapeScope scope("adapted");
  const double factor = 1.0 / std::sqrt(static_cast<double>(hx.cols()));
  AdaptedInteraction out;
  Tensor sxy = scale(matmul_nt(hx, hy), factor);
  Tensor syx = scale(matmul_nt(hy, hx), factor);
  out.map_xy = softmax_rows(sxy, key_mask(sxy.rows(), sxy.cols(), y_len));
  out.map_yx = softmax_rows(syx, key_mask(syx.rows(), syx.cols(), x_len));
  out.u = mean_rows(matmul(out.map_xy, hy), x_len);
  out.v = mean_rows(matmul(out.map_yx, hx), y_len);
  return out;
}

std::pair<Tensor, Tensor> siamese_pool(const Tensor& hx, const Tensor& hy, std::size_t x_len,
                                       std::size_t y_len) {
  Tensor u, v;
  {
    TapeScope scope("x");
    u = mean_rows(hx, x_len);
  }
  {
    TapeScope scope("y");
    v = mean_rows(hy, y_len);
  }
  return {u, v};
}

Tensor fusion_vector(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape() || u.rank() != 1) {
    throw DimensionError("fusion: u " + shape_string(u.shape()) + " and v " +
                         shape_string(v.shape()) + " must be equal-length vectors");
  }
  return concat_last_dim({u, v, sub(u, v), max_pairwise(u, v)});
}

FusionHead::FusionHead(int hidden_dim, int fusion_dim, int num_classes, std::mt19937_64& rng)
    : hidden_dim_(static_cast<std::size_t>(hidden_dim)) {
  const std::size_t wide = 4 * hidden_dim_;
  const auto f = static_cast<std::size_t>(fusion_dim > 0 ? fusion_dim : hidden_dim);
  const auto c = static_cast<std::size_t>(num_classes);
  inner_w1_ = init_normal({wide, f}, 0.02, rng);
  inner_b1_ = Tensor::zeros({f}).set_requires_grad(true);
  inner_w2_ = init_normal({f, wide}, 0.02, rng);
  inner_b2_ = Tensor::zeros({wide}).set_requires_grad(true);
  outer_w_ = init_normal({wide, c}, 0.02, rng);
  outer_b_ = Tensor::zeros({c}).set_requires_grad(true);
}

Tensor FusionHead::predict(const Tensor& u, const Tensor& v, Tensor* r_out) const {
  if (u.rank() != 1 || u.dim(0) != hidden_dim_) {
    throw DimensionError("fuse_predict: expected vectors of " + std::to_string(hidden_dim_) +
                         ", got " + shape_string(u.shape()));
  }
  TapeScope scope("fusion");
  Tensor r = fusion_vector(u, v);
  Tensor inner = affine(gelu(affine(r, inner_w1_, inner_b1_)), inner_w2_, inner_b2_);
  Tensor logits = affine(add(inner, r), outer_w_, outer_b_);
  if (r_out) *r_out = r;
  return logits;
}

void FusionHead::zero_output_layer() {
  for (auto& v : outer_w_.mutable_data()) v = 0.0;
  for (auto& v : outer_b_.mutable_data()) v = 0.0;
}

void FusionHead::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "inner.w1", inner_w1_});
  out.push_back({prefix + "inner.b1", inner_b1_});
  out.push_back({prefix + "inner.w2", inner_w2_});
  out.push_back({prefix + "inner.b2", inner_b2_});
  out.push_back({prefix + "outer.w", outer_w_});
  out.push_back({prefix + "outer.b", outer_b_});
}

DualEncoder::DualEncoder(const EncoderConfig& config, const StudentOptions& options,
                         std::mt19937_64& rng)
    : encoder_(config, rng),
      options_(options),
      head_(config.hidden_dim, options.fusion_dim, config.num_classes, rng) {}

EncodedSide DualEncoder::encode_side(std::span<const int> tokens, int segment, bool capture,
                                     std::size_t valid_len) const {
  if (tokens.empty()) throw DataError("student_forward: empty input sequence");
  const std::size_t limit = static_cast<std::size_t>(
      segment == 0 ? encoder_.config().max_len_x : encoder_.config().max_len_y);
  if (tokens.size() > limit) {
    throw DataError("student_forward: sequence of " + std::to_string(tokens.size()) +
                    " tokens exceeds maximum " + std::to_string(limit));
  }
  TapeScope scope(segment == 0 ? "x" : "y");
  std::vector<int> segments(tokens.size(), segment);
  const std::size_t len = valid_len == kAllValid ? tokens.size() : valid_len;
  auto encoded = encoder_.encode(tokens, segments, 0, len, capture);
  return EncodedSide{encoded.hidden, len, std::move(encoded.layers)};
}

std::vector<CrossMaps> DualEncoder::virtual_maps(const EncodedSide& x, const EncodedSide& y) const {
  if (x.layers.size() != y.layers.size()) {
    throw ContractError("virtual maps need activations captured on both sides");
  }
  std::vector<CrossMaps> maps;
  for (std::size_t l = 0; l < x.layers.size(); ++l) {
    maps.push_back(virtual_cross_maps(x.layers[l], y.layers[l], x.length, y.length,
                                      encoder_.config().score_scale()));
  }
  return maps;
}

StudentForward DualEncoder::score(const EncodedSide& x, const EncodedSide& y) const {
  StudentForward out;
  out.hx = x.hidden;
  out.hy = y.hidden;
  if (options_.interaction == InteractionMode::Adapted) {
    auto adapted = adapted_interaction(x.hidden, y.hidden, x.length, y.length);
    out.adapted_xy = adapted.map_xy;
    out.adapted_yx = adapted.map_yx;
    out.u = adapted.u;
    out.v = adapted.v;
  } else {
    std::tie(out.u, out.v) = siamese_pool(x.hidden, y.hidden, x.length, y.length);
  }
  out.logits = head_.predict(out.u, out.v, &out.r);
  return out;
}

StudentForward DualEncoder::forward(std::span<const int> x, std::span<const int> y,
                                    bool capture_virtual) const {
  EncodedSide xs = encode_side(x, 0, capture_virtual);
  EncodedSide ys = encode_side(y, 1, capture_virtual);
  StudentForward out = score(xs, ys);
  if (capture_virtual) out.virtual_maps = virtual_maps(xs, ys);
  return out;
}

ParameterList DualEncoder::parameters() const {
  ParameterList params;
  encoder_.append_parameters(params, "encoder.");
  head_.append_parameters(params, "head.");
  return params;
}

}  // namespace virt
