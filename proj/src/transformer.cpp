#include "virt/transformer.hpp"

#include <cmath>

#include "virt/error.hpp"
#include "virt/ops.hpp"

namespace virt {

namespace {

constexpr double kInitStd = 0.02;

Tensor parameter(Tensor t) { return t.set_requires_grad(true); }

}  // namespace

double EncoderConfig::score_scale() const {
  const double width = attention_scale == AttentionScale::PerHead ? head_dim() : hidden_dim;
  return 1.0 / std::sqrt(width);
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder config: " + what); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_heads < 1) fail("num_heads must be >= 1");
  if (hidden_dim < 2) fail("hidden_dim must be >= 2");
  if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (max_len_x < 1 || max_len_y < 1) fail("max lengths must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
}

std::vector<Tensor> attention_scores(std::span<const Tensor> queries, std::span<const Tensor> keys,
                                     double factor) {
  if (queries.size() != keys.size()) {
    throw DimensionError("attention_scores: " + std::to_string(queries.size()) +
                         " query heads vs " + std::to_string(keys.size()) + " key heads");
  }
  std::vector<Tensor> out;
  out.reserve(queries.size());
  for (std::size_t h = 0; h < queries.size(); ++h) {
    if (queries[h].cols() != keys[h].cols()) {
      throw DimensionError("attention_scores: head " + std::to_string(h) + " widths " +
                           shape_string(queries[h].shape()) + " vs " +
                           shape_string(keys[h].shape()));
    }
    out.push_back(scale(matmul_nt(queries[h], keys[h]), factor));
  }
  return out;
}

Tensor stack_heads(std::span<const Tensor> heads) {
  if (heads.empty()) return Tensor::zeros({0, 0, 0});
  const auto rows = heads[0].rows(), cols = heads[0].cols();
  std::vector<double> values;
  values.reserve(heads.size() * rows * cols);
  for (const auto& h : heads) {
    if (h.rows() != rows || h.cols() != cols) throw DimensionError("stack_heads: ragged heads");
    values.insert(values.end(), h.data().begin(), h.data().end());
  }
  return Tensor({heads.size(), rows, cols}, std::move(values));
}

Tensor init_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = normal(rng);
  return parameter(Tensor(std::move(shape), std::move(values)));
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    Tensor out = add_bias(matmul(row, weight), bias);
    return reshape(out, {weight.cols()});
  }
  return add_bias(matmul(x, weight), bias);
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Encoder::Encoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.hidden_dim);
  const auto f = static_cast<std::size_t>(config_.ffn_dim);
  token_table_ = init_normal({static_cast<std::size_t>(config_.vocab_size), d}, kInitStd, rng);
  position_table_ =
      init_normal({static_cast<std::size_t>(config_.position_table_size()), d}, kInitStd, rng);
  if (config_.use_segments) segment_table_ = init_normal({2, d}, kInitStd, rng);
  for (int l = 0; l < config_.num_layers; ++l) {
    LayerParams p;
    p.wq = init_normal({d, d}, kInitStd, rng);
    p.bq = parameter(Tensor::zeros({d}));
    p.wk = init_normal({d, d}, kInitStd, rng);
    p.bk = parameter(Tensor::zeros({d}));
    p.wv = init_normal({d, d}, kInitStd, rng);
    p.bv = parameter(Tensor::zeros({d}));
    p.ln1_gain = parameter(Tensor::full({d}, 1.0));
    p.ln1_bias = parameter(Tensor::zeros({d}));
    p.w1 = init_normal({d, f}, kInitStd, rng);
    p.b1 = parameter(Tensor::zeros({f}));
    p.w2 = init_normal({f, d}, kInitStd, rng);
    p.b2 = parameter(Tensor::zeros({d}));
    p.ln2_gain = parameter(Tensor::full({d}, 1.0));
    p.ln2_bias = parameter(Tensor::zeros({d}));
    layers_.push_back(std::move(p));
  }
}

Tensor Encoder::embed(std::span<const int> tokens, int segment, int position_offset) const {
  std::vector<int> segments(tokens.size(), segment);
  return embed(tokens, segments, position_offset);
}

Tensor Encoder::embed(std::span<const int> tokens, std::span<const int> segments,
                      int position_offset) const {
  const auto p = tokens.size();
  if (position_offset < 0 ||
      static_cast<std::size_t>(position_offset) + p >
          static_cast<std::size_t>(config_.position_table_size())) {
    throw DataError("embed: positions " + std::to_string(position_offset) + ".." +
                    std::to_string(position_offset + static_cast<int>(p)) +
                    " overflow the position table of " +
                    std::to_string(config_.position_table_size()));
  }
  if (p == 0) return Tensor::zeros({0, static_cast<std::size_t>(config_.hidden_dim)});
  for (int id : tokens) {
    if (id < 0 || id >= config_.vocab_size) {
      throw DataError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(config_.vocab_size));
    }
  }
  std::vector<int> positions(p);
  for (std::size_t i = 0; i < p; ++i) positions[i] = position_offset + static_cast<int>(i);
  Tensor out = add(gather_rows(token_table_, tokens), gather_rows(position_table_, positions));
  if (config_.use_segments) {
    if (segments.size() != p) {
      throw DimensionError("embed: " + std::to_string(segments.size()) + " segment ids for " +
                           std::to_string(p) + " tokens");
    }
    for (int s : segments) {
      if (s != 0 && s != 1) throw DataError("embed: segment id must be 0 or 1");
    }
    out = add(out, gather_rows(segment_table_, segments));
  }
  return out;
}

std::pair<Tensor, LayerActivations> Encoder::layer(std::size_t index, const Tensor& input,
                                                   std::size_t valid_len) const {
  const auto& w = layers_.at(index);
  const std::size_t p = input.rows();
  if (valid_len == 0 || valid_len > p) {
    throw ContractError("encoder_layer: " + std::to_string(valid_len) + " valid positions of " +
                        std::to_string(p));
  }
  const auto heads = static_cast<std::size_t>(config_.num_heads);
  const auto dh = static_cast<std::size_t>(config_.head_dim());

  Tensor q = affine(input, w.wq, w.bq);
  Tensor k = affine(input, w.wk, w.bk);
  Tensor v = affine(input, w.wv, w.bv);
  Tensor mask = key_mask(p, p, valid_len);

  LayerActivations acts;
  std::vector<Tensor> contexts;
  for (std::size_t h = 0; h < heads; ++h) {
    acts.queries.push_back(slice_cols(q, h * dh, dh));
    acts.keys.push_back(slice_cols(k, h * dh, dh));
  }
  acts.scores = attention_scores(acts.queries, acts.keys, config_.score_scale());
  for (std::size_t h = 0; h < heads; ++h) {
    acts.maps.push_back(softmax_rows(acts.scores[h], mask));
    contexts.push_back(matmul(acts.maps[h], slice_cols(v, h * dh, dh)));
  }
  Tensor attended = heads == 1 ? contexts[0] : concat_last_dim(contexts);
  Tensor mid = layer_norm(add(attended, input), w.ln1_gain, w.ln1_bias);

  Tensor hidden = affine(mid, w.w1, w.b1);
  hidden = config_.activation == Activation::Gelu ? gelu(hidden) : relu(hidden);
  Tensor ffn = affine(hidden, w.w2, w.b2);
  Tensor out = layer_norm(add(ffn, mid), w.ln2_gain, w.ln2_bias);
  acts.hidden = out;
  return {out, std::move(acts)};
}

EncodeResult Encoder::encode(std::span<const int> tokens, std::span<const int> segments,
                             int position_offset, std::size_t valid_len, bool capture) const {
  EncodeResult result;
  Tensor h = embed(tokens, segments, position_offset);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto [next, acts] = layer(l, h, valid_len);
    h = next;
    if (capture) result.layers.push_back(std::move(acts));
  }
  result.hidden = h;
  return result;
}

void Encoder::append_parameters(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + "token_embedding", token_table_});
  out.push_back({prefix + "position_embedding", position_table_});
  if (config_.use_segments) out.push_back({prefix + "segment_embedding", segment_table_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& p = layers_[l];
    const std::string base = prefix + "layer" + std::to_string(l) + ".";
    out.push_back({base + "attn.wq", p.wq});
    out.push_back({base + "attn.bq", p.bq});
    out.push_back({base + "attn.wk", p.wk});
    out.push_back({base + "attn.bk", p.bk});
    out.push_back({base + "attn.wv", p.wv});
    out.push_back({base + "attn.bv", p.bv});
    out.push_back({base + "ln1.gain", p.ln1_gain});
    out.push_back({base + "ln1.bias", p.ln1_bias});
    out.push_back({base + "ffn.w1", p.w1});
    out.push_back({base + "ffn.b1", p.b1});
    out.push_back({base + "ffn.w2", p.w2});
    out.push_back({base + "ffn.b2", p.b2});
    out.push_back({base + "ln2.gain", p.ln2_gain});
    out.push_back({base + "ln2.bias", p.ln2_bias});
  }
}

}  // namespace virt
