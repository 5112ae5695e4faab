#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "virt/error.hpp"
#include "virt/ops.hpp"
#include "virt/transformer.hpp"

using namespace virt;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.num_layers = 2;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 12;
  c.vocab_size = 16;
  c.max_len_x = 4;
  c.max_len_y = 4;
  return c;
}

// Gives the freshly initialized LN and bias parameters non-trivial values.
void perturb(const ParameterList& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v += u(rng);
  }
}

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Matrix affine_ref(const Matrix& x, const Tensor& w, const Tensor& b) {
  Matrix out(x.size(), std::vector<double>(w.cols()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < w.rows(); ++k) s += x[i][k] * w(k, j);
      out[i][j] = s + b(j);
    }
  return out;
}

Matrix layer_norm_ref(const Matrix& x, const Tensor& g, const Tensor& b) {
  Matrix out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i].size());
    double mean = 0.0, var = 0.0;
    for (double v : x[i]) mean += v;
    mean /= d;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= d;
    for (std::size_t j = 0; j < x[i].size(); ++j)
      out[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-6) * g(j) + b(j);
  }
  return out;
}

// Straight-line post-LN layer: H' = LN(M·V + H), out = LN(FFN(H') + H').
Matrix layer_ref(const Matrix& h, const std::map<std::string, Tensor>& p, const std::string& base,
                 int heads) {
  auto at = [&](const std::string& k) { return p.at(base + k); };
  Matrix q = affine_ref(h, at("attn.wq"), at("attn.bq"));
  Matrix k = affine_ref(h, at("attn.wk"), at("attn.bk"));
  Matrix v = affine_ref(h, at("attn.wv"), at("attn.bv"));
  const std::size_t n = h.size(), d = h[0].size(), dh = d / heads;
  Matrix attended(n, std::vector<double>(d, 0.0));
  for (int head = 0; head < heads; ++head) {
    const std::size_t off = head * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][off + c] * k[j][off + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dh; ++c) attended[i][off + c] += s[j] / z * v[j][off + c];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) attended[i][j] += h[i][j];
  Matrix mid = layer_norm_ref(attended, at("ln1.gain"), at("ln1.bias"));
  Matrix hidden = affine_ref(mid, at("ffn.w1"), at("ffn.b1"));
  for (auto& row : hidden)
    for (auto& x : row)
      x = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
  Matrix ffn = affine_ref(hidden, at("ffn.w2"), at("ffn.b2"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) ffn[i][j] += mid[i][j];
  return layer_norm_ref(ffn, at("ln2.gain"), at("ln2.bias"));
}

}  // namespace

TEST(Config, RejectsInvalidShapes) {
  EncoderConfig c = tiny_config();
  c.num_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(tiny_config().validate());
}

TEST(AttentionScores, HandArithmeticAndZeros) {
  std::vector<Tensor> q{Tensor::matrix({{1, 1, 1, 1}})};
  std::vector<Tensor> k{Tensor::matrix({{2, 2, 2, 2}})};
  EXPECT_DOUBLE_EQ(attention_scores(q, k, 1.0 / std::sqrt(4.0))[0](0), 4.0);
  std::vector<Tensor> zero{Tensor::zeros({2, 4})};
  auto scores = attention_scores(zero, k, 0.5);
  for (double s : scores[0].data()) EXPECT_EQ(s, 0.0);
}

TEST(AttentionScores, TransposeSymmetry) {
  std::mt19937_64 rng(4);
  std::vector<Tensor> q{init_normal({3, 4}, 1.0, rng), init_normal({3, 4}, 1.0, rng)};
  std::vector<Tensor> k{init_normal({2, 4}, 1.0, rng), init_normal({2, 4}, 1.0, rng)};
  auto ab = attention_scores(q, k, 0.5);
  auto ba = attention_scores(k, q, 0.5);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(ab[h](i, j), ba[h](j, i), 1e-15);
}

TEST(AttentionScores, MismatchThrows) {
  std::vector<Tensor> q{Tensor::zeros({2, 4})};
  std::vector<Tensor> k{Tensor::zeros({2, 3})};
  EXPECT_THROW(attention_scores(q, k, 1.0), DimensionError);
  std::vector<Tensor> two{Tensor::zeros({2, 4}), Tensor::zeros({2, 4})};
  EXPECT_THROW(attention_scores(q, two, 1.0), DimensionError);
}

TEST(Embed, EmptyOffsetsAndErrors) {
  std::mt19937_64 rng(1);
  Encoder enc(tiny_config(), rng);
  std::vector<int> none;
  EXPECT_EQ(enc.embed(none, 0, 0).shape(), (Shape{0, 8}));

  std::vector<int> tokens{3, 7};
  Tensor a = enc.embed(tokens, 0, 0);
  Tensor b = enc.embed(tokens, 0, 4);
  ParameterList params;
  enc.append_parameters(params, "");
  const Tensor& pos = params[1].tensor;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_NEAR(b(i, j) - a(i, j), pos(i + 4, j) - pos(i, j), 1e-15);

  std::vector<int> bad{16};
  EXPECT_THROW(enc.embed(bad, 0, 0), DataError);
  EXPECT_THROW(enc.embed(tokens, 0, 7), DataError);
}

TEST(Embed, ZeroTablesGiveZeroOutput) {
  std::mt19937_64 rng(1);
  Encoder enc(tiny_config(), rng);
  ParameterList params;
  enc.append_parameters(params, "");
  for (auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  std::vector<int> tokens{2, 3, 4};
  Tensor out = enc.embed(tokens, 1, 0);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncoderLayer, MatchesStraightLineOracle) {
  EncoderConfig c = tiny_config();
  c.use_segments = false;
  std::mt19937_64 rng(11);
  Encoder enc(c, rng);
  ParameterList params;
  enc.append_parameters(params, "");
  perturb(params, 5);
  std::map<std::string, Tensor> by_name;
  for (const auto& p : params) by_name[p.name] = p.tensor;

  std::vector<int> tokens{5, 9};
  Tensor input = enc.embed(tokens, 0, 0);
  auto [out, acts] = enc.layer(0, input, 2);
  Matrix expected = layer_ref(to_matrix(input), by_name, "layer0.", c.num_heads);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out(i, j), expected[i][j], 1e-12);
}

TEST(EncoderLayer, MaskingSingletonAndStochasticity) {
  std::mt19937_64 rng(2);
  Encoder enc(tiny_config(), rng);
  std::vector<int> tokens{2, 3, 4, 5};
  Tensor input = enc.embed(tokens, 0, 0);
  auto [out, acts] = enc.layer(0, input, 3);
  for (const auto& map : acts.maps) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(map(i, 3), 0.0);
      EXPECT_NEAR(map(i, 0) + map(i, 1) + map(i, 2), 1.0, 1e-9);
    }
  }
  std::vector<int> one{6};
  auto [o1, a1] = enc.layer(1, enc.embed(one, 0, 0), 1);
  for (const auto& map : a1.maps) EXPECT_EQ(map(0, 0), 1.0);
  EXPECT_THROW(enc.layer(0, input, 0), ContractError);
}

TEST(Encode, CaptureControlsActivations) {
  std::mt19937_64 rng(3);
  Encoder enc(tiny_config(), rng);
  std::vector<int> tokens{2, 3, 4};
  std::vector<int> segs{0, 0, 1};
  auto off = enc.encode(tokens, segs, 0, 3, false);
  auto on = enc.encode(tokens, segs, 0, 3, true);
  EXPECT_TRUE(off.layers.empty());
  ASSERT_EQ(on.layers.size(), 2u);
  for (const auto& layer : on.layers) {
    EXPECT_EQ(layer.hidden.shape(), (Shape{3, 8}));
    EXPECT_EQ(layer.scores.size(), 2u);
    EXPECT_EQ(layer.queries[0].shape(), (Shape{3, 4}));
  }
  for (std::size_t i = 0; i < off.hidden.numel(); ++i) EXPECT_EQ(off.hidden(i), on.hidden(i));
}

TEST(Encode, SeedsReplayBitIdentically) {
  std::mt19937_64 r1(21), r2(21);
  Encoder e1(tiny_config(), r1), e2(tiny_config(), r2);
  std::vector<int> tokens{2, 9, 4, 11};
  std::vector<int> segs{0, 0, 1, 1};
  auto a = e1.encode(tokens, segs, 0, 4, false);
  auto b = e2.encode(tokens, segs, 0, 4, false);
  for (std::size_t i = 0; i < a.hidden.numel(); ++i) EXPECT_EQ(a.hidden(i), b.hidden(i));
}

TEST(Encode, PaddingContentDoesNotLeakIntoValidRows) {
  std::mt19937_64 rng(8);
  Encoder enc(tiny_config(), rng);
  std::vector<int> a{3, 4, 5, 6, 7, 8};
  std::vector<int> b{3, 4, 5, 8, 6, 7};
  std::vector<int> segs(6, 0);
  auto ha = enc.encode(a, segs, 0, 3, true).hidden;
  auto hb = enc.encode(b, segs, 0, 3, true).hidden;
  std::vector<int> unpadded{3, 4, 5};
  std::vector<int> seg3(3, 0);
  auto hc = enc.encode(unpadded, seg3, 0, 3, false).hidden;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_NEAR(ha(i, j), hb(i, j), 1e-9);
      EXPECT_NEAR(ha(i, j), hc(i, j), 1e-9);
    }
}

TEST(Encode, GradientMatchesFiniteDifferences) {
  EncoderConfig c = tiny_config();
  std::mt19937_64 rng(13);
  Encoder enc(c, rng);
  ParameterList params;
  enc.append_parameters(params, "");
  perturb(params, 17);
  std::vector<int> tokens{2, 5, 7};
  std::vector<int> segs{0, 1, 1};
  auto f = [&] {
    auto out = enc.encode(tokens, segs, 0, 3, false);
    return cross_entropy(mean_rows(out.hidden, 3), 1);
  };
  auto report = grad_check(f, params);
  EXPECT_LT(report.max_rel_error, 1e-5) << report.worst_parameter;
}
