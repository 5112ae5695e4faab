#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "virt/data.hpp"
#include "virt/error.hpp"

using namespace virt;

namespace {

constexpr int kVocab = 64;

GeneratorOptions lengths(int max_len, int min_len = 1) {
  GeneratorOptions o;
  o.max_len_x = max_len;
  o.max_len_y = max_len;
  o.min_len = min_len;
  return o;
}

// Upper quantile of χ²(df) by the Wilson–Hilferty approximation.
double chi2_critical(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

// Pearson χ² of a 2×K contingency table of token counts split by label.
std::pair<double, double> label_independence(const std::vector<Example>& data, bool use_x) {
  std::map<int, std::array<double, 2>> counts;
  std::array<double, 2> totals{0, 0};
  for (const auto& ex : data) {
    for (int t : use_x ? ex.x : ex.y) {
      counts[t][static_cast<std::size_t>(ex.label)] += 1;
      totals[static_cast<std::size_t>(ex.label)] += 1;
    }
  }
  const double grand = totals[0] + totals[1];
  double stat = 0.0;
  for (const auto& [token, c] : counts) {
    const double row = c[0] + c[1];
    for (std::size_t k = 0; k < 2; ++k) {
      const double expected = row * totals[k] / grand;
      stat += (c[k] - expected) * (c[k] - expected) / expected;
    }
  }
  return {stat, static_cast<double>(counts.size() - 1)};
}

// Bag-of-tokens logistic regression on one side only, fitted by batch
// gradient descent; returns held-out accuracy.
double one_side_probe(const std::vector<Example>& train, const std::vector<Example>& test,
                      bool use_x) {
  auto features = [&](const Example& ex) {
    std::vector<double> f(kVocab, 0.0);
    for (int t : use_x ? ex.x : ex.y) f[static_cast<std::size_t>(t)] += 1.0;
    return f;
  };
  std::vector<double> w(kVocab, 0.0);
  double b = 0.0;
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::vector<double> gw(kVocab, 0.0);
    double gb = 0.0;
    for (const auto& ex : train) {
      auto f = features(ex);
      double z = b;
      for (int k = 0; k < kVocab; ++k) z += w[k] * f[k];
      const double err = 1.0 / (1.0 + std::exp(-z)) - ex.label;
      for (int k = 0; k < kVocab; ++k) gw[k] += err * f[k];
      gb += err;
    }
    for (int k = 0; k < kVocab; ++k) w[k] -= 0.5 * gw[k] / train.size();
    b -= 0.5 * gb / train.size();
  }
  std::size_t correct = 0;
  for (const auto& ex : test) {
    auto f = features(ex);
    double z = b;
    for (int k = 0; k < kVocab; ++k) z += w[k] * f[k];
    correct += static_cast<std::size_t>((z > 0) == (ex.label == 1));
  }
  return static_cast<double>(correct) / test.size();
}

bool contained(const Example& ex) {
  std::multiset<int> pool(ex.x.begin(), ex.x.end());
  for (int t : ex.y) {
    auto it = pool.find(t);
    if (it == pool.end()) return false;
    pool.erase(it);
  }
  return true;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("virt_test_" + name);
}

}  // namespace

TEST(KeyMatch, DeterministicAndBalanced) {
  auto a = gen_keymatch(1001, kVocab, 5, lengths(12, 2));
  auto b = gen_keymatch(1001, kVocab, 5, lengths(12, 2));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, gen_keymatch(1001, kVocab, 6, lengths(12, 2)));
  long positives = std::count_if(a.begin(), a.end(), [](const Example& e) { return e.label == 1; });
  EXPECT_LE(std::abs(2 * positives - 1001), 1);
}

TEST(KeyMatch, StructureAndBayesRule) {
  const auto sigma = keymatch_bijection(kVocab);
  const int half = static_cast<int>(sigma.size());
  auto data = gen_keymatch(5000, kVocab, 9, lengths(8));
  for (const auto& ex : data) {
    ASSERT_FALSE(ex.x.empty());
    ASSERT_FALSE(ex.y.empty());
    ASSERT_LE(ex.x.size(), 8u);
    ASSERT_LE(ex.y.size(), 8u);
    std::vector<int> keys;
    for (int t : ex.x)
      if (t < kFirstContentId + half) keys.push_back(t);
    ASSERT_EQ(keys.size(), 1u);
    const int partner = sigma[static_cast<std::size_t>(keys[0] - kFirstContentId)];
    const bool has = std::find(ex.y.begin(), ex.y.end(), partner) != ex.y.end();
    EXPECT_EQ(has, ex.label == 1);
    EXPECT_EQ(std::set<int>(ex.y.begin(), ex.y.end()).size(), ex.y.size());
  }
  EXPECT_THROW(gen_keymatch(10, 7, 1), ConfigError);
}

TEST(KeyMatch, TokenMarginalsIndependentOfLabel) {
  auto data = gen_keymatch(10000, kVocab, 11, lengths(12, 2));
  for (bool use_x : {true, false}) {
    auto [stat, df] = label_independence(data, use_x);
    EXPECT_LT(stat, chi2_critical(df, 3.09)) << (use_x ? "X" : "Y") << " df=" << df;
  }
}

TEST(KeyMatch, SingleSideProbesStayNearChance) {
  auto train = gen_keymatch(10000, kVocab, 21, lengths(12, 2));
  auto test = gen_keymatch(10000, kVocab, 22, lengths(12, 2));
  EXPECT_LE(one_side_probe(train, test, true), 0.55);
  EXPECT_LE(one_side_probe(train, test, false), 0.55);
}

TEST(Overlap, LabelsAgreeWithBruteForceChecker) {
  auto data = gen_overlap(5000, kVocab, 3, lengths(12, 2));
  long positives = 0;
  for (const auto& ex : data) {
    EXPECT_EQ(contained(ex), ex.label == 1);
    positives += ex.label;
  }
  EXPECT_LE(std::abs(2 * positives - 5000), 1);
  EXPECT_EQ(data, gen_overlap(5000, kVocab, 3, lengths(12, 2)));
}

TEST(Overlap, SingleTokenContainment) {
  Example ex{{4, 9, 7}, {9}, 1};
  EXPECT_TRUE(contained(ex));
  for (const auto& e : gen_overlap(2000, kVocab, 4, lengths(6)))
    if (e.y.size() == 1 && std::find(e.x.begin(), e.x.end(), e.y[0]) != e.x.end())
      EXPECT_EQ(e.label, 1);
}

TEST(Tsv, ParsesRowsWithFileVocabulary) {
  auto path = temp_path("vocab.txt");
  {
    std::ofstream out(path);
    out << "a\nb\nc\n";
  }
  Vocabulary vocab = Vocabulary::from_file(path);
  auto rows = parse_tsv("1\ta b\tc\n", vocab);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0], (Example{{2, 3}, {4}, 1}));
  EXPECT_EQ(parse_tsv("0\ta zzz\tc\n", vocab)[0].x, (std::vector<int>{2, kUnkId}));
  EXPECT_TRUE(parse_tsv("", vocab).empty());
  std::filesystem::remove(path);
}

TEST(Tsv, MalformedRowsReportLineNumbers) {
  Vocabulary vocab = Vocabulary::numeric(kVocab);
  auto line_of = [&](const std::string& text) -> std::size_t {
    try {
      parse_tsv(text, vocab);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("1\t2\t3\n0\t4 5\n"), 2u);
  EXPECT_EQ(line_of("\n1\t2\t3\nx\t4\t5\n"), 3u);
  EXPECT_EQ(line_of("1\t\t3\n"), 1u);
}

TEST(Tsv, RoundTripThroughFile) {
  Vocabulary vocab = Vocabulary::numeric(kVocab);
  auto data = gen_overlap(300, kVocab, 8, lengths(10));
  auto path = temp_path("roundtrip.tsv");
  save_tsv(path, data, vocab);
  EXPECT_EQ(load_tsv(path, vocab), data);
  std::filesystem::remove(path);
  EXPECT_THROW(load_tsv(temp_path("does_not_exist.tsv"), vocab), IoError);
}

TEST(Batches, PaddingShuffleAndShortTail) {
  auto data = gen_keymatch(10, kVocab, 2, lengths(5));
  auto batches = make_batches(data, 4, 7, 6, 6);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::multiset<std::vector<int>> seen;
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      ASSERT_GE(b.x_len[i], 1);
      for (std::size_t j = static_cast<std::size_t>(b.x_len[i]); j < b.max_x; ++j)
        EXPECT_EQ(b.x_ids[i * b.max_x + j], kPadId);
      for (std::size_t j = static_cast<std::size_t>(b.y_len[i]); j < b.max_y; ++j)
        EXPECT_EQ(b.y_ids[i * b.max_y + j], kPadId);
      seen.insert(std::vector<int>(b.x(i).begin(), b.x(i).end()));
    }
  }
  std::multiset<std::vector<int>> original;
  for (const auto& ex : data) original.insert(ex.x);
  EXPECT_EQ(seen, original);

  auto again = make_batches(data, 4, 7, 6, 6);
  EXPECT_EQ(again[0].x_ids, batches[0].x_ids);
  EXPECT_THROW(make_batches(data, 4, 7, 2, 6), DataError);
}
