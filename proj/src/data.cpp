#include "virt/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "virt/error.hpp"

namespace virt {

namespace {

constexpr std::uint64_t kBijectionSeed = 0x5EED0B1EC7ULL;

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

void check_options(const GeneratorOptions& o) {
  if (o.min_len < 1 || o.max_len_x < o.min_len || o.max_len_y < o.min_len) {
    throw ConfigError("generator lengths: need 1 <= min_len <= max lengths");
  }
}

// k distinct ids drawn uniformly from pool, in random order.
std::vector<int> sample_distinct(std::vector<int> pool, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

}  // namespace

std::vector<int> keymatch_bijection(int vocab_size) {
  if (vocab_size < 8 || vocab_size % 2 != 0) {
    throw ConfigError("key-match needs an even vocab_size >= 8, got " + std::to_string(vocab_size));
  }
  const int half = (vocab_size - kFirstContentId) / 2;
  std::vector<int> upper(static_cast<std::size_t>(half));
  std::iota(upper.begin(), upper.end(), kFirstContentId + half);
  std::mt19937_64 rng(kBijectionSeed ^ static_cast<std::uint64_t>(vocab_size));
  std::shuffle(upper.begin(), upper.end(), rng);
  return upper;
}

std::vector<Example> gen_keymatch(std::size_t n_examples, int vocab_size, std::uint64_t seed,
                                  const GeneratorOptions& options) {
  check_options(options);
  const auto sigma = keymatch_bijection(vocab_size);
  const int half = static_cast<int>(sigma.size());
  if (options.max_len_y >= half) throw ConfigError("key-match: max_len_y must be < vocab half");
  std::vector<int> upper(static_cast<std::size_t>(half));
  std::iota(upper.begin(), upper.end(), kFirstContentId + half);

  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  out.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) {
    Example ex;
    ex.label = static_cast<int>(i % 2);
    const int m = uniform_int(rng, options.min_len, options.max_len_x);
    const int n = uniform_int(rng, options.min_len, options.max_len_y);
    const int key_index = uniform_int(rng, 0, half - 1);
    const int key = kFirstContentId + key_index;
    const int partner = sigma[static_cast<std::size_t>(key_index)];

    ex.x.resize(static_cast<std::size_t>(m));
    for (auto& t : ex.x) t = kFirstContentId + half + uniform_int(rng, 0, half - 1);
    ex.x[static_cast<std::size_t>(uniform_int(rng, 0, m - 1))] = key;

    std::vector<int> pool;
    for (int t : upper)
      if (t != partner) pool.push_back(t);
    if (ex.label == 1) {
      ex.y = sample_distinct(pool, static_cast<std::size_t>(n - 1), rng);
      ex.y.insert(ex.y.begin() + uniform_int(rng, 0, n - 1), partner);
    } else {
      ex.y = sample_distinct(pool, static_cast<std::size_t>(n), rng);
    }
    out.push_back(std::move(ex));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<Example> gen_overlap(std::size_t n_examples, int vocab_size, std::uint64_t seed,
                                 const GeneratorOptions& options) {
  check_options(options);
  if (vocab_size < 8) throw ConfigError("overlap needs vocab_size >= 8");
  const int content = vocab_size - kFirstContentId;
  const int max_x = std::min(options.max_len_x, content - 1);
  if (max_x < options.min_len) throw ConfigError("overlap: vocabulary too small for min_len");

  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  out.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) {
    Example ex;
    ex.label = static_cast<int>(i % 2);
    const int m = uniform_int(rng, options.min_len, max_x);
    const int n = uniform_int(rng, 1, std::min(m, options.max_len_y));
    ex.x.resize(static_cast<std::size_t>(m));
    for (auto& t : ex.x) t = kFirstContentId + uniform_int(rng, 0, content - 1);

    std::vector<std::size_t> positions(static_cast<std::size_t>(m));
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    for (int j = 0; j < n; ++j) ex.y.push_back(ex.x[positions[static_cast<std::size_t>(j)]]);

    if (ex.label == 0) {
      std::vector<int> absent;
      for (int t = kFirstContentId; t < vocab_size; ++t)
        if (std::find(ex.x.begin(), ex.x.end(), t) == ex.x.end()) absent.push_back(t);
      const auto slot = static_cast<std::size_t>(uniform_int(rng, 0, n - 1));
      ex.y[slot] = absent[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(absent.size()) - 1))];
    }
    out.push_back(std::move(ex));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Vocabulary Vocabulary::numeric(int vocab_size) {
  Vocabulary v;
  v.size_ = vocab_size;
  v.numeric_ = true;
  return v;
}

Vocabulary Vocabulary::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  Vocabulary v;
  v.numeric_ = false;
  for (std::string line; std::getline(in, line);) {
    auto words = split_ws(line);
    if (words.empty()) continue;
    if (!v.ids_.contains(words[0])) {
      v.ids_.emplace(words[0], kFirstContentId + static_cast<int>(v.words_.size()));
      v.words_.push_back(words[0]);
    }
  }
  v.size_ = kFirstContentId + static_cast<int>(v.words_.size());
  return v;
}

int Vocabulary::lookup(const std::string& token) const {
  if (!numeric_) {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
  }
  if (token.empty() || token.size() > 9 ||
      !std::all_of(token.begin(), token.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return kUnkId;
  }
  const int id = std::stoi(token);
  return id >= kFirstContentId && id < size_ ? id : kUnkId;
}

std::string Vocabulary::token(int id) const {
  if (id == kPadId) return "<pad>";
  if (id == kUnkId) return "<unk>";
  if (numeric_) return std::to_string(id);
  return words_.at(static_cast<std::size_t>(id - kFirstContentId));
}

std::vector<Example> parse_tsv(const std::string& text, const Vocabulary& vocab) {
  std::vector<Example> out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (auto tab = line.find('\t'); tab != std::string::npos; tab = line.find('\t', start)) {
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    fields.push_back(line.substr(start));
    if (fields.size() != 3) {
      throw ParseError("expected 3 tab-separated fields, found " + std::to_string(fields.size()),
                       line_no);
    }
    Example ex;
    try {
      std::size_t used = 0;
      ex.label = std::stoi(fields[0], &used);
      if (used != fields[0].size() || ex.label < 0) throw std::invalid_argument("label");
    } catch (const std::exception&) {
      throw ParseError("bad label '" + fields[0] + "'", line_no);
    }
    for (const auto& t : split_ws(fields[1])) ex.x.push_back(vocab.lookup(t));
    for (const auto& t : split_ws(fields[2])) ex.y.push_back(vocab.lookup(t));
    if (ex.x.empty() || ex.y.empty()) throw ParseError("empty text field", line_no);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_tsv(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_tsv(buffer.str(), vocab);
}

std::string format_tsv(std::span<const Example> examples, const Vocabulary& vocab) {
  std::ostringstream out;
  auto join = [&](const std::vector<int>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << vocab.token(ids[i]);
  };
  for (const auto& ex : examples) {
    out << ex.label << '\t';
    join(ex.x);
    out << '\t';
    join(ex.y);
    out << '\n';
  }
  return out.str();
}

void save_tsv(const std::filesystem::path& path, std::span<const Example> examples,
              const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_tsv(examples, vocab);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Batch> make_batches(std::span<const Example> examples, std::size_t batch_size,
                                std::uint64_t seed, std::size_t max_x, std::size_t max_y) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    Batch b;
    b.max_x = max_x;
    b.max_y = max_y;
    b.x_ids.assign(count * max_x, kPadId);
    b.y_ids.assign(count * max_y, kPadId);
    for (std::size_t i = 0; i < count; ++i) {
      const Example& ex = examples[order[start + i]];
      if (ex.x.empty() || ex.y.empty() || ex.x.size() > max_x || ex.y.size() > max_y) {
        throw DataError("example lengths " + std::to_string(ex.x.size()) + "/" +
                        std::to_string(ex.y.size()) + " do not fit batch widths " +
                        std::to_string(max_x) + "/" + std::to_string(max_y));
      }
      std::copy(ex.x.begin(), ex.x.end(), b.x_ids.begin() + static_cast<long>(i * max_x));
      std::copy(ex.y.begin(), ex.y.end(), b.y_ids.begin() + static_cast<long>(i * max_y));
      b.x_len.push_back(static_cast<int>(ex.x.size()));
      b.y_len.push_back(static_cast<int>(ex.y.size()));
      b.labels.push_back(ex.label);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace virt
