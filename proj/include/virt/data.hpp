#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace virt {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kFirstContentId = 2;

struct Example {
  std::vector<int> x;
  std::vector<int> y;
  int label = 0;

  bool operator==(const Example&) const = default;
};

/// Padded batch: row i of x_ids holds x_len[i] real ids followed by kPadId.
struct Batch {
  std::size_t max_x = 0;
  std::size_t max_y = 0;
  std::vector<int> x_ids;  // [size × max_x]
  std::vector<int> y_ids;  // [size × max_y]
  std::vector<int> x_len;
  std::vector<int> y_len;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const int> x(std::size_t i) const {
    return {x_ids.data() + i * max_x, static_cast<std::size_t>(x_len[i])};
  }
  std::span<const int> y(std::size_t i) const {
    return {y_ids.data() + i * max_y, static_cast<std::size_t>(y_len[i])};
  }
};

struct GeneratorOptions {
  int max_len_x = 12;
  int max_len_y = 12;
  int min_len = 2;
};

// The fixed pairing between the lower and upper halves of the content ids
// used by key-match. Index i maps lower id (2 + i) to the returned upper id.
std::vector<int> keymatch_bijection(int vocab_size);

// X holds exactly one lower-half "key" among upper-half distractors; the
// label is 1 iff Y contains the key's partner. Labels alternate before the
// final shuffle, so classes are balanced to within one example.
std::vector<Example> gen_keymatch(std::size_t n_examples, int vocab_size, std::uint64_t seed,
                                  const GeneratorOptions& options = {});

// Label 1 iff every token of Y occurs in X; negatives replace exactly one Y
// token with an id absent from X.
std::vector<Example> gen_overlap(std::size_t n_examples, int vocab_size, std::uint64_t seed,
                                 const GeneratorOptions& options = {});

/// Maps whitespace tokens to ids. The numeric vocabulary reads tokens as
/// decimal ids; a file vocabulary assigns id 2+i to line i. Anything unknown
/// becomes kUnkId.
class Vocabulary {
 public:
  static Vocabulary numeric(int vocab_size);
  static Vocabulary from_file(const std::filesystem::path& path);

  int lookup(const std::string& token) const;
  std::string token(int id) const;
  int size() const { return size_; }

 private:
  int size_ = 0;
  bool numeric_ = true;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Rows are `label<TAB>textA<TAB>textB`. Blank lines are skipped; any other
// malformed row raises ParseError carrying its 1-based line number.
std::vector<Example> parse_tsv(const std::string& text, const Vocabulary& vocab);
std::vector<Example> load_tsv(const std::filesystem::path& path, const Vocabulary& vocab);
std::string format_tsv(std::span<const Example> examples, const Vocabulary& vocab);
void save_tsv(const std::filesystem::path& path, std::span<const Example> examples,
              const Vocabulary& vocab);

// Seeded shuffle, then consecutive batches of `batch_size`; the last batch may
// be short. Sequences longer than the padding widths raise DataError.
std::vector<Batch> make_batches(std::span<const Example> examples, std::size_t batch_size,
                                std::uint64_t seed, std::size_t max_x, std::size_t max_y);

}  // namespace virt
