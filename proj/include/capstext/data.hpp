#pragma once

#include <cstdint>
#include <istream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "capstext/tensor.hpp"

namespace capstext {

/// Lowercases ASCII, splits on whitespace, and splits every punctuation mark
/// into its own token. An apostrophe starts a new token that keeps the
/// letters after it: "shakespeare's" -> "shakespeare", "'s".
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

/// Token <-> id map. Id 0 is the pad token, id 1 the unknown token.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kUnk = "<unk>";

  Vocabulary();
  /// Rebuilds from an id-ordered token list; must start with pad and unk.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::int32_t add(const std::string& token);
  /// Id of a token, or the unknown id.
  std::int32_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;

 private:
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::string> tokens_;
};

/// Indexes every distinct token in first-occurrence order.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus);

enum class RowSource : std::uint8_t { kPad, kPretrained, kRandom };

struct EmbeddingMatrix {
  Tensor<float> table;             // [|V| x e]
  std::vector<RowSource> source;   // per row
  std::size_t coverage = 0;        // rows filled from the vector file
};

/// Every non-pad row U(-0.25, 0.25), pad row zero.
EmbeddingMatrix random_embeddings(const Vocabulary& vocab, std::size_t dim, std::mt19937_64& rng);

/// Reads "token v1 ... ve" lines. Vocabulary tokens found get the file
/// vectors, the rest U(-0.25, 0.25). The width comes from the first line;
/// any other width is a FormatError naming the line. `expected_dim` of 0
/// accepts the file's width.
EmbeddingMatrix load_pretrained_vectors(std::istream& in, const Vocabulary& vocab,
                                        std::mt19937_64& rng, std::size_t expected_dim = 0);
EmbeddingMatrix load_pretrained_vectors(const std::string& path, const Vocabulary& vocab,
                                        std::mt19937_64& rng, std::size_t expected_dim = 0);

struct LabeledText {
  int label = 0;
  std::string text;
};

/// `label<TAB>text` lines with 0-based integer labels.
std::vector<LabeledText> read_labeled_tsv(std::istream& in, const std::string& source = "<stream>");
std::vector<LabeledText> read_labeled_tsv(const std::string& path);

/// `train = path`, `val = path`, `test = path`; relative paths resolve
/// against the manifest's directory.
struct Manifest {
  std::string train, val, test;
};
Manifest read_manifest(const std::string& path);

struct Example {
  int label = 0;
  std::vector<std::int32_t> ids;  // unpadded
};

struct Dataset {
  std::string split;
  std::vector<Example> examples;
};

struct Corpus {
  Vocabulary vocab;
  Dataset train, val, test;
  std::size_t num_classes = 0;
};

Dataset encode_dataset(const std::vector<LabeledText>& rows, const Vocabulary& vocab,
                       std::string split);

/// Loads the three splits, builds the vocabulary on train + val and encodes
/// every split with it.
Corpus load_corpus(const std::string& manifest_path);

/// Length at the q-quantile of the split (nearest rank).
std::size_t percentile_length(const Dataset& data, double q = 0.95);

struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> ids;  // size * seq_len, row-major
  std::vector<int> labels;
};

/// Left-pads with the pad id, or keeps the last `seq_len` tokens.
std::vector<std::int32_t> pad_sequence(std::span<const std::int32_t> ids, std::size_t seq_len);
Batch pad_batch(std::span<const Example> examples, std::size_t seq_len);

/// Human-edited sentence variants, `original<TAB>variant` per line. Keys are
/// matched on tokenized text.
class RewriteTable {
 public:
  static RewriteTable load(const std::string& path);
  static RewriteTable parse(std::istream& in, const std::string& source = "<stream>");

  void add(std::string_view original, std::string_view variant);
  std::vector<std::string> apply(std::span<const std::string> tokens) const;
  std::size_t size() const { return map_.size(); }

 private:
  std::unordered_map<std::string, std::vector<std::string>> map_;
};

enum class ShuffleMode { kFull, kPhraseRewriteFile };

/// kFull: seeded uniform permutation. kPhraseRewriteFile: table lookup
/// (LookupError if the sentence has no entry).
std::vector<std::string> shuffle_word_order(std::span<const std::string> tokens, ShuffleMode mode,
                                            std::uint64_t seed,
                                            const RewriteTable* table = nullptr);

struct Neighbor {
  std::string token;
  double similarity = 0;
};

/// top_k tokens by cosine similarity to `query`, excluding the query itself
/// and zero rows; ties go to the lower id.
template <typename T>
std::vector<Neighbor> nearest_words(const Tensor<T>& embeddings, const Vocabulary& vocab,
                                    std::string_view query, std::size_t top_k);

}  // namespace capstext
