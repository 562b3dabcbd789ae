#include "capstext/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "capstext/errors.hpp"
#include "capstext/model.hpp"

namespace capstext {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return in;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char c : text) {
    if (is_space(c)) {
      flush();
    } else if (c == '\'') {
      flush();
      cur = "'";
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  add(std::string(kPad));
  add(std::string(kUnk));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPad || tokens[1] != kUnk) {
    throw FormatError("vocabulary must start with " + std::string(kPad) + " and " +
                      std::string(kUnk));
  }
  Vocabulary v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw FormatError("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

std::int32_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, static_cast<std::int32_t>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw LookupError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus) {
  Vocabulary v;
  for (const auto& doc : corpus)
    for (const auto& tok : doc) v.add(tok);
  return v;
}

// ---------------------------------------------------------------------------

EmbeddingMatrix random_embeddings(const Vocabulary& vocab, std::size_t dim, std::mt19937_64& rng) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingMatrix m;
  m.table = Tensor<float>({vocab.size(), dim});
  m.source.assign(vocab.size(), RowSource::kRandom);
  m.source[kPadId] = RowSource::kPad;
  std::uniform_real_distribution<float> unif(-0.25f, 0.25f);
  for (std::size_t i = dim; i < m.table.size(); ++i) m.table[i] = unif(rng);
  return m;
}

EmbeddingMatrix load_pretrained_vectors(std::istream& in, const Vocabulary& vocab,
                                        std::mt19937_64& rng, std::size_t expected_dim) {
  std::vector<std::pair<std::int32_t, std::vector<float>>> found;
  std::size_t width = expected_dim;
  std::string line;
  std::size_t lineno = 0;
  std::vector<bool> seen(vocab.size(), false);
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = strip_cr(line);
    if (sv.find_first_not_of(' ') == std::string_view::npos) continue;
    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (pos < sv.size()) {
      const std::size_t end = std::min(sv.find(' ', pos), sv.size());
      if (end > pos) fields.push_back(sv.substr(pos, end - pos));
      pos = end + 1;
    }
    const std::size_t values = fields.size() - 1;
    if (width == 0) width = values;
    if (values != width || values == 0) {
      throw FormatError("embedding file line " + std::to_string(lineno) + ": expected " +
                        std::to_string(width) + " values, got " + std::to_string(values));
    }
    const std::string token(fields[0]);
    if (!vocab.contains(token)) continue;
    const std::int32_t id = vocab.id(token);
    if (id == kPadId || seen[static_cast<std::size_t>(id)]) continue;
    std::vector<float> vec(width);
    for (std::size_t j = 0; j < width; ++j) {
      const std::string_view f = fields[j + 1];
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), vec[j]);
      if (ec != std::errc() || p != f.data() + f.size()) {
        throw FormatError("embedding file line " + std::to_string(lineno) + ": bad number '" +
                          std::string(f) + "'");
      }
    }
    seen[static_cast<std::size_t>(id)] = true;
    found.emplace_back(id, std::move(vec));
  }
  if (width == 0) throw FormatError("embedding file is empty and no dimension was given");
  EmbeddingMatrix m = random_embeddings(vocab, width, rng);
  for (auto& [id, vec] : found) {
    std::copy(vec.begin(), vec.end(), m.table.ptr() + static_cast<std::size_t>(id) * width);
    m.source[static_cast<std::size_t>(id)] = RowSource::kPretrained;
  }
  m.coverage = found.size();
  return m;
}

EmbeddingMatrix load_pretrained_vectors(const std::string& path, const Vocabulary& vocab,
                                        std::mt19937_64& rng, std::size_t expected_dim) {
  std::ifstream in = open_or_throw(path);
  return load_pretrained_vectors(in, vocab, rng, expected_dim);
}

// ---------------------------------------------------------------------------

std::vector<LabeledText> read_labeled_tsv(std::istream& in, const std::string& source) {
  std::vector<LabeledText> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = strip_cr(line);
    if (sv.empty()) continue;
    const auto tab = sv.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected label<TAB>text");
    }
    int label = -1;
    const std::string_view ls = sv.substr(0, tab);
    auto [p, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), label);
    if (ec != std::errc() || p != ls.data() + ls.size() || label < 0) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": bad label '" +
                        std::string(ls) + "'");
    }
    rows.push_back({label, std::string(sv.substr(tab + 1))});
  }
  return rows;
}

std::vector<LabeledText> read_labeled_tsv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  return read_labeled_tsv(in, path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected split = path");
    }
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    std::filesystem::path p = trim(line.substr(eq + 1));
    if (p.is_relative()) p = base / p;
    if (key == "train") m.train = p.string();
    else if (key == "val") m.val = p.string();
    else if (key == "test") m.test = p.string();
    else throw FormatError(path + ":" + std::to_string(lineno) + ": unknown split '" + key + "'");
  }
  if (m.train.empty() || m.val.empty() || m.test.empty()) {
    throw FormatError(path + ": manifest must list train, val and test");
  }
  return m;
}

Dataset encode_dataset(const std::vector<LabeledText>& rows, const Vocabulary& vocab,
                       std::string split) {
  Dataset d;
  d.split = std::move(split);
  d.examples.reserve(rows.size());
  for (const auto& r : rows) d.examples.push_back({r.label, vocab.encode(tokenize(r.text))});
  return d;
}

Corpus load_corpus(const std::string& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const auto train = read_labeled_tsv(m.train);
  const auto val = read_labeled_tsv(m.val);
  const auto test = read_labeled_tsv(m.test);
  if (train.empty()) throw FormatError(m.train + ": training split is empty");
  std::vector<std::vector<std::string>> texts;
  texts.reserve(train.size() + val.size());
  for (const auto& r : train) texts.push_back(tokenize(r.text));
  for (const auto& r : val) texts.push_back(tokenize(r.text));
  Corpus c;
  c.vocab = build_vocab(texts);
  c.train = encode_dataset(train, c.vocab, "train");
  c.val = encode_dataset(val, c.vocab, "val");
  c.test = encode_dataset(test, c.vocab, "test");
  int max_label = 0;
  for (const auto* rows : {&train, &val, &test})
    for (const auto& r : *rows) max_label = std::max(max_label, r.label);
  c.num_classes = static_cast<std::size_t>(max_label) + 1;
  return c;
}

std::size_t percentile_length(const Dataset& data, double q) {
  if (data.examples.empty()) throw ContractError("percentile_length: empty split");
  std::vector<std::size_t> lens;
  lens.reserve(data.examples.size());
  for (const auto& e : data.examples) lens.push_back(e.ids.size());
  std::sort(lens.begin(), lens.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lens.size())));
  return lens[std::clamp<std::size_t>(rank, 1, lens.size()) - 1];
}

std::vector<std::int32_t> pad_sequence(std::span<const std::int32_t> ids, std::size_t seq_len) {
  std::vector<std::int32_t> out(seq_len, kPadId);
  if (ids.size() >= seq_len) {
    std::copy(ids.end() - static_cast<std::ptrdiff_t>(seq_len), ids.end(), out.begin());
  } else {
    std::copy(ids.begin(), ids.end(), out.begin() + static_cast<std::ptrdiff_t>(seq_len - ids.size()));
  }
  return out;
}

Batch pad_batch(std::span<const Example> examples, std::size_t seq_len) {
  if (examples.empty()) throw ContractError("pad_batch: batch size must be at least 1");
  if (seq_len == 0) throw ContractError("pad_batch: sequence length must be positive");
  Batch b;
  b.size = examples.size();
  b.seq_len = seq_len;
  b.ids.reserve(b.size * seq_len);
  for (const auto& e : examples) {
    const auto row = pad_sequence(e.ids, seq_len);
    b.ids.insert(b.ids.end(), row.begin(), row.end());
    b.labels.push_back(e.label);
  }
  return b;
}

// ---------------------------------------------------------------------------

RewriteTable RewriteTable::parse(std::istream& in, const std::string& source) {
  RewriteTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = strip_cr(line);
    if (sv.empty()) continue;
    const auto tab = sv.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected original<TAB>variant");
    }
    t.add(sv.substr(0, tab), sv.substr(tab + 1));
  }
  return t;
}

RewriteTable RewriteTable::load(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  return parse(in, path);
}

void RewriteTable::add(std::string_view original, std::string_view variant) {
  map_[join_tokens(tokenize(original))] = tokenize(variant);
}

std::vector<std::string> RewriteTable::apply(std::span<const std::string> tokens) const {
  const std::string key = join_tokens(tokens);
  auto it = map_.find(key);
  if (it == map_.end()) throw LookupError("no rewrite for sentence '" + key + "'");
  return it->second;
}

std::vector<std::string> shuffle_word_order(std::span<const std::string> tokens, ShuffleMode mode,
                                            std::uint64_t seed, const RewriteTable* table) {
  if (tokens.empty()) throw ContractError("shuffle_word_order: empty sentence");
  if (mode == ShuffleMode::kPhraseRewriteFile) {
    if (!table) throw ContractError("shuffle_word_order: rewrite mode needs a table");
    return table->apply(tokens);
  }
  std::vector<std::string> out(tokens.begin(), tokens.end());
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<Neighbor> nearest_words(const Tensor<T>& embeddings, const Vocabulary& vocab,
                                    std::string_view query, std::size_t top_k) {
  if (top_k == 0) throw ContractError("nearest_words: top_k must be at least 1");
  if (!vocab.contains(query)) throw LookupError("'" + std::string(query) + "' is not in the vocabulary");
  if (embeddings.rank() != 2 || embeddings.dim(0) != vocab.size()) {
    throw ShapeError("nearest_words: embedding rows do not match the vocabulary");
  }
  const std::size_t e = embeddings.dim(1);
  auto row_norm = [&](std::size_t r) {
    double s = 0;
    for (std::size_t j = 0; j < e; ++j) s += static_cast<double>(embeddings(r, j)) * embeddings(r, j);
    return std::sqrt(s);
  };
  const auto q = static_cast<std::size_t>(vocab.id(query));
  const double qn = row_norm(q);
  if (qn == 0.0) throw NumericalError("nearest_words: query vector is zero, cosine undefined");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    if (r == q) continue;
    const double rn = row_norm(r);
    if (rn == 0.0) continue;
    double dot = 0;
    for (std::size_t j = 0; j < e; ++j) dot += static_cast<double>(embeddings(q, j)) * embeddings(r, j);
    scored.emplace_back(dot / (qn * rn), r);
  }
  const std::size_t k = std::min(top_k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back({vocab.token(static_cast<std::int32_t>(scored[i].second)), scored[i].first});
  return out;
}

template std::vector<Neighbor> nearest_words(const Tensor<float>&, const Vocabulary&,
                                             std::string_view, std::size_t);
template std::vector<Neighbor> nearest_words(const Tensor<double>&, const Vocabulary&,
                                             std::string_view, std::size_t);

}  // namespace capstext
