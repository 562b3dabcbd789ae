#include "capstext/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "capstext/errors.hpp"

namespace capstext {

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw FormatError(std::string("checkpoint: ") + what + " too large");
  return static_cast<std::uint32_t>(v);
}

void need(bool ok, const std::string& what) {
  if (!ok) throw FormatError("checkpoint truncated while reading " + what);
}

}  // namespace

void write_records(std::ostream& out, const std::vector<TensorRecord>& records) {
  out.write(kCheckpointMagic, kMagicLen);
  for (const auto& r : records) {
    put_u32(out, checked_u32(r.name.size(), "name"));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(out, checked_u32(r.value.rank(), "rank"));
    for (std::size_t d : r.value.shape()) put_u32(out, checked_u32(d, "dimension"));
    for (float f : r.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) throw FormatError("checkpoint: write failed");
}

std::vector<TensorRecord> read_records(std::istream& in) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen)) throw FormatError("checkpoint: missing header");
  if (std::memcmp(magic, kCheckpointMagic, kMagicLen) != 0) {
    if (std::memcmp(magic, kCheckpointMagic, kMagicLen - 1) == 0) {
      throw FormatError("checkpoint: unsupported version '" + std::string(1, magic[kMagicLen - 1]) +
                        "'");
    }
    throw FormatError("checkpoint: bad magic, not a capstext checkpoint");
  }
  std::vector<TensorRecord> records;
  std::uint32_t name_len = 0;
  while (get_u32(in, name_len)) {
    TensorRecord r;
    r.name.resize(name_len);
    need(static_cast<bool>(in.read(r.name.data(), name_len)), "record name");
    std::uint32_t rank = 0;
    need(get_u32(in, rank), r.name + " rank");
    if (rank == 0 || rank > kMaxRank) {
      throw FormatError("checkpoint: record '" + r.name + "' has rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      need(get_u32(in, v), r.name + " shape");
      if (v == 0) throw FormatError("checkpoint: record '" + r.name + "' has a zero dimension");
      d = v;
    }
    std::vector<float> data(shape_size(shape));
    for (auto& f : data) {
      std::uint32_t bits = 0;
      need(get_u32(in, bits), r.name + " data");
      f = std::bit_cast<float>(bits);
    }
    r.value = Tensor<float>(std::move(shape), std::move(data));
    records.push_back(std::move(r));
  }
  if (!in.eof()) throw FormatError("checkpoint: read failed");
  if (in.gcount() != 0) throw FormatError("checkpoint truncated while reading record header");
  return records;
}

TensorRecord text_record(std::string name, const std::string& text) {
  std::vector<float> bytes;
  bytes.reserve(text.size() + 1);
  for (unsigned char c : text) bytes.push_back(static_cast<float>(c));
  if (bytes.empty()) bytes.push_back(0.0f);
  const std::size_t n = bytes.size();
  return {std::move(name), Tensor<float>({n}, std::move(bytes))};
}

std::string record_text(const TensorRecord& record) {
  std::string s;
  for (float f : record.value.data()) {
    if (f == 0.0f) break;
    if (!(f >= 0.0f && f <= 255.0f) || f != static_cast<float>(static_cast<int>(f))) {
      throw FormatError("checkpoint: record '" + record.name + "' is not text");
    }
    s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  }
  return s;
}

template <typename T>
void save_checkpoint(std::ostream& out, const CapsNet<T>& model, const Vocabulary& vocab) {
  if (vocab.size() != model.config().vocab_size) {
    throw ShapeError("save_checkpoint: vocabulary of " + std::to_string(vocab.size()) +
                     " tokens for a model with " + std::to_string(model.config().vocab_size) +
                     " rows");
  }
  std::vector<TensorRecord> records;
  records.push_back(text_record("meta:config", to_text(model.config())));
  std::string tokens;
  for (const auto& t : vocab.tokens()) tokens += t + "\n";
  records.push_back(text_record("meta:vocab", tokens));
  for (const auto& p : model.parameters()) records.push_back({p.name, p.value.template cast<float>()});
  write_records(out, records);
}

template <typename T>
void save_checkpoint(const std::string& path, const CapsNet<T>& model, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  save_checkpoint(out, model, vocab);
}

Checkpoint load_checkpoint(std::istream& in) {
  auto records = read_records(in);
  if (records.size() < 2 || records[0].name != "meta:config" || records[1].name != "meta:vocab") {
    throw FormatError("checkpoint: missing meta:config / meta:vocab records");
  }
  Checkpoint c;
  c.config = parse_config(record_text(records[0]));
  std::vector<std::string> tokens;
  std::istringstream vs(record_text(records[1]));
  for (std::string line; std::getline(vs, line);) tokens.push_back(line);
  c.vocab = Vocabulary::from_tokens(std::move(tokens));
  const auto specs = parameter_specs(c.config);
  if (records.size() - 2 != specs.size()) {
    throw ShapeError("checkpoint: " + std::to_string(records.size() - 2) +
                     " tensors, configuration needs " + std::to_string(specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& r = records[i + 2];
    c.params.push_back({std::move(r.name), std::move(r.value), specs[i].group, specs[i].is_bias});
  }
  return c;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

template <typename T>
CapsNet<T> model_from_checkpoint(const Checkpoint& ckpt) {
  ParameterList<T> params;
  for (const auto& p : ckpt.params)
    params.push_back({p.name, p.value.template cast<T>(), p.group, p.is_bias});
  return CapsNet<T>(ckpt.config, std::move(params));
}

template void save_checkpoint(std::ostream&, const CapsNet<float>&, const Vocabulary&);
template void save_checkpoint(std::ostream&, const CapsNet<double>&, const Vocabulary&);
template void save_checkpoint(const std::string&, const CapsNet<float>&, const Vocabulary&);
template void save_checkpoint(const std::string&, const CapsNet<double>&, const Vocabulary&);
template CapsNet<float> model_from_checkpoint(const Checkpoint&);
template CapsNet<double> model_from_checkpoint(const Checkpoint&);

}  // namespace capstext
