#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "capstext/config.hpp"
#include "capstext/data.hpp"
#include "capstext/model.hpp"

namespace capstext {

inline constexpr char kCheckpointMagic[] = "CAPSTXT1";

/// Binary container of named float tensors:
///   magic "CAPSTXT1"
///   repeated { u32 name length, name bytes, u32 rank, u32 dims[rank], f32 data[] }
/// All integers and floats little-endian.
struct TensorRecord {
  std::string name;
  Tensor<float> value;
};

void write_records(std::ostream& out, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_records(std::istream& in);

/// Text stored as a rank-1 record with one byte value per element.
TensorRecord text_record(std::string name, const std::string& text);
std::string record_text(const TensorRecord& record);

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  ParameterList<float> params;
};

/// Records "meta:config" and "meta:vocab" first, then the parameters in model
/// order. 64-bit models are rounded to 32 bits.
template <typename T>
void save_checkpoint(std::ostream& out, const CapsNet<T>& model, const Vocabulary& vocab);
template <typename T>
void save_checkpoint(const std::string& path, const CapsNet<T>& model, const Vocabulary& vocab);

Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds a model from checkpoint tensors; ShapeError if they do not match
/// the stored configuration.
template <typename T>
CapsNet<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace capstext
