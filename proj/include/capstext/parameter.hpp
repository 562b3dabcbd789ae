#pragma once

#include <string>
#include <vector>

#include "capstext/tensor.hpp"

namespace capstext {

/// Name, shape and regularization group of one trainable tensor.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::string group;  // "embedding", "gate" or "other"
  bool is_bias = false;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::string group;
  bool is_bias = false;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

template <typename T>
const Parameter<T>* find_parameter(const ParameterList<T>& params, const std::string& name) {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

}  // namespace capstext
