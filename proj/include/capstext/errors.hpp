#pragma once

#include <stdexcept>
#include <string>

namespace capstext {

// Shapes of operands do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value, unknown variant, bad flag.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file content (TSV, embeddings, checkpoints).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing token, missing rewrite entry, index out of range.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Caller broke an API precondition (non-scalar loss, bad eps).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf showed up in values or gradients.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace capstext
