// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mile {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-range token id or element index.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or degenerate reductions.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API precondition (stale tape, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid model, plan, or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed user-provided data (records, token sequences, files).
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace mile
