// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace medos {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data (files, records) could not be read or is malformed.
class DataError : public Error {
 public:
  using Error::Error;
};

// A loss or parameter became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A remote endpoint could not be reached after retrying.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempts)"),
        attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

}  // namespace medos
