/*
 * Copyright 2026 The featnorm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEATNORM_ERROR_HPP
#define FEATNORM_ERROR_HPP

#include <stdexcept>
#include <string>

namespace featnorm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument or input value violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract (stale cache, wrong scheduling, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Finite-difference probing produced a non-finite loss.
class OracleError : public Error {
 public:
  OracleError(const std::string& what, std::size_t parameter_index)
      : Error(what), parameter_index_(parameter_index) {}

  std::size_t parameter_index() const noexcept { return parameter_index_; }

 private:
  std::size_t parameter_index_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace featnorm

#endif  // FEATNORM_ERROR_HPP
