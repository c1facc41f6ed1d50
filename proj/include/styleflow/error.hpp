// Copyright 2026 The styleflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace styleflow {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes or dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value became NaN/Inf, or an operation left its mathematical domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Serialized data is malformed, corrupted or of an unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File system or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// A precondition on an argument was violated (bad degree, empty batch, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

}  // namespace styleflow
