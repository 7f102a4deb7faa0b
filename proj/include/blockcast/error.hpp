// Copyright 2026 The Blockcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace blockcast {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class HorizonError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was invoked before the artifact it consumes exists.
class DependencyError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Score or curve that cannot be computed because a denominator is zero.
class UndefinedError : public Error {
 public:
  using Error::Error;
};

// File-format errors. Kept distinct so callers and tests can tell a bad header
// from a short payload.
class ParseError : public IoError {
 public:
  using IoError::IoError;
};

class HeaderError : public ParseError {
 public:
  using ParseError::ParseError;
};

class TruncationError : public ParseError {
 public:
  using ParseError::ParseError;
};

class DimensionError : public ParseError {
 public:
  using ParseError::ParseError;
};

class InvariantError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace blockcast
