/*
 * Copyright 2026 The dynland Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace dynland {

/// Base class for all library errors. `exit_code()` maps onto the CLI contract.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int code = 1) : std::runtime_error(what), code_(code) {}
  int exit_code() const noexcept { return code_; }

 private:
  int code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, 1) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what, 1) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 2) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what, 3) {}
};

}  // namespace dynland
