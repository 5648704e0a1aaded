/*
 * Copyright 2026 The srvae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SRVAE_ERROR_HPP_
#define SRVAE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace srvae {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kNotPositiveDefinite,
  kNonScalarRoot,
  kMalformedTree,
  kStructureMismatch,
  kInfiniteKL,
  kTooLarge,
  kNegativeCount,
  kZeroVariance,
  kIo,
  kConfig,
  kNumerical,  // non-finite objective or state
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace srvae

#endif  // SRVAE_ERROR_HPP_
