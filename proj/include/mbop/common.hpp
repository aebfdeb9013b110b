// Copyright 2026 The MBOP Authors
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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mbop {

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

enum class ErrorCode {
  kInvalidArgument,
  kIntegrationFailure,
  kSchemaVersion,
  kTruncatedFile,
  kDimensionMismatch,
  kIo,
  kDivergence,
  kHeadOutOfRange,
  kNonFiniteInput,
  kAllRolloutsInvalid,
  kTopologyMismatch,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIntegrationFailure: return "integration_failure";
    case ErrorCode::kSchemaVersion: return "schema_version";
    case ErrorCode::kTruncatedFile: return "truncated_file";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kHeadOutOfRange: return "head_out_of_range";
    case ErrorCode::kNonFiniteInput: return "non_finite_input";
    case ErrorCode::kAllRolloutsInvalid: return "all_rollouts_invalid";
    case ErrorCode::kTopologyMismatch: return "topology_mismatch";
  }
  return "unknown";
}

// Every failure in the library is reported through this type; `code()`
// distinguishes the cases callers are expected to handle.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline void Require(bool condition, const std::string& message,
                    ErrorCode code = ErrorCode::kInvalidArgument) {
  if (!condition) throw Error(code, message);
}

// splitmix64 finalizer; used to derive independent stream seeds from tuples.
inline std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Rest>
std::uint64_t DeriveSeed(std::uint64_t base, Rest... rest) {
  std::uint64_t h = MixSeed(base);
  ((h = MixSeed(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

using Rng = std::mt19937_64;

template <typename Derived>
bool AllFinite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace mbop
