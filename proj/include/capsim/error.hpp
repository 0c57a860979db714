// Copyright 2026 The capsim Authors
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

#ifndef CAPSIM_ERROR_HPP_
#define CAPSIM_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace capsim {

// Every way a simulated operation can refuse to proceed. Hardware-style
// faults (bounds, permissions, sealing) and model-level errors (allocator,
// linker, configuration) share one enumeration so that callers can report
// them uniformly.
enum class Error {
  kInvalidCapability,
  kSealedCapability,
  kBoundsEscalation,
  kPermissionEscalation,
  kMissingSealPermission,
  kMissingUnsealPermission,
  kAlreadySealed,
  kNotSealed,
  kOtypeMismatch,
  kNotExecutable,
  kOutOfBounds,
  kPermissionDenied,
  kUnmapped,
  kMisaligned,
  kOverlappingMapping,
  kOutOfMemory,
  kDoubleFree,
  kForeignChunk,
  kDuplicateObject,
  kObjectNotFound,
  kUnlinkedSymbol,
  kNotInvocable,
  kConfigInvalid,
};

constexpr std::string_view to_string(Error e) {
  switch (e) {
    case Error::kInvalidCapability: return "InvalidCapability";
    case Error::kSealedCapability: return "SealedCapability";
    case Error::kBoundsEscalation: return "BoundsEscalation";
    case Error::kPermissionEscalation: return "PermissionEscalation";
    case Error::kMissingSealPermission: return "MissingSealPermission";
    case Error::kMissingUnsealPermission: return "MissingUnsealPermission";
    case Error::kAlreadySealed: return "AlreadySealed";
    case Error::kNotSealed: return "NotSealed";
    case Error::kOtypeMismatch: return "OtypeMismatch";
    case Error::kNotExecutable: return "NotExecutable";
    case Error::kOutOfBounds: return "OutOfBounds";
    case Error::kPermissionDenied: return "PermissionDenied";
    case Error::kUnmapped: return "Unmapped";
    case Error::kMisaligned: return "Misaligned";
    case Error::kOverlappingMapping: return "OverlappingMapping";
    case Error::kOutOfMemory: return "OutOfMemory";
    case Error::kDoubleFree: return "DoubleFree";
    case Error::kForeignChunk: return "ForeignChunk";
    case Error::kDuplicateObject: return "DuplicateObject";
    case Error::kObjectNotFound: return "ObjectNotFound";
    case Error::kUnlinkedSymbol: return "UnlinkedSymbol";
    case Error::kNotInvocable: return "NotInvocable";
    case Error::kConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

// Thrown by any simulated operation that faults.
class Fault : public std::runtime_error {
 public:
  explicit Fault(Error code, std::string detail = {})
      : std::runtime_error(make_message(code, detail)), code_(code) {}

  Error code() const noexcept { return code_; }

 private:
  static std::string make_message(Error code, const std::string& detail) {
    std::string msg(to_string(code));
    if (!detail.empty()) {
      msg += ": ";
      msg += detail;
    }
    return msg;
  }

  Error code_;
};

}  // namespace capsim

#endif  // CAPSIM_ERROR_HPP_
