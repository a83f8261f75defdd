// Copyright 2026 The Counselflow Authors.
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

#ifndef COUNSELFLOW_ERROR_HPP_
#define COUNSELFLOW_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace counselflow {

enum class ErrorCode {
  // dialogue-core
  kEmptyDialogue,
  kNotMerged,
  kParseError,
  kSchemaError,
  // llm-client
  kAuthError,
  kRateLimited,
  kMalformedResponse,
  kTimeout,
  kTransportError,
  kCacheIOError,
  kInvalidRequest,
  // prompts
  kEmptyHistory,
  kMissingPlaceholder,
  kUnknownPlaceholder,
  kTemplateLint,
  // pipeline
  kContractViolation,
  kStageFailure,
  // evaluation
  kTooFewResponses,
  kMissingBlock,
  kMissingDimension,
  kScoreOutOfRange,
  kNoCompleteCards,
  kInsufficientInstances,
  kMissingOutput,
  kUnknownItem,
  // chat-service
  kSessionNotFound,
  kBusy,
  // cli
  kConfigError,
  kIOError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyDialogue: return "EmptyDialogue";
    case ErrorCode::kNotMerged: return "NotMerged";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kAuthError: return "AuthError";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kCacheIOError: return "CacheIOError";
    case ErrorCode::kInvalidRequest: return "InvalidRequest";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kMissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::kUnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorCode::kTemplateLint: return "TemplateLint";
    case ErrorCode::kContractViolation: return "ContractViolation";
    case ErrorCode::kStageFailure: return "StageFailure";
    case ErrorCode::kTooFewResponses: return "TooFewResponses";
    case ErrorCode::kMissingBlock: return "MissingBlock";
    case ErrorCode::kMissingDimension: return "MissingDimension";
    case ErrorCode::kScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::kNoCompleteCards: return "NoCompleteCards";
    case ErrorCode::kInsufficientInstances: return "InsufficientInstances";
    case ErrorCode::kMissingOutput: return "MissingOutput";
    case ErrorCode::kUnknownItem: return "UnknownItem";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kBusy: return "Busy";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIOError: return "IOError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the failure
/// class; the message carries the offending name, line or id.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace counselflow

#endif  // COUNSELFLOW_ERROR_HPP_
