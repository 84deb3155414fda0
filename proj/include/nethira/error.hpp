#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nethira {

enum class ErrorCode {
  kUnsupportedFormat,
  kCorruptHeader,
  kEmptyFlow,
  kNoEligiblePositions,
  kNoEligibleSpans,
  kTooFewPackets,
  kOutOfVocab,
  kEmptyMaskSet,
  kNoClassifierHead,
  kInvalidLabel,
  kEmptyCorpus,
  kNonFiniteLoss,
  kMissingInit,
  kLabelMismatch,
  kVersionMismatch,
  kCorruptFile,
  kClassTooSmall,
  kClassCountMismatch,
  kInvalidArgument,
  kIo,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nethira
