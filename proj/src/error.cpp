#include "nethira/error.hpp"

namespace nethira {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kCorruptHeader: return "CorruptHeader";
    case ErrorCode::kEmptyFlow: return "EmptyFlow";
    case ErrorCode::kNoEligiblePositions: return "NoEligiblePositions";
    case ErrorCode::kNoEligibleSpans: return "NoEligibleSpans";
    case ErrorCode::kTooFewPackets: return "TooFewPackets";
    case ErrorCode::kOutOfVocab: return "OutOfVocab";
    case ErrorCode::kEmptyMaskSet: return "EmptyMaskSet";
    case ErrorCode::kNoClassifierHead: return "NoClassifierHead";
    case ErrorCode::kInvalidLabel: return "InvalidLabel";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kMissingInit: return "MissingInit";
    case ErrorCode::kLabelMismatch: return "LabelMismatch";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kClassTooSmall: return "ClassTooSmall";
    case ErrorCode::kClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

}  // namespace nethira
