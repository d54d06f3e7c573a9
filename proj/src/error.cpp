#include "onnxnet/error.hpp"

namespace onnxnet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::CyclicGraph: return "CyclicGraph";
    case ErrorCode::DanglingReference: return "DanglingReference";
    case ErrorCode::MultipleComponents: return "MultipleComponents";
    case ErrorCode::UnsupportedConstruct: return "UnsupportedConstruct";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FoldOverflow: return "FoldOverflow";
    case ErrorCode::FixpointNotReached: return "FixpointNotReached";
    case ErrorCode::UnsupportedOp: return "UnsupportedOp";
    case ErrorCode::EmptyHistogram: return "EmptyHistogram";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NoComparablePairs: return "NoComparablePairs";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyVal: return "EmptyVal";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace onnxnet
