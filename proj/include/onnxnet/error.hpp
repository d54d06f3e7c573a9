#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace onnxnet {

enum class ErrorCode {
  MalformedFile,
  CyclicGraph,
  DanglingReference,
  MultipleComponents,
  UnsupportedConstruct,
  ShapeMismatch,
  FoldOverflow,
  FixpointNotReached,
  UnsupportedOp,
  EmptyHistogram,
  InsufficientSamples,
  DegenerateInput,
  NoComparablePairs,
  MalformedRecord,
  DuplicateId,
  EmptyVal,
  Io,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// CLI can report it in a machine-parseable form.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace onnxnet
