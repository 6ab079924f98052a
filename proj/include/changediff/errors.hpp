#pragma once

#include <stdexcept>
#include <string>

namespace changediff {

enum class ErrorKind {
  Config,      // bad settings, bounds, missing files named in config
  Data,        // corpus/palette mismatch, empty corpus
  Palette,     // id or name not covered by the governing palette
  Parse,       // prompt / manifest / palette-file grammar violations
  Event,       // event transform inapplicable to the distribution
  Shape,       // tensor or raster dimension mismatch
  Mode,        // conditioning supplied to a model without a side network, etc.
  Registry,    // token span outside the tokenized range
  Alignment,   // class sets or manifest ids do not correspond
  Degenerate,  // zero-mass distribution, empty confusion
  Io,          // filesystem failures
  Internal,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace changediff
