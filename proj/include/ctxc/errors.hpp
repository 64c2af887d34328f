#pragma once

#include <stdexcept>
#include <string>

namespace ctxc {

// Bad flags or argument values; maps to exit code 1 at the CLI.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

// Unreadable/malformed datasets, checkpoints, or model-level failures;
// maps to exit code 2 at the CLI.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace ctxc
