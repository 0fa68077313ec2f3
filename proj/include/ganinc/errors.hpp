#pragma once

#include <stdexcept>
#include <string>

namespace ganinc {

// Bad experiment/network configuration (wrong value, missing file, shape
// mismatch in a declared graph). CLI maps this to exit status 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke an API precondition.
struct usage_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Malformed on-disk data (tensor file, manifest, checkpoint).
struct format_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ganinc
