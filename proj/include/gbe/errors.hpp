#pragma once

#include <stdexcept>
#include <string>

namespace gbe {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A layer or operation was configured with values it cannot realise
// (non-integral output size, bad resample ratio, impossible placement...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// API misuse: non-scalar loss, missing gradients, empty index sets.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// On-disk data failed a magic, size or checksum check.
struct CorruptFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// RunConfig validation; the message lists every violated field.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace gbe
