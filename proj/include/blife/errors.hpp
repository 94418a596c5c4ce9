#pragma once

#include <stdexcept>

namespace blife {

/// Input width or schema fingerprint does not match what a fitted object expects.
class SchemaMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace blife
