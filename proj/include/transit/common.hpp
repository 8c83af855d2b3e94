#pragma once

#include <stdexcept>
#include <string>

namespace transit {

// Thrown for contract violations: bad inputs, broken invariants, impossible requests.
struct TransitError : std::runtime_error {
  explicit TransitError(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw TransitError(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace transit
