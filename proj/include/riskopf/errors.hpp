#pragma once

#include <stdexcept>
#include <string>

namespace riskopf {

/// Input violates a documented invariant (bad value, bad field, bad schema).
class ValidationError : public std::invalid_argument {
public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input is well-formed entry by entry but the whole is unusable (e.g. islanded network).
class StructuralError : public std::runtime_error {
public:
  explicit StructuralError(const std::string& what) : std::runtime_error(what) {}
};

class DimensionError : public std::invalid_argument {
public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

namespace detail {

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail
}  // namespace riskopf
