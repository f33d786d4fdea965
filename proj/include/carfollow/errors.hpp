#pragma once

#include <stdexcept>
#include <string>

namespace carfollow {

// Each error family maps to one CLI exit code (see tools/carfollow.cpp).

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input is structurally wrong: bad schema, duplicate rows, bad cache header.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Configuration document failed schema validation.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An episode could not be scored against any cluster of its library.
class FitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace carfollow
