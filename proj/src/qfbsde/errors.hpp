#pragma once

#include <stdexcept>
#include <string>

namespace qfbsde {

// Error taxonomy mirrored by the C API status codes and the CLI exit codes:
// config_error -> 2, solver_error -> 3, capacity_error -> 4.
class config_error : public std::runtime_error {
public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

class solver_error : public std::runtime_error {
public:
  explicit solver_error(const std::string& what) : std::runtime_error(what) {}
};

class capacity_error : public std::runtime_error {
public:
  explicit capacity_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qfbsde
