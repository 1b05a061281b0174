#pragma once

#include <stdexcept>
#include <string>

namespace hbkmr {

// Bad input: missing columns, malformed files, invalid arguments.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Factorization failures and non-finite densities.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void warn(const std::string& message);

}  // namespace hbkmr
