#pragma once

#include <stdexcept>
#include <string>

namespace powerdyad {

/// Bad flags, missing or malformed configuration.  CLI exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a contract (missing dominance file, bad manifest,
/// inconsistent embedding dimension...).  CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or similar.  CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataContract = 2;
inline constexpr int kNumerical = 3;
}  // namespace exit_code

}  // namespace powerdyad
