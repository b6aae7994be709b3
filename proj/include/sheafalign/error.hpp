#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sheafalign {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
struct DimensionError : Error {
  using Error::Error;
};

/// A caller broke an operation's precondition (e.g. backward on a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

/// A row had (near) zero norm where a direction was required.
struct DegenerateEmbeddingError : Error {
  using Error::Error;
};

struct ConnectivityError : Error {
  using Error::Error;
};

struct StructureError : Error {
  using Error::Error;
};

/// Malformed binary file. `offset` is the byte position where reading failed.
struct ParseError : Error {
  ParseError(const std::string& section, std::uint64_t offset, const std::string& what)
      : Error("parse error in " + section + " at byte " + std::to_string(offset) + ": " + what),
        section(section),
        offset(offset) {}
  std::string section;
  std::uint64_t offset;
};

struct ChecksumError : Error {
  using Error::Error;
};

struct DigestError : Error {
  using Error::Error;
};

/// Invalid run configuration; `locator` is a path such as `graph.edges[2]`.
struct ConfigError : Error {
  ConfigError(const std::string& locator, const std::string& what)
      : Error(locator + ": " + what), locator(locator) {}
  std::string locator;
};

}  // namespace sheafalign
