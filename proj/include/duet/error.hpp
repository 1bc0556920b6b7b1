// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace duet {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number of the bad record.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// An artifact (index, matcher, checkpoint, vocabulary) failed to load or
/// is incompatible with the running version.
class ArtifactError : public Error {
 public:
  ArtifactError(std::string artifact, const std::string& what)
      : Error("artifact '" + artifact + "': " + what), artifact_(std::move(artifact)) {}

  const std::string& artifact() const noexcept { return artifact_; }

 private:
  std::string artifact_;
};

}  // namespace duet
