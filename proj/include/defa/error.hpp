#pragma once

#include <stdexcept>
#include <string>

namespace defa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A vector whose norm is too small to normalise (cosine / L2 normalisation).
class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

/// Invalid split description, vocabulary or label.
class SpaceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when a loss component becomes non-finite.
class TrainingError : public Error {
 public:
  TrainingError(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Structured rejection of a malformed file.
class FormatError : public Error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kBadVersion,
    kTruncated,
    kTrailingBytes,
    kSizeMismatch,
    kNonFinite,
    kBadId,
    kDuplicateId,
    kSyntax,
    kUnknownName,
    kMissingEntry,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

const char* to_string(FormatError::Kind kind);

}  // namespace defa
