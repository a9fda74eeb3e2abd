#pragma once

#include <stdexcept>
#include <string>

namespace kineverse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- expressions ---

class MissingVariableError : public Error {
public:
  explicit MissingVariableError(const std::string& var)
      : Error("missing variable in assignment: " + var), variable(var) {}
  std::string variable;
};

class DomainError : public Error {
public:
  explicit DomainError(const std::string& what) : Error(what) {}
};

class UncoveredVariableError : public Error {
public:
  explicit UncoveredVariableError(const std::string& var)
      : Error("expression variable not covered by evaluator inputs: " + var), variable(var) {}
  std::string variable;
};

// --- articulation model ---

class UnknownPathError : public Error {
public:
  explicit UnknownPathError(const std::string& path)
      : Error("unknown model path: " + path), path(path) {}
  UnknownPathError(const std::string& path, const std::string& what) : Error(what), path(path) {}
  std::string path;
};

class UnknownTagError : public Error {
public:
  explicit UnknownTagError(const std::string& tag)
      : Error("unknown operation tag: " + tag), tag(tag) {}
  UnknownTagError(const std::string& tag, const std::string& what) : Error(what), tag(tag) {}
  std::string tag;
};

class DuplicateTagError : public Error {
public:
  explicit DuplicateTagError(const std::string& tag)
      : Error("duplicate operation tag: " + tag), tag(tag) {}
  DuplicateTagError(const std::string& tag, const std::string& what) : Error(what), tag(tag) {}
  std::string tag;
};

class DuplicateNameError : public Error {
public:
  explicit DuplicateNameError(const std::string& name)
      : Error("duplicate constraint name: " + name), name(name) {}
  DuplicateNameError(const std::string& name, const std::string& what) : Error(what), name(name) {}
  std::string name;
};

class MissingLimitsError : public Error {
public:
  explicit MissingLimitsError(const std::string& joint)
      : Error("joint requires position limits: " + joint), joint(joint) {}
  MissingLimitsError(const std::string& joint, const std::string& what)
      : Error(what), joint(joint) {}
  std::string joint;
};

// --- loaders ---

class ParseError : public Error {
public:
  explicit ParseError(const std::string& what) : Error(what) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

class UnsupportedJointError : public Error {
public:
  explicit UnsupportedJointError(const std::string& what) : Error(what) {}
};

class UnsupportedGeometryError : public Error {
public:
  explicit UnsupportedGeometryError(const std::string& what) : Error(what) {}
};

class MimicCycleError : public Error {
public:
  explicit MimicCycleError(const std::string& what) : Error(what) {}
};

class CycleError : public Error {
public:
  explicit CycleError(const std::string& what) : Error(what) {}
};

// --- geometry ---

class UnsupportedPairError : public Error {
public:
  explicit UnsupportedPairError(const std::string& what) : Error(what) {}
};

// --- estimation ---

class NoSymbolicEntriesError : public Error {
public:
  explicit NoSymbolicEntriesError(const std::string& what) : Error(what) {}
};

class NonConstantBoundError : public Error {
public:
  explicit NonConstantBoundError(const std::string& what) : Error(what) {}
};

class SingularResidualCovarianceError : public Error {
public:
  explicit SingularResidualCovarianceError(const std::string& what) : Error(what) {}
};

// --- control ---

class EmptyIntervalError : public Error {
public:
  explicit EmptyIntervalError(const std::string& what) : Error(what) {}
};

class InfeasibleError : public Error {
public:
  explicit InfeasibleError(const std::string& what) : Error(what) {}
};

class IterationLimitError : public Error {
public:
  explicit IterationLimitError(const std::string& what) : Error(what) {}
};

class IkStalledError : public Error {
public:
  explicit IkStalledError(const std::string& what) : Error(what) {}
};

class NonRigidInputError : public Error {
public:
  explicit NonRigidInputError(const std::string& what) : Error(what) {}
};

// --- model server ---

class VersionMismatchError : public Error {
public:
  explicit VersionMismatchError(const std::string& what) : Error(what) {}
};

class BadMessageError : public Error {
public:
  explicit BadMessageError(const std::string& what) : Error(what) {}
};

class DisconnectedError : public Error {
public:
  explicit DisconnectedError(const std::string& what) : Error(what) {}
};

}  // namespace kineverse
