#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace o2proxy {

// Base class for everything this library throws on contract violations.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// LDM allocation or cache budget exhausted; the kernel must tile its data.
class CapacityExceeded : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

// RMA never crosses core groups.
class CrossGroupRma : public Error {
 public:
  using Error::Error;
};

// A synchronization point was not reached by every participant in time.
class DeadlockTimeout : public Error {
 public:
  using Error::Error;
};

// Re-entering a named critical section already held by the same worker.
class SelfDeadlock : public Error {
 public:
  using Error::Error;
};

// A region body threw; carries the failing index tuple when known.
class BodyPanicked : public Error {
 public:
  BodyPanicked(const std::string& what, std::vector<std::int64_t> index)
      : Error(what), index_(std::move(index)) {}
  const std::vector<std::int64_t>& index() const { return index_; }

 private:
  std::vector<std::int64_t> index_;
};

// A second region was started while one is already active on the group.
class NestedRegion : public Error {
 public:
  using Error::Error;
};

// Debug mode only: two workers wrote the same shared bytes without a flush.
class SharedWriteConflict : public Error {
 public:
  using Error::Error;
};

class MisalignedAccess : public Error {
 public:
  using Error::Error;
};

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class DimsMismatch : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  using Error::Error;
};

class MismatchedExit : public Error {
 public:
  using Error::Error;
};

class OpenRegion : public Error {
 public:
  using Error::Error;
};

class MalformedPackHeader : public Error {
 public:
  using Error::Error;
};

class UnknownComponent : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace o2proxy
