#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace panofocus {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed files, out-of-range values, shape mismatches.
// The CLI maps these to exit status 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A detector adapter failed on one sub-region. Carries the region identity
// so callers can skip-and-warn instead of aborting the whole frame.
class AdapterError : public Error {
 public:
  AdapterError(std::string frame_id, std::size_t region_index, const std::string& what)
      : Error("detector adapter failed on frame '" + frame_id + "' region " +
              std::to_string(region_index) + ": " + what),
        frame_id_(std::move(frame_id)),
        region_index_(region_index) {}

  const std::string& frame_id() const { return frame_id_; }
  std::size_t region_index() const { return region_index_; }

 private:
  std::string frame_id_;
  std::size_t region_index_;
};

// Broken internal invariant. The CLI maps these to exit status 2.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace panofocus
