#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace atcdr {

/// Base exception for every recoverable failure in the library.
///
/// `code()` is a short machine-readable tag (e.g. "parse", "stale_timestamp")
/// that the service layer maps onto response codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, std::string code = "error")
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Schema violation while reading a document; `path()` names the offending field.
class ParseError : public Error {
 public:
  ParseError(std::string path, const std::string& detail)
      : Error(path + ": " + detail, "parse"), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace atcdr
