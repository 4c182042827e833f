#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xorinv {

enum class ErrorKind {
    InvalidArgument,  // precondition or shape violation
    Io,               // file system failure
    Format,           // malformed file contents
    Divergence,       // training produced a non-finite loss
};

std::string_view to_string(ErrorKind kind);

/// Single exception type used across the library. The CLI maps `kind` onto
/// its exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(ErrorKind::InvalidArgument, msg);
}

}  // namespace xorinv
