#pragma once

#include <stdexcept>
#include <string>

namespace spinereg {

// Every library failure is one of three kinds; the CLI maps each kind to a
// distinct exit status (see cli.hpp).
enum class ErrorKind {
    Io,            // unreadable/unwritable file, malformed file contents
    Precondition,  // caller violated an operation's contract
    Degenerate,    // numerically degenerate configuration
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& what) : Error(ErrorKind::Precondition, what) {}
};

class DegenerateError : public Error {
public:
    explicit DegenerateError(const std::string& what) : Error(ErrorKind::Degenerate, what) {}
};

}  // namespace spinereg
