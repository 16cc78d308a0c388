#pragma once

#include <stdexcept>
#include <string>

namespace certkit {

// Input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Dataset file could not be parsed or validated. The message names line and field.
class LoadError : public std::runtime_error {
public:
    LoadError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// External model process failed, timed out, or produced incomplete output.
class AdapterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularDesign : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidArgument(msg);
}

}  // namespace detail
}  // namespace certkit
