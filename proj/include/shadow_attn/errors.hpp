#pragma once

#include <stdexcept>
#include <string>

namespace shadow_attn {

/// Invalid argument, shape or value handed to a library function.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Binary tensor file or structured document that cannot be parsed.
class FormatError : public std::runtime_error {
public:
    enum class Kind { bad_magic, version_mismatch, truncated, malformed, io };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// A pipeline schedule whose events break a dependency or occupy a processor twice.
class ScheduleInvalid : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exhaustive planning was asked to enumerate more orders than allowed.
class SearchLimitExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace shadow_attn
