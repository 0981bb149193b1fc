#pragma once

#include <stdexcept>
#include <string>

namespace omnict {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing files, unreadable/unwritable paths. CLI exit code 1.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk data: bad magic, truncation, header/payload mismatch. CLI exit code 2.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Violated preconditions: bad shapes, ranges, labels, config values. CLI exit code 2.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

}  // namespace omnict
