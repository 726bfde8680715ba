#pragma once

#include <stdexcept>
#include <string>

namespace cardioseg {

/// Malformed or unsupported file content (NIfTI, model files, JSON configs).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failures: unreadable, unwritable, short writes.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values during optimization or a failed numerical check.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cardioseg
