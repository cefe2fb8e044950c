#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace thh {

// Base error for everything raised by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent external data (files, submissions, series).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Bad command-line usage or configuration keys.
struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

} // namespace thh
