#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mambascope {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyLayerSet : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SelectionMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Weight-file problems. BadMagic / VersionMismatch / Truncated refine it.
struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BadMagic : LoadError {
    using LoadError::LoadError;
};

struct VersionMismatch : LoadError {
    using LoadError::LoadError;
};

struct Truncated : LoadError {
    std::size_t byte_offset;
    Truncated(const std::string& msg, std::size_t offset)
        : LoadError(msg + " (at byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

}  // namespace mambascope
