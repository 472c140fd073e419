#pragma once

#include <stdexcept>
#include <string>

namespace cign {

// Shape/dimension disagreements between operands.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Out-of-domain inputs (log of nonpositive, degenerate vectors, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent run configuration (schedule mismatch, K = 0 grouping, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Damaged on-disk artifacts: checksum, offset, or size mismatch.
struct CorruptFileError : std::runtime_error {
    explicit CorruptFileError(const std::string& what) : std::runtime_error(what) {}
};

// Unsupported file format version.
struct VersionError : std::runtime_error {
    explicit VersionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cign
