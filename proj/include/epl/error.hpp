// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace epl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree with what an operation requires.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed persisted data (dataset, checkpoint, mask, CSV).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid or incomplete experiment configuration.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error(key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    explicit DivergenceError(std::uint64_t iteration)
        : Error("non-finite loss at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}

    std::uint64_t iteration() const noexcept { return iteration_; }

private:
    std::uint64_t iteration_;
};

/// A required upstream artifact is absent or fails its integrity check.
class ArtifactError : public Error {
public:
    ArtifactError(std::string path, const std::string& message)
        : Error(message + ": " + path), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace epl
