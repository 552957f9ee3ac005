#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace abow {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("I/O error: " + what) {}
};

/// A file does not conform to its binary or CSV layout.
class FormatError : public Error {
public:
    FormatError(std::uint64_t offset, const std::string& reason)
        : Error("format error at offset " + std::to_string(offset) + ": " + reason),
          offset_(offset), reason_(reason) {}

    std::uint64_t offset() const noexcept { return offset_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::uint64_t offset_;
    std::string reason_;
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t found)
        : Error("dimension mismatch: expected " + std::to_string(expected) + ", found " +
                std::to_string(found)),
          expected_(expected), found_(found) {}

    std::size_t expected() const noexcept { return expected_; }
    std::size_t found() const noexcept { return found_; }

private:
    std::size_t expected_;
    std::size_t found_;
};

class InvalidConfig : public Error {
public:
    explicit InvalidConfig(const std::string& reason) : Error("invalid configuration: " + reason) {}
};

class WordOutOfRange : public Error {
public:
    WordOutOfRange(std::size_t word, std::size_t vocabulary_size)
        : Error("word " + std::to_string(word) + " out of range [0, " +
                std::to_string(vocabulary_size) + ")") {}
};

class EmptyQuery : public Error {
public:
    EmptyQuery() : Error("query image has no descriptors") {}
};

class InconsistentState : public Error {
public:
    explicit InconsistentState(const std::string& reason) : Error("inconsistent stop state: " + reason) {}
};

class MissingGroundTruth : public Error {
public:
    explicit MissingGroundTruth(std::uint32_t query_id)
        : Error("no ground truth entry for query " + std::to_string(query_id)), query_id_(query_id) {}

    std::uint32_t query_id() const noexcept { return query_id_; }

private:
    std::uint32_t query_id_;
};

} // namespace abow
