#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace immu {

/// Base class for all domain errors raised by the library.
/// The CLI maps these to exit code 1 (data/domain error).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Antibody string does not match the canonical grammar. Carries the
/// character offset of the sign pair where parsing failed. The CLI maps
/// this to exit code 2 (usage/parse error).
class ParseError : public Error {
public:
    ParseError(std::size_t offset, const std::string& msg)
        : Error("parse error at offset " + std::to_string(offset) + ": " + msg),
          offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// A series element that would appear as an AFER denominator is zero.
class ZeroDenominatorError : public Error {
public:
    using Error::Error;
};

/// A series (or centroid) is constant, so the normalization step size is zero.
class DegenerateSeriesError : public Error {
public:
    using Error::Error;
};

} // namespace immu
