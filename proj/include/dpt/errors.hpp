#pragma once

#include <stdexcept>
#include <string>

namespace dpt {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file content (carries a line number in the message).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Structural problems in input data: duplicate tickers, bad headers.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Invalid values: non-finite entries, missing cells, bad timestamps.
class DataError : public Error {
public:
    using Error::Error;
};

/// Argument outside its documented domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Matrix/vector dimension mismatch.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Calibration/validation range selection failure.
class SplitError : public Error {
public:
    using Error::Error;
};

/// Universe selection failure (counts out of range).
class SelectionError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite objective.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch)
        : Error(what), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/// Singular or numerically unusable matrix.
class ConditioningError : public Error {
public:
    using Error::Error;
};

/// Iterative solver hit its iteration cap before converging.
class IterationLimitError : public Error {
public:
    IterationLimitError(const std::string& what, double last_delta)
        : Error(what), last_delta_(last_delta) {}
    double last_delta() const { return last_delta_; }

private:
    double last_delta_;
};

/// Frontier comparison on incompatible grids.
class ComparisonError : public Error {
public:
    using Error::Error;
};

/// File system failure (open/read/write/rename).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dpt
