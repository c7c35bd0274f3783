#pragma once

#include <stdexcept>
#include <string>

namespace ibt {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.

struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
    ParseError(const std::string& what, std::size_t line)
        : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : NumericError {
    using NumericError::NumericError;
};

}  // namespace ibt
