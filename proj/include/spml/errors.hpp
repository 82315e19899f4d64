#pragma once

#include <stdexcept>
#include <string>

namespace spml {

// Argument outside the mathematical domain of a function (non-finite logit,
// probability on the boundary where a log or logit is undefined).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Hyperparameter that violates its declared range.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-conformable matrix or vector shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Malformed input file. The message carries the offending line number.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// A framework loss evaluated in a state it does not define, e.g. an
// "undefined" pseudo-label under a nonzero weight.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace spml
