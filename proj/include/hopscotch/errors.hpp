// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hopscotch {

/// Shapes of two operands are incompatible.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A token id, layer index or target id is outside its valid range.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A NaN or divergent value showed up during training.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FormatErrc {
    bad_magic,
    truncated,
    length_mismatch,
    unknown_version,
    schema,
    io,
};

const char* to_string(FormatErrc code);

/// Failure while reading or writing a checkpoint, trace or dataset file.
class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    FormatErrc code() const noexcept { return code_; }

private:
    FormatErrc code_;
};

}  // namespace hopscotch
