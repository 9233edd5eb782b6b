#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtmem {

// Extents of a row-major tensor. Empty shape = scalar (one element).
using Shape = std::vector<std::int64_t>;

// A precondition or API-contract violation by the caller.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Operand shapes incompatible with the requested operation.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input data (dataset records, checkpoints, configs).
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Recognized file, wrong or unsupported version/layout.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

}  // namespace dtmem
