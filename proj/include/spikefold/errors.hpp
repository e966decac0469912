// Copyright 2026 The Spikefold Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPIKEFOLD_ERRORS_HPP_
#define SPIKEFOLD_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spikefold {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor dimensions do not line up for the requested operation.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid hyperparameter, layer grammar, or an operation requested in the
// wrong mode (e.g. folding an already-folded model).
struct ConfigError : Error {
    using Error::Error;
};

// A stateful precondition is missing (e.g. backward without a forward cache).
struct StateError : Error {
    using Error::Error;
};

// Non-finite value where the pipeline requires finite numerics.
struct NumericError : Error {
    using Error::Error;
};

// MPBN scale too close to zero to admit a threshold fold.
struct DegenerateScaleError : Error {
    using Error::Error;
};

// Malformed byte stream; `offset` points at the first offending byte.
struct ParseError : Error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t at)
        : Error(msg + " (at byte " + std::to_string(at) + ")"), offset(at) {}
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace spikefold

#endif  // SPIKEFOLD_ERRORS_HPP_
