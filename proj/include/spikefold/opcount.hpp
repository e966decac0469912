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

#ifndef SPIKEFOLD_OPCOUNT_HPP_
#define SPIKEFOLD_OPCOUNT_HPP_

#include <cstdint>

namespace spikefold {

// Structural operation counters for inference-cost accounting. Normalization
// work is tracked separately so a folded model can prove it does none.
struct OpCounters {
    std::uint64_t norm_elements = 0;    // elements passed through a BN/MPBN transform
    std::uint64_t elementwise_ops = 0;  // per-element mul/add/compare outside conv kernels

    OpCounters& operator+=(const OpCounters& o) {
        norm_elements += o.norm_elements;
        elementwise_ops += o.elementwise_ops;
        return *this;
    }
};

}  // namespace spikefold

#endif  // SPIKEFOLD_OPCOUNT_HPP_
