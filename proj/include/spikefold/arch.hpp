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

#ifndef SPIKEFOLD_ARCH_HPP_
#define SPIKEFOLD_ARCH_HPP_

#include <string>
#include <vector>

namespace spikefold {

// Hidden-layer grammar for the CLI and test fixtures: a comma-separated
// list of "c<channels>" (3x3/stride-1/pad-1 conv + LIF) and "p" (2x2 max
// pool) tokens, e.g. "c8,c16,p,c16". The classifier head is implicit and
// always last. The first token must be a conv layer; it doubles as the
// encoder that turns real-valued images into spikes.
struct ArchItem {
    enum class Kind { conv, pool } kind;
    int channels = 0;  // conv only
};

std::vector<ArchItem> parse_arch(const std::string& text);

std::string arch_to_string(const std::vector<ArchItem>& items);

}  // namespace spikefold

#endif  // SPIKEFOLD_ARCH_HPP_
