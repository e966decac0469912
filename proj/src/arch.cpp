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

#include "spikefold/arch.hpp"

#include <sstream>

#include "spikefold/errors.hpp"

namespace spikefold {

std::vector<ArchItem> parse_arch(const std::string& text) {
    std::vector<ArchItem> items;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, ',')) {
        // trim spaces
        const auto first = token.find_first_not_of(" \t");
        const auto last = token.find_last_not_of(" \t");
        if (first == std::string::npos)
            throw ConfigError("arch: empty token in '" + text + "'");
        token = token.substr(first, last - first + 1);

        if (token == "p") {
            items.push_back({ArchItem::Kind::pool, 0});
            continue;
        }
        if (token.size() >= 2 && token[0] == 'c') {
            int ch = 0;
            for (std::size_t i = 1; i < token.size(); ++i) {
                if (token[i] < '0' || token[i] > '9')
                    throw ConfigError("arch: bad token '" + token + "' (expected c<channels> or p)");
                ch = ch * 10 + (token[i] - '0');
            }
            if (ch < 1 || ch > 4096)
                throw ConfigError("arch: channel count out of range in '" + token + "'");
            items.push_back({ArchItem::Kind::conv, ch});
            continue;
        }
        throw ConfigError("arch: bad token '" + token + "' (expected c<channels> or p)");
    }
    if (items.empty()) throw ConfigError("arch: no layers in '" + text + "'");
    if (items.front().kind != ArchItem::Kind::conv)
        throw ConfigError("arch: first layer must be a conv encoder");
    return items;
}

std::string arch_to_string(const std::vector<ArchItem>& items) {
    std::ostringstream os;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) os << ',';
        if (items[i].kind == ArchItem::Kind::pool)
            os << 'p';
        else
            os << 'c' << items[i].channels;
    }
    return os.str();
}

}  // namespace spikefold
