#pragma once

// Token-overlap F1 between a candidate and a reference caption: lowercase,
// whitespace tokens, multiset overlap.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace llambda {

inline std::vector<std::string> lexical_tokens(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream in(lower);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

/// Two empty texts score 1; one empty text scores 0.
inline double lexical_f1(std::string_view candidate, std::string_view reference) {
    const auto c = lexical_tokens(candidate);
    const auto r = lexical_tokens(reference);
    if (c.empty() && r.empty()) return 1.0;
    if (c.empty() || r.empty()) return 0.0;
    std::map<std::string, std::size_t> counts;
    for (const auto& t : r) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : c) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(c.size());
    const double rec = static_cast<double>(overlap) / static_cast<double>(r.size());
    return 2.0 * p * rec / (p + rec);
}

} // namespace llambda
