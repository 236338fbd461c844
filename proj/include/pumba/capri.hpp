#pragma once

#include <string>

#include "pumba/errors.hpp"

namespace pumba {

// CAPRI quality tiers, consumed as precomputed labels. Ordered so that
// "category >= acceptable" reads naturally.
enum class CapriCategory : int { incorrect = 0, acceptable = 1, medium = 2, high = 3 };

inline const char* to_string(CapriCategory c) {
    switch (c) {
        case CapriCategory::incorrect: return "incorrect";
        case CapriCategory::acceptable: return "acceptable";
        case CapriCategory::medium: return "medium";
        case CapriCategory::high: return "high";
    }
    return "incorrect";
}

inline CapriCategory capri_from_string(const std::string& s) {
    if (s == "incorrect") return CapriCategory::incorrect;
    if (s == "acceptable") return CapriCategory::acceptable;
    if (s == "medium") return CapriCategory::medium;
    if (s == "high") return CapriCategory::high;
    throw DataError("unknown CAPRI category '" + s +
                    "' (want incorrect|acceptable|medium|high)");
}

}  // namespace pumba
