#pragma once

#include "sqlprov/depset.hpp"

#include <string>
#include <variant>
#include <vector>

namespace sqlprov {

/// Set of row identifiers; the argument type of logwrite_grp.
struct RidSet {
    std::vector<Rho> ids; // sorted unique

    bool operator==(const RidSet&) const = default;
};

/// Runtime value. monostate is SQL NULL. DepSet and RidSet only occur in
/// Phase-2 and Phase-1 evaluation respectively.
using Value = std::variant<std::monostate, int64_t, double, bool, std::string, DepSet, RidSet>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }

} // namespace sqlprov
