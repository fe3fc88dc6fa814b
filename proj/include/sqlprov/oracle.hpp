#pragma once

#include "sqlprov/engine.hpp"
#include "sqlprov/transform.hpp"

namespace sqlprov {

/// Single-pass annotated evaluation: every cell carries (value, dependency
/// set) through the whole query, with no log store involved. Ground truth
/// for the two-phase pipeline; shares only the AST and depset modules with
/// it. Requires a normalized query.
DepTable annotated_eval(const Query& normalized, const Database& db, TransformOptions opts,
                        DepBackend backend = DepBackend::Array,
                        const DepUniverse* universe = nullptr);

struct DeletionReport {
    struct Violation {
        Rho deleted;
        std::string detail;
    };
    int checks = 0;
    int skipped = 0;
    std::vector<Violation> violations;
};

/// For each output row o of the keyed query q and each base row r outside
/// o's row-level provenance: re-evaluate q without r and assert o survives
/// with identical values. `key_columns` identify output rows (grouping
/// keys).
DeletionReport deletion_stability(const Query& q, const Database& db, const Table& plain,
                                  const DepTable& row_prov, const std::vector<int>& key_columns);

} // namespace sqlprov
