#pragma once

#include "sqlprov/ast.hpp"
#include "sqlprov/depset.hpp"
#include "sqlprov/validate.hpp"

#include <set>

namespace sqlprov {

enum class SiteKind { Join, Grp, Win, Case, Left, Filter, Tblf };

const char* site_kind_name(SiteKind k);

/// One logging call site, shared between the instrumented query and the
/// interpreter.
struct Site {
    int id = 0;
    SiteKind kind = SiteKind::Join;
    int arity = 0; // JOIN<m>
    SourceSpan span;
};

struct TransformOptions {
    Granularity granularity = Granularity::Cell;
    bool why = true;
    bool hoist = false;
};

struct TransformResult {
    QueryPtr phase1;
    QueryPtr phase2;
    std::vector<Site> sites;
    std::set<std::string> rules_applied; // coverage instrumentation
};

/// Deterministic site table for a normalized query: ids 1..n in pre-order
/// (a block's sources before the block's own logging construct, then its
/// expression-level constructs in clause order).
std::vector<Site> allocate_sites(const Query& normalized);

/// The syntax-directed mapping to the instrumented Phase-1 query and the
/// Phase-2 interpreter. Requires check_normal_form(q) to be empty.
TransformResult derive(const Query& normalized, TransformOptions opts);

/// Pull closed subexpressions out of set aggregations in a Phase-2
/// interpreter (grand-total aggregations excluded: their input may be empty).
QueryPtr hoist_set_aggregates(const Query& q2);

std::string sites_to_json(const std::vector<Site>& sites);

} // namespace sqlprov
