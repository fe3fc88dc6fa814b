#pragma once

#include "sqlprov/ast.hpp"

namespace sqlprov {

struct Violation {
    std::string message;
    SourceSpan span;
};

/// Name resolution over user queries: unknown tables/columns/functions,
/// ambiguous references, scoping of free row variables, window name
/// resolution. Empty result = valid.
std::vector<Violation> validate(const Query& q, const Catalog& cat);

/// Output columns of a query (throws SqlError on resolution failure).
std::vector<Column> infer_output_columns(const Query& q, const Catalog& cat);

namespace detail {

/// Lexical scope for resolution: the from-items of the enclosing blocks plus
/// visible CTEs. Shared by validate, the normalizer, and the transformer.
struct NameEnv {
    const NameEnv* parent = nullptr;
    struct Rel {
        std::string alias;
        std::vector<Column> columns;
    };
    std::vector<Rel> rels;
    std::vector<std::pair<std::string, std::vector<Column>>> ctes;

    const Rel* find_rel(const std::string& alias) const;
    const std::vector<Column>* find_cte(const std::string& name) const;
};

struct ResolveContext {
    const Catalog* catalog;
    std::vector<Violation>* sink = nullptr; // null: throw on error

    void report(const std::string& msg, SourceSpan span) const;
};

std::vector<Column> query_columns(const ResolveContext& ctx, const Query& q, const NameEnv* outer);
std::vector<Column> from_item_columns(const ResolveContext& ctx, const FromItem& item,
                                      const NameEnv* visible);

} // namespace detail

} // namespace sqlprov
