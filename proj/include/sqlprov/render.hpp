#pragma once

#include "sqlprov/ast.hpp"

namespace sqlprov {

/// Deterministic SQL text for a query; parse_query(render_sql(q)) is
/// structurally equal to q.
std::string render_sql(const Query& q);
std::string render_sql(const Expr& e);

} // namespace sqlprov
