#pragma once

#include "sqlprov/ast.hpp"

namespace sqlprov {

/// Parse one query (optionally semicolon-terminated). Throws SqlError with
/// kind Syntax or Unsupported.
QueryPtr parse_query(const std::string& text);

/// Parse a prelude of CREATE FUNCTION statements with single-query SQL
/// bodies. Rejects (mutually) recursive UDFs.
std::vector<Udf> parse_prelude(const std::string& text);

} // namespace sqlprov
