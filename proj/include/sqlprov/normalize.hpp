#pragma once

#include "sqlprov/ast.hpp"
#include "sqlprov/validate.hpp"

namespace sqlprov {

/// Rewrite a valid query into normal form: explicitness (star expansion,
/// qualified references, named items, expanded DISTINCT, lifted window
/// specs, explicit defaults), UDF inlining, BIND insertion for correlated
/// subqueries, and clause isolation into the onion layering.
QueryPtr normalize(const Query& q, const Catalog& cat);

/// Empty iff every SELECT block matches one onion layer shape.
std::vector<Violation> check_normal_form(const Query& q);

} // namespace sqlprov
