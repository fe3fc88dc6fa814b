#pragma once

#include "sqlprov/span.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sqlprov {

// Column name carrying the row identifier in Phase-1/Phase-2 queries.
inline const std::string kRhoColumn = "_rho";

enum class ColType { Int64, Float64, Bool, Text, Dep, RidSet };

const char* col_type_name(ColType t);
std::optional<ColType> col_type_from_name(const std::string& name);

struct Column {
    std::string name;
    ColType type = ColType::Int64;
};

struct Expr;
struct Query;
using ExprPtr = std::unique_ptr<Expr>;
using QueryPtr = std::unique_ptr<Query>;

// ---------------------------------------------------------------------------
// Expressions

enum class BinOp { Add, Sub, Mul, Div, Mod, Pow, Eq, Ne, Lt, Le, Gt, Ge, And, Or };
enum class UnOp { Neg, Not, IsNull, IsNotNull };

const char* bin_op_symbol(BinOp op);

struct Literal {
    std::variant<std::monostate, int64_t, double, bool, std::string> value;
};

struct ColumnRef {
    std::string table; // empty before normalization qualifies it
    std::string column;
};

struct BinaryExpr {
    BinOp op;
    ExprPtr lhs, rhs;
};

struct UnaryExpr {
    UnOp op;
    ExprPtr operand;
};

struct RowExpr {
    std::vector<ExprPtr> items;
};

struct InListExpr {
    ExprPtr probe;
    std::vector<ExprPtr> items;
    bool negated = false;
};

/// CASE expression. `operand == nullptr` is the searched form; otherwise the
/// simple form (operand compared against each WHEN value).
struct CaseExpr {
    struct Arm {
        ExprPtr when;
        ExprPtr then;
    };
    ExprPtr operand;
    std::vector<Arm> arms;
    ExprPtr else_arm; // may be null (implicit NULL)
};

/// Scalar function call: builtins (sqrt, round, ...), UDF calls before
/// inlining, and the generated log/depset functions.
struct FuncCallExpr {
    std::string name;
    std::vector<ExprPtr> args;
};

struct AggregateExpr {
    std::string func; // sum count avg min max bool_or bool_and ds_agg ds_first rid_agg
    ExprPtr arg;
    bool star = false; // COUNT(*)
};

struct FrameBound {
    enum class Kind { UnboundedPreceding, Preceding, CurrentRow, Following, UnboundedFollowing };
    Kind kind = Kind::UnboundedPreceding;
    int64_t offset = 0;
};

struct Frame {
    enum class Unit { Rows, Range };
    Unit unit = Unit::Range;
    FrameBound lo, hi;
};

struct OrderItem {
    ExprPtr expr;
    bool desc = false;
};

/// Window spec: either a reference to a named WINDOW clause (possibly with a
/// frame override) or an inline specification (removed by normalization).
struct WindowSpec {
    std::string name; // non-empty: named reference
    std::vector<ExprPtr> partition;
    std::vector<OrderItem> order;
    std::optional<Frame> frame;

    bool is_ref() const { return !name.empty() && partition.empty() && order.empty(); }
};

struct WindowFuncExpr {
    std::string func; // aggregates plus rank, first_value, ds_agg, ds_first_value
    std::vector<ExprPtr> args;
    WindowSpec over;
};

struct SubqueryExpr { // scalar subquery
    QueryPtr query;
};

struct InSubqueryExpr {
    ExprPtr probe;
    QueryPtr query;
    bool negated = false;
};

struct ExistsExpr {
    QueryPtr query;
    bool negated = false;
};

struct Expr {
    SourceSpan span;
    std::variant<Literal, ColumnRef, BinaryExpr, UnaryExpr, RowExpr, InListExpr, CaseExpr,
                 FuncCallExpr, AggregateExpr, WindowFuncExpr, SubqueryExpr, InSubqueryExpr,
                 ExistsExpr>
        node;

    template <typename T> bool is() const { return std::holds_alternative<T>(node); }
    template <typename T> T& as() { return std::get<T>(node); }
    template <typename T> const T& as() const { return std::get<T>(node); }
};

// ---------------------------------------------------------------------------
// Queries

struct SelectItem {
    ExprPtr expr;
    std::string alias; // empty before normalization names it
    SourceSpan span;
};

struct FromItem {
    enum class Kind { Table, Subquery, TableFunc, Bind };
    Kind kind = Kind::Table;
    std::string table;                      // Table
    QueryPtr subquery;                      // Subquery
    std::string func;                       // TableFunc
    std::vector<ExprPtr> args;              // TableFunc
    std::vector<std::string> bind_columns;  // Bind
    std::string alias;
    std::vector<std::string> column_aliases;
    SourceSpan span;
};

/// One step of a linear FROM chain: `a, b LEFT JOIN c ON p, d` becomes four
/// steps; a Left step joins against everything accumulated so far.
struct FromStep {
    enum class Join { Cross, Left };
    Join join = Join::Cross;
    bool lateral = false;
    FromItem item;
    ExprPtr on; // Left only
};

struct WindowDef {
    std::string name;
    std::vector<ExprPtr> partition;
    std::vector<OrderItem> order;
};

struct LimitClause {
    std::optional<int64_t> count; // nullopt = ALL
};

struct SelectBlock {
    bool distinct = false; // plain DISTINCT, expanded by normalization
    std::vector<ExprPtr> distinct_on;
    std::vector<SelectItem> items;
    bool select_star = false; // SELECT * (expanded by normalization)
    std::vector<FromStep> from;
    ExprPtr where;
    std::optional<std::vector<ExprPtr>> group_by; // engaged+empty = GROUP BY ()
    ExprPtr having;
    std::vector<WindowDef> windows;
    std::vector<OrderItem> order_by;
    std::optional<int64_t> offset;
    std::optional<LimitClause> limit;
};

struct SetOpQuery { // UNION ALL chain
    std::vector<QueryPtr> arms;
};

struct WithQuery {
    struct Binding {
        std::string name;
        std::vector<std::string> columns;
        QueryPtr query;
        SourceSpan span;
    };
    bool recursive = false;
    std::vector<Binding> bindings;
    QueryPtr body;
};

struct Query {
    SourceSpan span;
    std::variant<SelectBlock, SetOpQuery, WithQuery> node;

    template <typename T> bool is() const { return std::holds_alternative<T>(node); }
    template <typename T> T& as() { return std::get<T>(node); }
    template <typename T> const T& as() const { return std::get<T>(node); }
};

// ---------------------------------------------------------------------------
// Catalog

struct TableDef {
    std::string name;
    std::vector<Column> columns;

    int column_index(const std::string& name) const;
};

struct Udf {
    std::string name;
    std::vector<Column> params;
    bool returns_table = false;
    std::vector<Column> table_columns; // returns_table
    ColType scalar_type = ColType::Int64;
    QueryPtr body;
    SourceSpan span;
};

struct Catalog {
    std::vector<TableDef> tables;
    std::vector<Udf> udfs;

    const TableDef* find_table(const std::string& name) const;
    const Udf* find_udf(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// Utilities

ExprPtr clone(const Expr& e);
QueryPtr clone(const Query& q);
FromItem clone(const FromItem& f);

/// Structural equality, spans ignored.
bool equal(const Expr& a, const Expr& b);
bool equal(const Query& a, const Query& b);

/// Pre-order walk over every expression of a query, descending into
/// subqueries. The callback may return false to skip a subtree.
void walk_exprs(const Query& q, const std::function<bool(const Expr&)>& fn);
void walk_exprs(const Expr& e, const std::function<bool(const Expr&)>& fn);

/// All identifiers used anywhere (aliases, columns, window names); feeds the
/// fresh-name generator.
void collect_identifiers(const Query& q, std::vector<std::string>& out);

bool is_plain_aggregate_name(const std::string& name);
bool is_window_func_name(const std::string& name);

// Expression builders used across the normalizer and transformer.
ExprPtr make_literal_int(int64_t v);
ExprPtr make_literal_bool(bool v);
ExprPtr make_column_ref(const std::string& table, const std::string& column);
ExprPtr make_func_call(const std::string& name, std::vector<ExprPtr> args);
ExprPtr make_binary(BinOp op, ExprPtr lhs, ExprPtr rhs);

/// Deterministic source of identifiers not colliding with any name already
/// present in the query.
class FreshNames {
public:
    explicit FreshNames(const Query& q);
    void reserve(const std::string& name);
    std::string fresh(const std::string& base);

private:
    std::vector<std::string> used_;
    bool in_use(const std::string& name) const;
};

} // namespace sqlprov
