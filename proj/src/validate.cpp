#include "sqlprov/validate.hpp"

#include <set>

namespace sqlprov {

namespace detail {

const NameEnv::Rel* NameEnv::find_rel(const std::string& alias) const {
    for (const auto& r : rels)
        if (r.alias == alias) return &r;
    return parent ? parent->find_rel(alias) : nullptr;
}

const std::vector<Column>* NameEnv::find_cte(const std::string& name) const {
    for (auto it = ctes.rbegin(); it != ctes.rend(); ++it)
        if (it->first == name) return &it->second;
    return parent ? parent->find_cte(name) : nullptr;
}

void ResolveContext::report(const std::string& msg, SourceSpan span) const {
    if (sink) {
        sink->push_back(Violation{msg, span});
        return;
    }
    throw SqlError(ErrorKind::Validation, msg, span);
}

namespace {

bool is_builtin_scalar(const std::string& name) {
    static const std::set<std::string> names = {
        "sqrt", "abs", "round", "floor", "ceil", "greatest", "least", "degrees", "radians",
        "atan", "sin", "cos", "exp", "ln",
    };
    return names.count(name) > 0;
}

bool is_generated_scalar(const std::string& name) {
    return name.rfind("logwrite_", 0) == 0 || name.rfind("logread_", 0) == 0 ||
           name.rfind("ds_", 0) == 0;
}

ColType scalar_result_type(const std::string& name, const std::vector<ColType>& args) {
    if (name == "round" || name == "floor" || name == "ceil") return ColType::Int64;
    if (name == "sqrt" || name == "degrees" || name == "radians" || name == "atan" ||
        name == "sin" || name == "cos" || name == "exp" || name == "ln")
        return ColType::Float64;
    if (!args.empty()) return args[0];
    return ColType::Int64;
}

struct Resolver {
    const ResolveContext& ctx;

    // expression type inference is best effort: names must resolve, types
    // default to int when unknown
    ColType expr_type(const Expr& e, const NameEnv* env, const SelectBlock* block);

    void check_expr(const Expr& e, const NameEnv* env, const SelectBlock* block) {
        expr_type(e, env, block);
    }

    std::vector<Column> block_columns(const SelectBlock& b, SourceSpan span, const NameEnv* outer);
    std::vector<Column> query_cols(const Query& q, const NameEnv* outer);
};

ColType Resolver::expr_type(const Expr& e, const NameEnv* env, const SelectBlock* block) {
    return std::visit(
        [&](const auto& n) -> ColType {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                if (std::holds_alternative<int64_t>(n.value)) return ColType::Int64;
                if (std::holds_alternative<double>(n.value)) return ColType::Float64;
                if (std::holds_alternative<bool>(n.value)) return ColType::Bool;
                if (std::holds_alternative<std::string>(n.value)) return ColType::Text;
                return ColType::Int64;
            } else if constexpr (std::is_same_v<T, ColumnRef>) {
                if (n.table.empty()) {
                    // unqualified: unique across the innermost scope holding it
                    for (const NameEnv* s = env; s; s = s->parent) {
                        const Column* found = nullptr;
                        bool ambiguous = false;
                        for (const auto& rel : s->rels) {
                            for (const auto& col : rel.columns) {
                                if (col.name == n.column) {
                                    if (found) ambiguous = true;
                                    found = &col;
                                }
                            }
                        }
                        if (ambiguous) {
                            ctx.report("ambiguous column reference: " + n.column, e.span);
                            return ColType::Int64;
                        }
                        if (found) return found->type;
                    }
                    ctx.report("unknown column: " + n.column, e.span);
                    return ColType::Int64;
                }
                const auto* rel = env ? env->find_rel(n.table) : nullptr;
                if (!rel) {
                    ctx.report("unknown row variable: " + n.table, e.span);
                    return ColType::Int64;
                }
                for (const auto& col : rel->columns)
                    if (col.name == n.column) return col.type;
                ctx.report("unknown column: " + n.table + "." + n.column, e.span);
                return ColType::Int64;
            } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                ColType l = expr_type(*n.lhs, env, block);
                ColType r = expr_type(*n.rhs, env, block);
                switch (n.op) {
                    case BinOp::Add:
                    case BinOp::Sub:
                    case BinOp::Mul:
                    case BinOp::Mod:
                        return (l == ColType::Float64 || r == ColType::Float64) ? ColType::Float64
                                                                                : ColType::Int64;
                    case BinOp::Div:
                    case BinOp::Pow:
                        return ColType::Float64;
                    default:
                        return ColType::Bool;
                }
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                ColType t = expr_type(*n.operand, env, block);
                if (n.op == UnOp::Neg) return t;
                return ColType::Bool;
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                for (const auto& x : n.items) expr_type(*x, env, block);
                return ColType::Bool;
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                expr_type(*n.probe, env, block);
                for (const auto& x : n.items) expr_type(*x, env, block);
                return ColType::Bool;
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) expr_type(*n.operand, env, block);
                ColType t = ColType::Int64;
                for (const auto& arm : n.arms) {
                    expr_type(*arm.when, env, block);
                    t = expr_type(*arm.then, env, block);
                }
                if (n.else_arm) t = expr_type(*n.else_arm, env, block);
                return t;
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                std::vector<ColType> args;
                for (const auto& x : n.args) args.push_back(expr_type(*x, env, block));
                if (const Udf* u = ctx.catalog->find_udf(n.name)) {
                    if (u->returns_table)
                        ctx.report("table function used as a scalar: " + n.name, e.span);
                    if (u->params.size() != n.args.size())
                        ctx.report("wrong argument count for " + n.name, e.span);
                    return u->scalar_type;
                }
                if (is_builtin_scalar(n.name)) return scalar_result_type(n.name, args);
                if (is_generated_scalar(n.name)) return ColType::Int64;
                ctx.report("unknown function: " + n.name, e.span);
                return ColType::Int64;
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                ColType t = ColType::Int64;
                if (n.arg) t = expr_type(*n.arg, env, block);
                if (n.func == "count") return ColType::Int64;
                if (n.func == "avg") return ColType::Float64;
                if (n.func == "bool_or" || n.func == "bool_and") return ColType::Bool;
                return t;
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                ColType t = ColType::Int64;
                for (const auto& x : n.args) t = expr_type(*x, env, block);
                if (!n.over.name.empty() && block) {
                    bool found = false;
                    for (const auto& w : block->windows)
                        if (w.name == n.over.name) found = true;
                    if (!found) ctx.report("unknown window: " + n.over.name, e.span);
                }
                for (const auto& x : n.over.partition) expr_type(*x, env, block);
                for (const auto& o : n.over.order) expr_type(*o.expr, env, block);
                if (n.func == "rank") return ColType::Int64;
                if (n.func == "avg") return ColType::Float64;
                if (n.func == "count") return ColType::Int64;
                if (n.func == "bool_or" || n.func == "bool_and") return ColType::Bool;
                return t;
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                auto cols = query_cols(*n.query, env);
                if (cols.size() != 1)
                    ctx.report("scalar subquery must produce one column", e.span);
                return cols.empty() ? ColType::Int64 : cols[0].type;
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                expr_type(*n.probe, env, block);
                auto cols = query_cols(*n.query, env);
                if (cols.size() != 1)
                    ctx.report("IN subquery must produce one column", e.span);
                return ColType::Bool;
            } else {
                static_assert(std::is_same_v<T, ExistsExpr>);
                query_cols(*n.query, env);
                return ColType::Bool;
            }
        },
        e.node);
}

std::vector<Column> Resolver::block_columns(const SelectBlock& b, SourceSpan span,
                                            const NameEnv* outer) {
    NameEnv env;
    env.parent = outer;

    for (const auto& step : b.from) {
        // non-lateral items resolve against the outer scope only; lateral
        // items additionally see the from-items accumulated so far
        NameEnv lateral_env = env; // copy of rels so far, same parent chain
        const NameEnv* item_env = step.lateral ? &lateral_env : outer;
        auto cols = from_item_columns(ctx, step.item, item_env);
        for (const auto& r : env.rels)
            if (r.alias == step.item.alias)
                ctx.report("duplicate from alias: " + step.item.alias, step.item.span);
        env.rels.push_back(NameEnv::Rel{step.item.alias, std::move(cols)});
        if (step.on) check_expr(*step.on, &env, &b);
    }

    if (b.where) check_expr(*b.where, &env, &b);
    if (b.group_by)
        for (const auto& g : *b.group_by) check_expr(*g, &env, &b);
    if (b.having) check_expr(*b.having, &env, &b);
    for (const auto& w : b.windows) {
        for (const auto& p : w.partition) check_expr(*p, &env, &b);
        for (const auto& o : w.order) check_expr(*o.expr, &env, &b);
    }
    for (const auto& d : b.distinct_on) check_expr(*d, &env, &b);
    for (const auto& o : b.order_by) check_expr(*o.expr, &env, &b);

    std::vector<Column> out;
    if (b.select_star) {
        for (const auto& rel : env.rels)
            for (const auto& col : rel.columns) out.push_back(col);
        if (env.rels.empty()) ctx.report("SELECT * without FROM", span);
        return out;
    }
    for (const auto& item : b.items) {
        ColType t = expr_type(*item.expr, &env, &b);
        std::string name = item.alias;
        if (name.empty()) {
            if (const auto* ref = std::get_if<ColumnRef>(&item.expr->node)) name = ref->column;
            else name = "?column?";
        }
        out.push_back(Column{name, t});
    }
    return out;
}

std::vector<Column> Resolver::query_cols(const Query& q, const NameEnv* outer) {
    return std::visit(
        [&](const auto& n) -> std::vector<Column> {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                return block_columns(n, q.span, outer);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                std::vector<Column> first;
                for (size_t i = 0; i < n.arms.size(); ++i) {
                    auto cols = query_cols(*n.arms[i], outer);
                    if (i == 0) {
                        first = std::move(cols);
                    } else if (cols.size() != first.size()) {
                        ctx.report("UNION ALL arms differ in column count", n.arms[i]->span);
                    }
                }
                return first;
            } else {
                NameEnv env;
                env.parent = outer;
                for (const auto& b : n.bindings) {
                    std::vector<Column> cols;
                    if (n.recursive && b.query->template is<SetOpQuery>()) {
                        // the base arm fixes the schema, later arms may
                        // reference the binding itself
                        const auto& arms = b.query->template as<SetOpQuery>().arms;
                        cols = query_cols(*arms[0], &env);
                        if (!b.columns.empty()) {
                            if (b.columns.size() != cols.size())
                                ctx.report("column list arity mismatch for " + b.name, b.span);
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        }
                        env.ctes.emplace_back(b.name, cols);
                        for (size_t i = 1; i < arms.size(); ++i) query_cols(*arms[i], &env);
                    } else {
                        cols = query_cols(*b.query, &env);
                        if (!b.columns.empty()) {
                            if (b.columns.size() != cols.size())
                                ctx.report("column list arity mismatch for " + b.name, b.span);
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        }
                        env.ctes.emplace_back(b.name, cols);
                    }
                }
                return query_cols(*n.body, &env);
            }
        },
        q.node);
}

} // namespace

std::vector<Column> from_item_columns(const ResolveContext& ctx, const FromItem& item,
                                      const NameEnv* visible) {
    std::vector<Column> cols;
    switch (item.kind) {
        case FromItem::Kind::Table: {
            if (const auto* cte = visible ? visible->find_cte(item.table) : nullptr) {
                cols = *cte;
            } else if (const TableDef* t = ctx.catalog->find_table(item.table)) {
                cols = t->columns;
            } else {
                ctx.report("unknown table: " + item.table, item.span);
            }
            break;
        }
        case FromItem::Kind::Subquery: {
            Resolver r{ctx};
            cols = r.query_cols(*item.subquery, visible);
            break;
        }
        case FromItem::Kind::TableFunc: {
            Resolver r{ctx};
            for (const auto& a : item.args) r.check_expr(*a, visible, nullptr);
            if (item.func == "generate_series") {
                if (item.args.size() != 2)
                    ctx.report("generate_series takes two arguments", item.span);
                cols.push_back(Column{item.alias, ColType::Int64});
            } else if (item.func == "logread_grp" || item.func == "logread_filter" ||
                       item.func == "logread_tblf" || item.func.rfind("logread_join", 0) == 0) {
                cols.push_back(Column{kRhoColumn, ColType::Int64});
            } else if (item.func == "logread_win") {
                cols.push_back(Column{"part", ColType::Int64});
                cols.push_back(Column{"rank", ColType::Int64});
            } else if (item.func == "logread_left") {
                cols.push_back(Column{"pair", ColType::Int64});
                cols.push_back(Column{"right", ColType::Int64});
            } else if (const Udf* u = ctx.catalog->find_udf(item.func)) {
                if (!u->returns_table)
                    ctx.report("scalar function used in FROM: " + item.func, item.span);
                if (u->params.size() != item.args.size())
                    ctx.report("wrong argument count for " + item.func, item.span);
                cols = u->table_columns;
            } else {
                ctx.report("unknown table function: " + item.func, item.span);
            }
            break;
        }
        case FromItem::Kind::Bind: {
            const auto* rel = visible ? visible->find_rel(item.alias) : nullptr;
            if (!rel) {
                ctx.report("BIND without an outer binding for: " + item.alias, item.span);
                break;
            }
            for (const auto& name : item.bind_columns) {
                bool found = false;
                for (const auto& col : rel->columns) {
                    if (col.name == name) {
                        cols.push_back(col);
                        found = true;
                    }
                }
                if (!found) ctx.report("BIND column not in outer binding: " + name, item.span);
            }
            break;
        }
    }
    if (!item.column_aliases.empty()) {
        if (item.column_aliases.size() > cols.size())
            ctx.report("more column aliases than columns for " + item.alias, item.span);
        for (size_t i = 0; i < item.column_aliases.size() && i < cols.size(); ++i)
            cols[i].name = item.column_aliases[i];
    }
    return cols;
}

std::vector<Column> query_columns(const ResolveContext& ctx, const Query& q, const NameEnv* outer) {
    Resolver r{ctx};
    return r.query_cols(q, outer);
}

} // namespace detail

std::vector<Violation> validate(const Query& q, const Catalog& cat) {
    std::vector<Violation> out;
    detail::ResolveContext ctx{&cat, &out};
    detail::query_columns(ctx, q, nullptr);
    return out;
}

std::vector<Column> infer_output_columns(const Query& q, const Catalog& cat) {
    detail::ResolveContext ctx{&cat, nullptr};
    return detail::query_columns(ctx, q, nullptr);
}

} // namespace sqlprov
