#include "sqlprov/ast.hpp"

#include <algorithm>

namespace sqlprov {

const char* col_type_name(ColType t) {
    switch (t) {
        case ColType::Int64: return "int";
        case ColType::Float64: return "float";
        case ColType::Bool: return "boolean";
        case ColType::Text: return "text";
        case ColType::Dep: return "depset";
        case ColType::RidSet: return "ridset";
    }
    return "?";
}

std::optional<ColType> col_type_from_name(const std::string& name) {
    if (name == "int" || name == "integer" || name == "int64" || name == "bigint")
        return ColType::Int64;
    if (name == "float" || name == "float64" || name == "real" || name == "double")
        return ColType::Float64;
    if (name == "bool" || name == "boolean") return ColType::Bool;
    if (name == "text" || name == "varchar" || name == "string") return ColType::Text;
    return std::nullopt;
}

const char* bin_op_symbol(BinOp op) {
    switch (op) {
        case BinOp::Add: return "+";
        case BinOp::Sub: return "-";
        case BinOp::Mul: return "*";
        case BinOp::Div: return "/";
        case BinOp::Mod: return "%";
        case BinOp::Pow: return "^";
        case BinOp::Eq: return "=";
        case BinOp::Ne: return "<>";
        case BinOp::Lt: return "<";
        case BinOp::Le: return "<=";
        case BinOp::Gt: return ">";
        case BinOp::Ge: return ">=";
        case BinOp::And: return "AND";
        case BinOp::Or: return "OR";
    }
    return "?";
}

int TableDef::column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == name) return static_cast<int>(i);
    return -1;
}

const TableDef* Catalog::find_table(const std::string& name) const {
    for (const auto& t : tables)
        if (t.name == name) return &t;
    return nullptr;
}

const Udf* Catalog::find_udf(const std::string& name) const {
    for (const auto& u : udfs)
        if (u.name == name) return &u;
    return nullptr;
}

// ---------------------------------------------------------------------------
// clone

namespace {

std::vector<ExprPtr> clone_all(const std::vector<ExprPtr>& xs) {
    std::vector<ExprPtr> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(clone(*x));
    return out;
}

std::vector<OrderItem> clone_order(const std::vector<OrderItem>& xs) {
    std::vector<OrderItem> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(OrderItem{clone(*x.expr), x.desc});
    return out;
}

WindowSpec clone_spec(const WindowSpec& w) {
    WindowSpec out;
    out.name = w.name;
    out.partition = clone_all(w.partition);
    out.order = clone_order(w.order);
    out.frame = w.frame;
    return out;
}

} // namespace

ExprPtr clone(const Expr& e) {
    auto out = std::make_unique<Expr>();
    out->span = e.span;
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Literal>) {
                out->node = Literal{n.value};
            } else if constexpr (std::is_same_v<T, ColumnRef>) {
                out->node = ColumnRef{n.table, n.column};
            } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                out->node = BinaryExpr{n.op, clone(*n.lhs), clone(*n.rhs)};
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                out->node = UnaryExpr{n.op, clone(*n.operand)};
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                out->node = RowExpr{clone_all(n.items)};
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                out->node = InListExpr{clone(*n.probe), clone_all(n.items), n.negated};
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                CaseExpr c;
                c.operand = n.operand ? clone(*n.operand) : nullptr;
                for (const auto& a : n.arms)
                    c.arms.push_back(CaseExpr::Arm{clone(*a.when), clone(*a.then)});
                c.else_arm = n.else_arm ? clone(*n.else_arm) : nullptr;
                out->node = std::move(c);
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                out->node = FuncCallExpr{n.name, clone_all(n.args)};
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                out->node = AggregateExpr{n.func, n.arg ? clone(*n.arg) : nullptr, n.star};
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                out->node = WindowFuncExpr{n.func, clone_all(n.args), clone_spec(n.over)};
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                out->node = SubqueryExpr{clone(*n.query)};
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                out->node = InSubqueryExpr{clone(*n.probe), clone(*n.query), n.negated};
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                out->node = ExistsExpr{clone(*n.query), n.negated};
            }
        },
        e.node);
    return out;
}

FromItem clone(const FromItem& f) {
    FromItem out;
    out.kind = f.kind;
    out.table = f.table;
    out.subquery = f.subquery ? clone(*f.subquery) : nullptr;
    out.func = f.func;
    out.args = clone_all(f.args);
    out.bind_columns = f.bind_columns;
    out.alias = f.alias;
    out.column_aliases = f.column_aliases;
    out.span = f.span;
    return out;
}

QueryPtr clone(const Query& q) {
    auto out = std::make_unique<Query>();
    out->span = q.span;
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                SelectBlock b;
                b.distinct = n.distinct;
                b.distinct_on = clone_all(n.distinct_on);
                for (const auto& it : n.items)
                    b.items.push_back(SelectItem{clone(*it.expr), it.alias, it.span});
                b.select_star = n.select_star;
                for (const auto& s : n.from) {
                    FromStep step;
                    step.join = s.join;
                    step.lateral = s.lateral;
                    step.item = clone(s.item);
                    step.on = s.on ? clone(*s.on) : nullptr;
                    b.from.push_back(std::move(step));
                }
                b.where = n.where ? clone(*n.where) : nullptr;
                if (n.group_by) b.group_by = clone_all(*n.group_by);
                b.having = n.having ? clone(*n.having) : nullptr;
                for (const auto& w : n.windows)
                    b.windows.push_back(WindowDef{w.name, clone_all(w.partition), clone_order(w.order)});
                b.order_by = clone_order(n.order_by);
                b.offset = n.offset;
                b.limit = n.limit;
                out->node = std::move(b);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                SetOpQuery s;
                for (const auto& a : n.arms) s.arms.push_back(clone(*a));
                out->node = std::move(s);
            } else {
                WithQuery w;
                w.recursive = n.recursive;
                for (const auto& b : n.bindings)
                    w.bindings.push_back(WithQuery::Binding{b.name, b.columns, clone(*b.query), b.span});
                w.body = clone(*n.body);
                out->node = std::move(w);
            }
        },
        q.node);
    return out;
}

// ---------------------------------------------------------------------------
// structural equality

namespace {

bool equal_opt(const ExprPtr& a, const ExprPtr& b) {
    if (!a || !b) return !a && !b;
    return equal(*a, *b);
}

bool equal_all(const std::vector<ExprPtr>& a, const std::vector<ExprPtr>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!equal(*a[i], *b[i])) return false;
    return true;
}

bool equal_order(const std::vector<OrderItem>& a, const std::vector<OrderItem>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].desc != b[i].desc || !equal(*a[i].expr, *b[i].expr)) return false;
    return true;
}

bool equal_frame(const std::optional<Frame>& a, const std::optional<Frame>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    return a->unit == b->unit && a->lo.kind == b->lo.kind && a->lo.offset == b->lo.offset &&
           a->hi.kind == b->hi.kind && a->hi.offset == b->hi.offset;
}

bool equal_spec(const WindowSpec& a, const WindowSpec& b) {
    return a.name == b.name && equal_all(a.partition, b.partition) && equal_order(a.order, b.order) &&
           equal_frame(a.frame, b.frame);
}

bool equal_item(const FromItem& a, const FromItem& b) {
    if (a.kind != b.kind || a.alias != b.alias || a.column_aliases != b.column_aliases) return false;
    switch (a.kind) {
        case FromItem::Kind::Table: return a.table == b.table;
        case FromItem::Kind::Subquery: return equal(*a.subquery, *b.subquery);
        case FromItem::Kind::TableFunc: return a.func == b.func && equal_all(a.args, b.args);
        case FromItem::Kind::Bind: return a.bind_columns == b.bind_columns;
    }
    return false;
}

} // namespace

bool equal(const Expr& a, const Expr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, Literal>) {
                return x.value == y.value;
            } else if constexpr (std::is_same_v<T, ColumnRef>) {
                return x.table == y.table && x.column == y.column;
            } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                return x.op == y.op && equal(*x.lhs, *y.lhs) && equal(*x.rhs, *y.rhs);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                return x.op == y.op && equal(*x.operand, *y.operand);
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                return equal_all(x.items, y.items);
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                return x.negated == y.negated && equal(*x.probe, *y.probe) && equal_all(x.items, y.items);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (x.arms.size() != y.arms.size()) return false;
                if (!equal_opt(x.operand, y.operand) || !equal_opt(x.else_arm, y.else_arm)) return false;
                for (size_t i = 0; i < x.arms.size(); ++i)
                    if (!equal(*x.arms[i].when, *y.arms[i].when) || !equal(*x.arms[i].then, *y.arms[i].then))
                        return false;
                return true;
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                return x.name == y.name && equal_all(x.args, y.args);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                return x.func == y.func && x.star == y.star && equal_opt(x.arg, y.arg);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                return x.func == y.func && equal_all(x.args, y.args) && equal_spec(x.over, y.over);
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                return equal(*x.query, *y.query);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                return x.negated == y.negated && equal(*x.probe, *y.probe) && equal(*x.query, *y.query);
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                return x.negated == y.negated && equal(*x.query, *y.query);
            }
        },
        a.node);
}

bool equal(const Query& a, const Query& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, SelectBlock>) {
                if (x.distinct != y.distinct || x.select_star != y.select_star) return false;
                if (!equal_all(x.distinct_on, y.distinct_on)) return false;
                if (x.items.size() != y.items.size()) return false;
                for (size_t i = 0; i < x.items.size(); ++i)
                    if (x.items[i].alias != y.items[i].alias || !equal(*x.items[i].expr, *y.items[i].expr))
                        return false;
                if (x.from.size() != y.from.size()) return false;
                for (size_t i = 0; i < x.from.size(); ++i) {
                    const auto& f = x.from[i];
                    const auto& g = y.from[i];
                    if (f.join != g.join || f.lateral != g.lateral || !equal_item(f.item, g.item))
                        return false;
                    if (!equal_opt(f.on, g.on)) return false;
                }
                if (!equal_opt(x.where, y.where) || !equal_opt(x.having, y.having)) return false;
                if (x.group_by.has_value() != y.group_by.has_value()) return false;
                if (x.group_by && !equal_all(*x.group_by, *y.group_by)) return false;
                if (x.windows.size() != y.windows.size()) return false;
                for (size_t i = 0; i < x.windows.size(); ++i) {
                    const auto& v = x.windows[i];
                    const auto& w = y.windows[i];
                    if (v.name != w.name || !equal_all(v.partition, w.partition) ||
                        !equal_order(v.order, w.order))
                        return false;
                }
                if (!equal_order(x.order_by, y.order_by)) return false;
                if (x.offset != y.offset) return false;
                if (x.limit.has_value() != y.limit.has_value()) return false;
                if (x.limit && x.limit->count != y.limit->count) return false;
                return true;
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                if (x.arms.size() != y.arms.size()) return false;
                for (size_t i = 0; i < x.arms.size(); ++i)
                    if (!equal(*x.arms[i], *y.arms[i])) return false;
                return true;
            } else {
                if (x.recursive != y.recursive || x.bindings.size() != y.bindings.size()) return false;
                for (size_t i = 0; i < x.bindings.size(); ++i) {
                    if (x.bindings[i].name != y.bindings[i].name ||
                        x.bindings[i].columns != y.bindings[i].columns ||
                        !equal(*x.bindings[i].query, *y.bindings[i].query))
                        return false;
                }
                return equal(*x.body, *y.body);
            }
        },
        a.node);
}

// ---------------------------------------------------------------------------
// walking

void walk_exprs(const Expr& e, const std::function<bool(const Expr&)>& fn) {
    if (!fn(e)) return;
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, BinaryExpr>) {
                walk_exprs(*n.lhs, fn);
                walk_exprs(*n.rhs, fn);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                walk_exprs(*n.operand, fn);
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                for (const auto& x : n.items) walk_exprs(*x, fn);
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                walk_exprs(*n.probe, fn);
                for (const auto& x : n.items) walk_exprs(*x, fn);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) walk_exprs(*n.operand, fn);
                for (const auto& a : n.arms) {
                    walk_exprs(*a.when, fn);
                    walk_exprs(*a.then, fn);
                }
                if (n.else_arm) walk_exprs(*n.else_arm, fn);
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                for (const auto& x : n.args) walk_exprs(*x, fn);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.arg) walk_exprs(*n.arg, fn);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                for (const auto& x : n.args) walk_exprs(*x, fn);
                for (const auto& x : n.over.partition) walk_exprs(*x, fn);
                for (const auto& o : n.over.order) walk_exprs(*o.expr, fn);
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                walk_exprs(*n.query, fn);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                walk_exprs(*n.probe, fn);
                walk_exprs(*n.query, fn);
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                walk_exprs(*n.query, fn);
            }
        },
        e.node);
}

void walk_exprs(const Query& q, const std::function<bool(const Expr&)>& fn) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                for (const auto& x : n.distinct_on) walk_exprs(*x, fn);
                for (const auto& it : n.items) walk_exprs(*it.expr, fn);
                for (const auto& s : n.from) {
                    for (const auto& a : s.item.args) walk_exprs(*a, fn);
                    if (s.item.subquery) walk_exprs(*s.item.subquery, fn);
                    if (s.on) walk_exprs(*s.on, fn);
                }
                if (n.where) walk_exprs(*n.where, fn);
                if (n.group_by)
                    for (const auto& x : *n.group_by) walk_exprs(*x, fn);
                if (n.having) walk_exprs(*n.having, fn);
                for (const auto& w : n.windows) {
                    for (const auto& x : w.partition) walk_exprs(*x, fn);
                    for (const auto& o : w.order) walk_exprs(*o.expr, fn);
                }
                for (const auto& o : n.order_by) walk_exprs(*o.expr, fn);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (const auto& a : n.arms) walk_exprs(*a, fn);
            } else {
                for (const auto& b : n.bindings) walk_exprs(*b.query, fn);
                walk_exprs(*n.body, fn);
            }
        },
        q.node);
}

void collect_identifiers(const Query& q, std::vector<std::string>& out) {
    walk_exprs(q, [&](const Expr& e) {
        if (const auto* c = std::get_if<ColumnRef>(&e.node)) {
            if (!c->table.empty()) out.push_back(c->table);
            out.push_back(c->column);
        } else if (const auto* w = std::get_if<WindowFuncExpr>(&e.node)) {
            if (!w->over.name.empty()) out.push_back(w->over.name);
        }
        return true;
    });
    // aliases, window names, CTE names
    std::function<void(const Query&)> rec = [&](const Query& query) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    for (const auto& it : n.items)
                        if (!it.alias.empty()) out.push_back(it.alias);
                    for (const auto& s : n.from) {
                        out.push_back(s.item.alias);
                        out.push_back(s.item.table);
                        for (const auto& c : s.item.column_aliases) out.push_back(c);
                        if (s.item.subquery) rec(*s.item.subquery);
                    }
                    for (const auto& w : n.windows) out.push_back(w.name);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    for (const auto& a : n.arms) rec(*a);
                } else {
                    for (const auto& b : n.bindings) {
                        out.push_back(b.name);
                        rec(*b.query);
                    }
                    rec(*n.body);
                }
            },
            query.node);
    };
    rec(q);
}

bool is_plain_aggregate_name(const std::string& name) {
    return name == "sum" || name == "count" || name == "avg" || name == "min" || name == "max" ||
           name == "bool_or" || name == "bool_and" || name == "ds_agg" || name == "ds_first" ||
           name == "rid_agg";
}

bool is_window_func_name(const std::string& name) {
    return is_plain_aggregate_name(name) || name == "rank" || name == "first_value" ||
           name == "ds_first_value";
}

ExprPtr make_literal_int(int64_t v) {
    auto e = std::make_unique<Expr>();
    e->node = Literal{v};
    return e;
}

ExprPtr make_literal_bool(bool v) {
    auto e = std::make_unique<Expr>();
    e->node = Literal{v};
    return e;
}

ExprPtr make_column_ref(const std::string& table, const std::string& column) {
    auto e = std::make_unique<Expr>();
    e->node = ColumnRef{table, column};
    return e;
}

ExprPtr make_func_call(const std::string& name, std::vector<ExprPtr> args) {
    auto e = std::make_unique<Expr>();
    e->node = FuncCallExpr{name, std::move(args)};
    return e;
}

ExprPtr make_binary(BinOp op, ExprPtr lhs, ExprPtr rhs) {
    auto e = std::make_unique<Expr>();
    e->node = BinaryExpr{op, std::move(lhs), std::move(rhs)};
    return e;
}

FreshNames::FreshNames(const Query& q) {
    collect_identifiers(q, used_);
    std::sort(used_.begin(), used_.end());
    used_.erase(std::unique(used_.begin(), used_.end()), used_.end());
}

void FreshNames::reserve(const std::string& name) {
    if (!in_use(name)) used_.push_back(name);
}

bool FreshNames::in_use(const std::string& name) const {
    return std::find(used_.begin(), used_.end(), name) != used_.end();
}

std::string FreshNames::fresh(const std::string& base) {
    if (!in_use(base)) {
        used_.push_back(base);
        return base;
    }
    for (int i = 1;; ++i) {
        std::string cand = base + std::to_string(i);
        if (!in_use(cand)) {
            used_.push_back(cand);
            return cand;
        }
    }
}

} // namespace sqlprov
