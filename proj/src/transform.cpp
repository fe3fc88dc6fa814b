#include "sqlprov/transform.hpp"

#include "sqlprov/normalize.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <map>

namespace sqlprov {

const char* site_kind_name(SiteKind k) {
    switch (k) {
        case SiteKind::Join: return "JOIN";
        case SiteKind::Grp: return "GRP";
        case SiteKind::Win: return "WIN";
        case SiteKind::Case: return "CASE";
        case SiteKind::Left: return "LEFT";
        case SiteKind::Filter: return "FILTER";
        case SiteKind::Tblf: return "TBLF";
    }
    return "?";
}

namespace {

[[noreturn]] void tx_error(const std::string& msg, SourceSpan span = {}) {
    throw SqlError(ErrorKind::Unsupported, msg, span);
}

ExprPtr mk_call(const std::string& name, std::vector<ExprPtr> args) {
    return make_func_call(name, std::move(args));
}

ExprPtr mk_int(int64_t v) { return make_literal_int(v); }

ExprPtr mk_ref(const std::string& t, const std::string& c) { return make_column_ref(t, c); }

ExprPtr ds_empty_expr() { return mk_call("ds_empty", {}); }

ExprPtr ds_union_expr(std::vector<ExprPtr> parts) {
    if (parts.empty()) return ds_empty_expr();
    if (parts.size() == 1) return std::move(parts[0]);
    return mk_call("ds_union", std::move(parts));
}

ExprPtr ds_why_expr(ExprPtr inner) {
    std::vector<ExprPtr> args;
    args.push_back(std::move(inner));
    return mk_call("ds_why", std::move(args));
}

ExprPtr mk_agg(const std::string& func, ExprPtr arg) {
    auto e = std::make_unique<Expr>();
    e->node = AggregateExpr{func, std::move(arg), false};
    return e;
}

ExprPtr mk_winfunc(const std::string& func, ExprPtr arg, const std::string& window,
                   std::optional<Frame> frame) {
    auto e = std::make_unique<Expr>();
    WindowFuncExpr w;
    w.func = func;
    if (arg) w.args.push_back(std::move(arg));
    w.over.name = window;
    w.over.frame = frame;
    e->node = std::move(w);
    return e;
}

SelectItem mk_item(ExprPtr e, const std::string& alias) {
    SelectItem it;
    it.expr = std::move(e);
    it.alias = alias;
    return it;
}

FromStep mk_step(FromItem item, bool lateral = false) {
    FromStep s;
    s.lateral = lateral;
    s.item = std::move(item);
    return s;
}

FromItem mk_subquery_item(QueryPtr q, const std::string& alias,
                          std::vector<std::string> cols = {}) {
    FromItem f;
    f.kind = FromItem::Kind::Subquery;
    f.subquery = std::move(q);
    f.alias = alias;
    f.column_aliases = std::move(cols);
    return f;
}

FromItem mk_tablefunc_item(const std::string& func, std::vector<ExprPtr> args,
                           const std::string& alias, std::vector<std::string> cols) {
    FromItem f;
    f.kind = FromItem::Kind::TableFunc;
    f.func = func;
    f.args = std::move(args);
    f.alias = alias;
    f.column_aliases = std::move(cols);
    return f;
}

QueryPtr mk_query(SelectBlock b, SourceSpan span = {}) {
    auto q = std::make_unique<Query>();
    q->span = span;
    q->node = std::move(b);
    return q;
}

/// LATERAL (SELECT e AS d) AS alias
FromStep mk_scalar_lateral(ExprPtr e, const std::string& alias) {
    SelectBlock b;
    b.items.push_back(mk_item(std::move(e), "d"));
    return mk_step(mk_subquery_item(mk_query(std::move(b)), alias), true);
}

// aliases an expression depends on, following subqueries (free references
// and the bindings their BIND items consume)
void expr_referenced_aliases(const Expr& e, std::set<std::string>& out);

void query_referenced_aliases(const Query& q, std::set<std::string> bound,
                              std::set<std::string>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                std::set<std::string> inner = bound;
                for (const auto& s : n.from) {
                    if (s.item.kind == FromItem::Kind::Bind && !bound.count(s.item.alias))
                        out.insert(s.item.alias);
                    inner.insert(s.item.alias);
                }
                auto scan = [&](const Expr& e2) {
                    walk_exprs(e2, [&](const Expr& x) {
                        if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                            if (!ref->table.empty() && !inner.count(ref->table))
                                out.insert(ref->table);
                        } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                            query_referenced_aliases(*sq->query, inner, out);
                            return false;
                        } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                            query_referenced_aliases(*in->query, inner, out);
                        } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                            query_referenced_aliases(*ex->query, inner, out);
                            return false;
                        }
                        return true;
                    });
                };
                for (const auto& it : n.items) scan(*it.expr);
                std::set<std::string> so_far = bound;
                for (const auto& s : n.from) {
                    for (const auto& a : s.item.args) scan(*a);
                    if (s.item.subquery)
                        query_referenced_aliases(*s.item.subquery, s.lateral ? so_far : bound, out);
                    if (s.on) scan(*s.on);
                    so_far.insert(s.item.alias);
                }
                if (n.where) scan(*n.where);
                if (n.group_by)
                    for (const auto& g : *n.group_by) scan(*g);
                if (n.having) scan(*n.having);
                for (const auto& w : n.windows) {
                    for (const auto& p : w.partition) scan(*p);
                    for (const auto& o : w.order) scan(*o.expr);
                }
                for (const auto& d : n.distinct_on) scan(*d);
                for (const auto& o : n.order_by) scan(*o.expr);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (const auto& a : n.arms) query_referenced_aliases(*a, bound, out);
            } else {
                for (const auto& b : n.bindings) query_referenced_aliases(*b.query, bound, out);
                query_referenced_aliases(*n.body, bound, out);
            }
        },
        q.node);
}

void expr_referenced_aliases(const Expr& e, std::set<std::string>& out) {
    walk_exprs(e, [&](const Expr& x) {
        if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
            if (!ref->table.empty()) out.insert(ref->table);
        } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
            query_referenced_aliases(*sq->query, {}, out);
            return false;
        } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
            query_referenced_aliases(*in->query, {}, out);
        } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
            query_referenced_aliases(*ex->query, {}, out);
            return false;
        }
        return true;
    });
}

// ---------------------------------------------------------------------------

struct ExprPair {
    ExprPtr p1;
    ExprPtr p2;
};

struct QueryPair {
    QueryPtr p1;
    QueryPtr p2;
    std::vector<std::string> columns;
};

struct WindowBinding {
    std::string lateral_alias;
    std::string y_alias;
};

struct Transformer {
    TransformOptions opts;
    FreshNames names;
    std::vector<Site> sites;
    std::set<std::string> rules;

    explicit Transformer(const Query& q, TransformOptions o) : opts(o), names(q) {}

    bool row_mode() const { return opts.granularity == Granularity::Row; }

    int new_site(SiteKind kind, int arity, SourceSpan span) {
        Site s;
        s.id = static_cast<int>(sites.size()) + 1;
        s.kind = kind;
        s.arity = arity;
        s.span = span;
        sites.push_back(s);
        return s.id;
    }

    // ==== expressions ======================================================

    ExprPair tx_expr(const Expr& e) {
        return std::visit(
            [&](const auto& n) -> ExprPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Literal>) {
                    rules.insert("Lit");
                    return {clone(e), ds_empty_expr()};
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    rules.insert("Col");
                    ExprPtr dep = row_mode() ? mk_ref(n.table, "prov") : clone(e);
                    return {clone(e), std::move(dep)};
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    rules.insert("Builtin");
                    auto l = tx_expr(*n.lhs);
                    auto r = tx_expr(*n.rhs);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = BinaryExpr{n.op, std::move(l.p1), std::move(r.p1)};
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(l.p2));
                    parts.push_back(std::move(r.p2));
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    rules.insert("Builtin");
                    auto o = tx_expr(*n.operand);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = UnaryExpr{n.op, std::move(o.p1)};
                    return {std::move(p1), std::move(o.p2)};
                } else if constexpr (std::is_same_v<T, RowExpr>) {
                    rules.insert("Builtin");
                    RowExpr r1;
                    std::vector<ExprPtr> parts;
                    for (const auto& x : n.items) {
                        auto p = tx_expr(*x);
                        r1.items.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(r1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    rules.insert("Builtin");
                    auto probe = tx_expr(*n.probe);
                    InListExpr i1;
                    i1.probe = std::move(probe.p1);
                    i1.negated = n.negated;
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(probe.p2));
                    for (const auto& x : n.items) {
                        auto p = tx_expr(*x);
                        i1.items.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(i1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    return tx_case(n, e.span);
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    rules.insert("Builtin");
                    FuncCallExpr f1;
                    f1.name = n.name;
                    std::vector<ExprPtr> parts;
                    for (const auto& x : n.args) {
                        auto p = tx_expr(*x);
                        f1.args.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(f1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                    tx_error("aggregate outside a group layer", e.span);
                } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                    tx_error("window function outside a window layer", e.span);
                } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                    rules.insert("NestedSubquery");
                    QueryPair q = tx_query(*n.query);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = SubqueryExpr{wrap_value_query(std::move(q.p1), q.columns, e.span)};
                    return {std::move(p1), wrap_dep_subquery(std::move(q.p2), q.columns, e.span)};
                } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                    rules.insert("NestedSubquery");
                    auto probe = tx_expr(*n.probe);
                    QueryPair q = tx_query(*n.query);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    InSubqueryExpr i1;
                    i1.probe = std::move(probe.p1);
                    i1.negated = n.negated;
                    i1.query = wrap_value_query(std::move(q.p1), q.columns, e.span);
                    p1->node = std::move(i1);
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(probe.p2));
                    parts.push_back(wrap_dep_subquery(std::move(q.p2), q.columns, e.span));
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else {
                    static_assert(std::is_same_v<T, ExistsExpr>);
                    rules.insert("NestedSubquery");
                    QueryPair q = tx_query(*n.query);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node =
                        ExistsExpr{wrap_value_query(std::move(q.p1), q.columns, e.span), n.negated};
                    return {std::move(p1), wrap_dep_subquery(std::move(q.p2), q.columns, e.span)};
                }
            },
            e.node);
    }

    QueryPtr wrap_value_query(QueryPtr q1, const std::vector<std::string>& columns,
                              SourceSpan span) {
        std::string t = names.fresh("t");
        SelectBlock b;
        std::string col = columns.empty() ? std::string("c") : columns[0];
        b.items.push_back(mk_item(mk_ref(t, col), col));
        b.from.push_back(mk_step(mk_subquery_item(std::move(q1), t)));
        return mk_query(std::move(b), span);
    }

    ExprPtr wrap_dep_subquery(QueryPtr q2, const std::vector<std::string>& columns,
                              SourceSpan span) {
        std::string t = names.fresh("t");
        SelectBlock b;
        std::string col =
            row_mode() ? std::string("prov") : (columns.empty() ? std::string("c") : columns[0]);
        b.items.push_back(mk_item(mk_agg("ds_agg", mk_ref(t, col)), "d"));
        b.from.push_back(mk_step(mk_subquery_item(std::move(q2), t)));
        auto e = std::make_unique<Expr>();
        e->span = span;
        e->node = SubqueryExpr{mk_query(std::move(b), span)};
        return e;
    }

    ExprPair tx_case(const CaseExpr& c, SourceSpan span) {
        rules.insert("Case");
        if (c.operand) tx_error("simple CASE must be normalized away", span);
        std::set<std::string> refs;
        for (const auto& arm : c.arms) {
            expr_referenced_aliases(*arm.when, refs);
            expr_referenced_aliases(*arm.then, refs);
        }
        if (c.else_arm) expr_referenced_aliases(*c.else_arm, refs);
        if (refs.size() != 1)
            tx_error("CASE must reference exactly one row variable after normalization", span);
        std::string v = *refs.begin();
        int site = new_site(SiteKind::Case, 0, span);

        std::vector<ExprPair> whens, thens;
        for (const auto& arm : c.arms) {
            whens.push_back(tx_expr(*arm.when));
            thens.push_back(tx_expr(*arm.then));
        }
        ExprPair else_pair;
        if (c.else_arm) else_pair = tx_expr(*c.else_arm);

        CaseExpr branch;
        for (size_t i = 0; i < whens.size(); ++i)
            branch.arms.push_back(
                CaseExpr::Arm{std::move(whens[i].p1), mk_int(static_cast<int64_t>(i + 1))});
        branch.else_arm = mk_int(0);
        auto branch_expr = std::make_unique<Expr>();
        branch_expr->node = std::move(branch);

        CaseExpr c1;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(v, kRhoColumn));
            args.push_back(std::move(branch_expr));
            c1.operand = mk_call("logwrite_case", std::move(args));
        }
        for (size_t i = 0; i < thens.size(); ++i)
            c1.arms.push_back(
                CaseExpr::Arm{mk_int(static_cast<int64_t>(i + 1)), std::move(thens[i].p1)});
        if (c.else_arm) c1.else_arm = std::move(else_pair.p1);
        auto p1 = std::make_unique<Expr>();
        p1->span = span;
        p1->node = std::move(c1);

        CaseExpr c2;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(v, kRhoColumn));
            c2.operand = mk_call("logread_case", std::move(args));
        }
        auto guard_whys = [&](size_t upto) -> ExprPtr {
            std::vector<ExprPtr> parts;
            for (size_t i = 0; i < upto; ++i) parts.push_back(clone(*whens[i].p2));
            return ds_why_expr(ds_union_expr(std::move(parts)));
        };
        for (size_t i = 0; i < thens.size(); ++i) {
            std::vector<ExprPtr> parts;
            parts.push_back(std::move(thens[i].p2));
            if (opts.why) parts.push_back(guard_whys(i + 1));
            c2.arms.push_back(
                CaseExpr::Arm{mk_int(static_cast<int64_t>(i + 1)), ds_union_expr(std::move(parts))});
        }
        {
            std::vector<ExprPtr> parts;
            if (c.else_arm) parts.push_back(std::move(else_pair.p2));
            if (opts.why) parts.push_back(guard_whys(whens.size()));
            c2.else_arm = ds_union_expr(std::move(parts));
        }
        auto p2 = std::make_unique<Expr>();
        p2->span = span;
        p2->node = std::move(c2);
        return {std::move(p1), std::move(p2)};
    }

    bool contains_group_aggregate(const Expr& e) {
        bool found = false;
        walk_exprs(e, [&](const Expr& x) {
            if (x.is<AggregateExpr>()) {
                found = true;
                return false;
            }
            if (x.is<SubqueryExpr>() || x.is<InSubqueryExpr>() || x.is<ExistsExpr>()) return false;
            return true;
        });
        return found;
    }

    /// Group-layer item: aggregates collect the dependencies of every member
    /// evaluation; key expressions resolve against the representative (first)
    /// member; closed parts translate directly.
    ExprPair tx_group_item(const Expr& e) {
        return std::visit(
            [&](const auto& n) -> ExprPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, AggregateExpr>) {
                    rules.insert("Agg");
                    ExprPair arg;
                    if (n.arg) arg = tx_expr(*n.arg);
                    else arg = ExprPair{mk_int(1), ds_empty_expr()};
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = AggregateExpr{n.func, std::move(arg.p1), false};
                    return {std::move(p1), mk_agg("ds_agg", std::move(arg.p2))};
                } else if constexpr (std::is_same_v<T, Literal>) {
                    rules.insert("Lit");
                    return {clone(e), ds_empty_expr()};
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    rules.insert("Col");
                    ExprPtr dep = row_mode() ? mk_ref(n.table, "prov") : clone(e);
                    return {clone(e), mk_agg("ds_first", std::move(dep))};
                } else if constexpr (std::is_same_v<T, SubqueryExpr> ||
                                     std::is_same_v<T, InSubqueryExpr> ||
                                     std::is_same_v<T, ExistsExpr>) {
                    std::set<std::string> refs;
                    expr_referenced_aliases(e, refs);
                    if (!refs.empty())
                        tx_error("correlated subquery in a grouped select item", e.span);
                    return tx_expr(e);
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    tx_error("CASE under grouping is not supported", e.span);
                } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                    tx_error("window function under grouping", e.span);
                } else {
                    // builtins over group-level parts
                    std::set<std::string> refs;
                    expr_referenced_aliases(e, refs);
                    if (!refs.empty() && !contains_group_aggregate(e)) {
                        auto pair = tx_expr(e);
                        return {std::move(pair.p1), mk_agg("ds_first", std::move(pair.p2))};
                    }
                    return tx_group_composite(e);
                }
            },
            e.node);
    }

    ExprPair tx_group_composite(const Expr& e) {
        return std::visit(
            [&](const auto& n) -> ExprPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, BinaryExpr>) {
                    auto l = tx_group_item(*n.lhs);
                    auto r = tx_group_item(*n.rhs);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = BinaryExpr{n.op, std::move(l.p1), std::move(r.p1)};
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(l.p2));
                    parts.push_back(std::move(r.p2));
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    auto o = tx_group_item(*n.operand);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = UnaryExpr{n.op, std::move(o.p1)};
                    return {std::move(p1), std::move(o.p2)};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    FuncCallExpr f1;
                    f1.name = n.name;
                    std::vector<ExprPtr> parts;
                    for (const auto& x : n.args) {
                        auto p = tx_group_item(*x);
                        f1.args.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(f1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    auto probe = tx_group_item(*n.probe);
                    InListExpr i1;
                    i1.probe = std::move(probe.p1);
                    i1.negated = n.negated;
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(probe.p2));
                    for (const auto& x : n.items) {
                        auto p = tx_group_item(*x);
                        i1.items.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(i1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else {
                    tx_error("unsupported composite in a grouped select item", e.span);
                }
            },
            e.node);
    }

    /// HAVING translates once: phase 1 keeps the predicate, the why-set
    /// collects the per-member dependencies of its aggregate arguments and
    /// group keys.
    struct HavingPair {
        ExprPtr p1;
        ExprPtr row_deps;
    };

    HavingPair tx_having(const Expr& e) {
        return std::visit(
            [&](const auto& n) -> HavingPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, AggregateExpr>) {
                    rules.insert("Agg");
                    ExprPair arg;
                    if (n.arg) arg = tx_expr(*n.arg);
                    else arg = ExprPair{mk_int(1), ds_empty_expr()};
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = AggregateExpr{n.func, std::move(arg.p1), false};
                    return {std::move(p1), std::move(arg.p2)};
                } else if constexpr (std::is_same_v<T, Literal>) {
                    return {clone(e), ds_empty_expr()};
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    ExprPtr dep = row_mode() ? mk_ref(n.table, "prov") : clone(e);
                    return {clone(e), std::move(dep)};
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    auto l = tx_having(*n.lhs);
                    auto r = tx_having(*n.rhs);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = BinaryExpr{n.op, std::move(l.p1), std::move(r.p1)};
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(l.row_deps));
                    parts.push_back(std::move(r.row_deps));
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    auto o = tx_having(*n.operand);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = UnaryExpr{n.op, std::move(o.p1)};
                    return {std::move(p1), std::move(o.row_deps)};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    FuncCallExpr f1;
                    f1.name = n.name;
                    std::vector<ExprPtr> parts;
                    for (const auto& x : n.args) {
                        auto p = tx_having(*x);
                        f1.args.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.row_deps));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(f1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    auto probe = tx_having(*n.probe);
                    InListExpr i1;
                    i1.probe = std::move(probe.p1);
                    i1.negated = n.negated;
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(probe.row_deps));
                    for (const auto& x : n.items) {
                        auto p = tx_having(*x);
                        i1.items.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.row_deps));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(i1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, SubqueryExpr> ||
                                     std::is_same_v<T, InSubqueryExpr> ||
                                     std::is_same_v<T, ExistsExpr>) {
                    std::set<std::string> refs;
                    expr_referenced_aliases(e, refs);
                    if (!refs.empty()) tx_error("correlated subquery in HAVING", e.span);
                    auto pair = tx_expr(e);
                    return {std::move(pair.p1), std::move(pair.p2)};
                } else {
                    tx_error("unsupported expression in HAVING", e.span);
                }
            },
            e.node);
    }

    // ==== queries ==========================================================

    QueryPair tx_query(const Query& q) {
        return std::visit(
            [&](const auto& n) -> QueryPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    return tx_block(n, q.span);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    return tx_setop(n, q.span);
                } else {
                    return tx_with(n, q.span);
                }
            },
            q.node);
    }

    QueryPair tx_with(const WithQuery& w, SourceSpan span) {
        rules.insert("With");
        WithQuery w1, w2;
        w1.recursive = w2.recursive = w.recursive;
        for (const auto& b : w.bindings) {
            QueryPair pair = tx_query(*b.query);
            WithQuery::Binding b1, b2;
            b1.name = b2.name = b.name;
            b1.span = b2.span = b.span;
            if (!b.columns.empty()) {
                b1.columns.push_back(kRhoColumn);
                for (const auto& c : b.columns) b1.columns.push_back(c);
                if (row_mode()) b2.columns = {kRhoColumn, "prov"};
                else b2.columns = b1.columns;
            }
            b1.query = std::move(pair.p1);
            b2.query = std::move(pair.p2);
            w1.bindings.push_back(std::move(b1));
            w2.bindings.push_back(std::move(b2));
        }
        QueryPair body = tx_query(*w.body);
        w1.body = std::move(body.p1);
        w2.body = std::move(body.p2);
        auto q1 = std::make_unique<Query>();
        q1->span = span;
        q1->node = std::move(w1);
        auto q2 = std::make_unique<Query>();
        q2->span = span;
        q2->node = std::move(w2);
        return {std::move(q1), std::move(q2), std::move(body.columns)};
    }

    /// Every set-operation arm passes through a FILTER site: arms and
    /// recursion steps emit fresh row ids instead of passing input ids
    /// through, which keeps ids unique across the union.
    QueryPair tx_setop(const SetOpQuery& s, SourceSpan span) {
        SetOpQuery s1, s2;
        std::vector<std::string> columns;
        for (size_t i = 0; i < s.arms.size(); ++i) {
            QueryPair arm = tx_query(*s.arms[i]);
            if (i == 0) columns = arm.columns;
            int site = new_site(SiteKind::Filter, 0, s.arms[i]->span);
            std::string t = names.fresh("t");
            {
                SelectBlock b;
                std::vector<ExprPtr> args;
                args.push_back(mk_int(site));
                args.push_back(mk_ref(t, kRhoColumn));
                b.items.push_back(mk_item(mk_call("logwrite_filter", std::move(args)), kRhoColumn));
                for (const auto& c : arm.columns) b.items.push_back(mk_item(mk_ref(t, c), c));
                b.from.push_back(mk_step(mk_subquery_item(std::move(arm.p1), t)));
                s1.arms.push_back(mk_query(std::move(b), span));
            }
            {
                std::string f = names.fresh("f");
                SelectBlock b;
                b.items.push_back(mk_item(mk_ref(f, kRhoColumn), kRhoColumn));
                if (row_mode()) {
                    b.items.push_back(mk_item(mk_ref(t, "prov"), "prov"));
                } else {
                    for (const auto& c : arm.columns) b.items.push_back(mk_item(mk_ref(t, c), c));
                }
                b.from.push_back(mk_step(mk_subquery_item(std::move(arm.p2), t)));
                std::vector<ExprPtr> args;
                args.push_back(mk_int(site));
                args.push_back(mk_ref(t, kRhoColumn));
                b.from.push_back(mk_step(
                    mk_tablefunc_item("logread_filter", std::move(args), f, {kRhoColumn}), true));
                s2.arms.push_back(mk_query(std::move(b), span));
            }
        }
        auto q1 = std::make_unique<Query>();
        q1->span = span;
        q1->node = std::move(s1);
        auto q2 = std::make_unique<Query>();
        q2->span = span;
        q2->node = std::move(s2);
        return {std::move(q1), std::move(q2), std::move(columns)};
    }

    struct FromPair {
        FromStep s1;
        FromStep s2;
    };

    FromPair tx_from_item(const FromStep& step) {
        const FromItem& item = step.item;
        FromPair out;
        out.s1.join = out.s2.join = step.join;
        out.s1.lateral = out.s2.lateral = step.lateral;
        switch (item.kind) {
            case FromItem::Kind::Table: {
                rules.insert("Table");
                if (!item.column_aliases.empty())
                    tx_error("column aliases on table references are not supported", item.span);
                out.s1.item = clone(item);
                out.s2.item = clone(item);
                return out;
            }
            case FromItem::Kind::Subquery: {
                QueryPair sub = tx_query(*item.subquery);
                if (!item.column_aliases.empty())
                    tx_error("column aliases on subqueries are not supported after normalization",
                             item.span);
                out.s1.item = mk_subquery_item(std::move(sub.p1), item.alias);
                out.s2.item = mk_subquery_item(std::move(sub.p2), item.alias);
                return out;
            }
            case FromItem::Kind::TableFunc: {
                rules.insert("TblFun");
                int site = new_site(SiteKind::Tblf, 0, item.span);
                std::vector<std::string> cols = item.column_aliases;
                if (cols.empty()) cols.push_back(item.alias);
                std::string t = names.fresh("tf");
                std::vector<ExprPtr> fargs;
                std::vector<ExprPtr> depargs;
                for (const auto& a : item.args) {
                    auto p = tx_expr(*a);
                    fargs.push_back(std::move(p.p1));
                    depargs.push_back(std::move(p.p2));
                }
                {
                    SelectBlock b;
                    std::vector<ExprPtr> args;
                    args.push_back(mk_int(site));
                    b.items.push_back(
                        mk_item(mk_call("logwrite_tblf", std::move(args)), kRhoColumn));
                    for (const auto& c : cols) b.items.push_back(mk_item(mk_ref(t, c), c));
                    b.from.push_back(
                        mk_step(mk_tablefunc_item(item.func, std::move(fargs), t, cols)));
                    out.s1.item = mk_subquery_item(mk_query(std::move(b), item.span), item.alias);
                }
                {
                    std::string s = names.fresh("tfr");
                    std::string ar = names.fresh("args");
                    SelectBlock b2;
                    b2.items.push_back(mk_item(mk_ref(s, kRhoColumn), kRhoColumn));
                    if (row_mode()) {
                        b2.items.push_back(mk_item(mk_ref(ar, "d"), "prov"));
                    } else {
                        for (const auto& c : cols) b2.items.push_back(mk_item(mk_ref(ar, "d"), c));
                    }
                    SelectBlock argsb;
                    argsb.items.push_back(mk_item(ds_union_expr(std::move(depargs)), "d"));
                    b2.from.push_back(mk_step(mk_subquery_item(mk_query(std::move(argsb)), ar)));
                    std::vector<ExprPtr> rargs;
                    rargs.push_back(mk_int(site));
                    b2.from.push_back(mk_step(
                        mk_tablefunc_item("logread_tblf", std::move(rargs), s, {kRhoColumn})));
                    out.s2.item = mk_subquery_item(mk_query(std::move(b2), item.span), item.alias);
                }
                return out;
            }
            case FromItem::Kind::Bind: {
                rules.insert("Bind");
                SelectBlock b1, b2;
                b1.items.push_back(mk_item(mk_ref(item.alias, kRhoColumn), kRhoColumn));
                b2.items.push_back(mk_item(mk_ref(item.alias, kRhoColumn), kRhoColumn));
                for (const auto& c : item.bind_columns)
                    b1.items.push_back(mk_item(mk_ref(item.alias, c), c));
                if (row_mode()) {
                    b2.items.push_back(mk_item(mk_ref(item.alias, "prov"), "prov"));
                } else {
                    for (const auto& c : item.bind_columns)
                        b2.items.push_back(mk_item(mk_ref(item.alias, c), c));
                }
                out.s1.item = mk_subquery_item(mk_query(std::move(b1), item.span), item.alias);
                out.s2.item = mk_subquery_item(mk_query(std::move(b2), item.span), item.alias);
                return out;
            }
        }
        tx_error("unreachable", item.span);
    }

    QueryPair tx_block(const SelectBlock& b, SourceSpan span) {
        const bool grp = b.group_by.has_value() || b.having != nullptr;
        const bool win = !b.windows.empty();
        const bool dst = !b.distinct_on.empty();
        const bool ord = !b.order_by.empty() || b.offset.has_value() || b.limit.has_value();
        bool left = false;
        for (const auto& s : b.from)
            if (s.join == FromStep::Join::Left) left = true;

        if (left) return tx_left(b, span);
        if (grp) return tx_group(b, span);
        if (win) return tx_window(b, span);
        if (dst) return tx_distinct(b, span);
        if (ord) return tx_orderby(b, span);
        if (b.from.size() > 1 || b.where) return tx_join(b, span);
        return tx_map(b, span);
    }

    std::vector<std::string> item_names(const SelectBlock& b) {
        std::vector<std::string> out;
        for (const auto& it : b.items) out.push_back(it.alias);
        return out;
    }

    void emit_items(SelectBlock& b2, std::vector<std::pair<ExprPtr, std::string>> items2) {
        if (!row_mode()) {
            for (auto& [e, name] : items2) b2.items.push_back(mk_item(std::move(e), name));
            return;
        }
        std::vector<ExprPtr> parts;
        for (auto& [e, name] : items2) parts.push_back(std::move(e));
        b2.items.push_back(mk_item(ds_union_expr(std::move(parts)), "prov"));
    }

    QueryPair tx_map(const SelectBlock& b, SourceSpan span) {
        rules.insert("Map");
        SelectBlock b1, b2;
        if (!b.from.empty()) {
            const std::string t = b.from[0].item.alias;
            FromPair f = tx_from_item(b.from[0]);
            b1.from.push_back(std::move(f.s1));
            b2.from.push_back(std::move(f.s2));
            b1.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
            b2.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
        } else {
            // from-less literal select: one constant row, id 0
            b1.items.push_back(mk_item(mk_int(0), kRhoColumn));
            b2.items.push_back(mk_item(mk_int(0), kRhoColumn));
        }
        std::vector<std::pair<ExprPtr, std::string>> items2;
        for (const auto& it : b.items) {
            auto pair = tx_expr(*it.expr);
            b1.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        emit_items(b2, std::move(items2));
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    QueryPair tx_join(const SelectBlock& b, SourceSpan span) {
        rules.insert("Join");
        const int m = static_cast<int>(b.from.size());
        SelectBlock b1, b2;
        std::vector<std::string> aliases;
        for (const auto& step : b.from) {
            aliases.push_back(step.item.alias);
            FromPair f = tx_from_item(step);
            b1.from.push_back(std::move(f.s1));
            b2.from.push_back(std::move(f.s2));
        }
        int site = new_site(SiteKind::Join, m, span);
        ExprPair pred;
        if (b.where) pred = tx_expr(*b.where);

        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            for (const auto& a : aliases) args.push_back(mk_ref(a, kRhoColumn));
            b1.items.push_back(
                mk_item(mk_call("logwrite_join" + std::to_string(m), std::move(args)), kRhoColumn));
        }
        std::vector<std::pair<ExprPtr, std::string>> items2;
        for (const auto& it : b.items) {
            auto pair = tx_expr(*it.expr);
            b1.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        if (b.where) b1.where = std::move(pred.p1);

        std::string j = names.fresh("j");
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            for (const auto& a : aliases) args.push_back(mk_ref(a, kRhoColumn));
            b2.from.push_back(
                mk_step(mk_tablefunc_item("logread_join" + std::to_string(m), std::move(args), j,
                                          {kRhoColumn}),
                        true));
        }
        std::string yj;
        if (opts.why && b.where) {
            yj = names.fresh("yj");
            b2.from.push_back(mk_scalar_lateral(ds_why_expr(std::move(pred.p2)), yj));
        }
        b2.items.push_back(mk_item(mk_ref(j, kRhoColumn), kRhoColumn));
        if (row_mode()) {
            std::vector<ExprPtr> parts;
            for (const auto& a : aliases) parts.push_back(mk_ref(a, "prov"));
            if (!yj.empty()) parts.push_back(mk_ref(yj, "d"));
            b2.items.push_back(mk_item(ds_union_expr(std::move(parts)), "prov"));
        } else {
            for (auto& [e, name] : items2) {
                std::vector<ExprPtr> parts;
                parts.push_back(std::move(e));
                if (!yj.empty()) parts.push_back(mk_ref(yj, "d"));
                b2.items.push_back(mk_item(ds_union_expr(std::move(parts)), name));
            }
        }
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    QueryPair tx_left(const SelectBlock& b, SourceSpan span) {
        rules.insert("LeftJoin");
        const std::string t1 = b.from[0].item.alias;
        const std::string t2 = b.from[1].item.alias;
        FromPair f1 = tx_from_item(b.from[0]);
        FromPair f2 = tx_from_item(b.from[1]);
        int site = new_site(SiteKind::Left, 0, span);
        ExprPair pred = tx_expr(*b.from[1].on);

        SelectBlock b1;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t1, kRhoColumn));
            args.push_back(mk_ref(t2, kRhoColumn));
            b1.items.push_back(mk_item(mk_call("logwrite_left", std::move(args)), kRhoColumn));
        }
        std::vector<std::pair<ExprPtr, std::string>> items2;
        for (const auto& it : b.items) {
            auto pair = tx_expr(*it.expr);
            b1.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        b1.from.push_back(std::move(f1.s1));
        FromStep right1 = std::move(f2.s1);
        right1.join = FromStep::Join::Left;
        right1.on = std::move(pred.p1);
        b1.from.push_back(std::move(right1));

        SelectBlock b2;
        std::string j = names.fresh("j");
        b2.from.push_back(std::move(f1.s2));
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t1, kRhoColumn));
            b2.from.push_back(mk_step(
                mk_tablefunc_item("logread_left", std::move(args), j, {"pair", "right"}), true));
        }
        FromStep right2 = std::move(f2.s2);
        right2.join = FromStep::Join::Left;
        right2.on = make_binary(BinOp::Eq, mk_ref(j, "right"), mk_ref(t2, kRhoColumn));
        b2.from.push_back(std::move(right2));
        std::string yj;
        if (opts.why) {
            yj = names.fresh("yj");
            b2.from.push_back(mk_scalar_lateral(ds_why_expr(std::move(pred.p2)), yj));
        }
        b2.items.push_back(mk_item(mk_ref(j, "pair"), kRhoColumn));
        if (row_mode()) {
            std::vector<ExprPtr> parts;
            parts.push_back(mk_ref(t1, "prov"));
            parts.push_back(mk_ref(t2, "prov"));
            if (!yj.empty()) parts.push_back(mk_ref(yj, "d"));
            b2.items.push_back(mk_item(ds_union_expr(std::move(parts)), "prov"));
        } else {
            for (auto& [e, name] : items2) {
                std::vector<ExprPtr> parts;
                parts.push_back(std::move(e));
                if (!yj.empty()) parts.push_back(mk_ref(yj, "d"));
                b2.items.push_back(mk_item(ds_union_expr(std::move(parts)), name));
            }
        }
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    QueryPair tx_group(const SelectBlock& b, SourceSpan span) {
        rules.insert("Group");
        const std::string t = b.from[0].item.alias;
        const bool grand = !b.group_by || b.group_by->empty();
        FromPair f = tx_from_item(b.from[0]);
        int site = new_site(SiteKind::Grp, 0, span);

        std::vector<ExprPair> keys;
        if (b.group_by)
            for (const auto& g : *b.group_by) keys.push_back(tx_expr(*g));
        HavingPair having;
        if (b.having) having = tx_having(*b.having);

        SelectBlock b1;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_agg("rid_agg", mk_ref(t, kRhoColumn)));
            b1.items.push_back(mk_item(mk_call("logwrite_grp", std::move(args)), kRhoColumn));
        }
        std::vector<std::pair<ExprPtr, std::string>> items2;
        for (const auto& it : b.items) {
            auto pair = tx_group_item(*it.expr);
            b1.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        b1.from.push_back(std::move(f.s1));
        b1.group_by = std::vector<ExprPtr>{};
        for (auto& k : keys) b1.group_by->push_back(std::move(k.p1));
        if (b.having) b1.having = std::move(having.p1);

        SelectBlock b2;
        b2.from.push_back(std::move(f.s2));
        std::string grpv;
        if (!grand) {
            grpv = names.fresh("grp");
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t, kRhoColumn));
            b2.from.push_back(mk_step(
                mk_tablefunc_item("logread_grp", std::move(args), grpv, {kRhoColumn}), true));
        }
        std::string yg;
        if (opts.why && (!keys.empty() || b.having)) {
            std::vector<ExprPtr> parts;
            for (auto& k : keys) parts.push_back(std::move(k.p2));
            if (b.having) parts.push_back(std::move(having.row_deps));
            yg = names.fresh("yg");
            b2.from.push_back(mk_scalar_lateral(ds_why_expr(ds_union_expr(std::move(parts))), yg));
        }
        if (!grand) {
            b2.items.push_back(mk_item(mk_ref(grpv, kRhoColumn), kRhoColumn));
            b2.group_by = std::vector<ExprPtr>{};
            b2.group_by->push_back(mk_ref(grpv, kRhoColumn));
        } else {
            // grand-total groups exist even over empty input; shape
            // preservation makes the replayed member set identical to the
            // logged key, so the group id replays by exact key lookup
            auto lookup = [&]() {
                std::vector<ExprPtr> args;
                args.push_back(mk_int(site));
                args.push_back(mk_agg("rid_agg", mk_ref(t, kRhoColumn)));
                return mk_call("logread_grp_key", std::move(args));
            };
            b2.items.push_back(mk_item(lookup(), kRhoColumn));
            b2.group_by = std::vector<ExprPtr>{};
            auto notnull = std::make_unique<Expr>();
            notnull->node = UnaryExpr{UnOp::IsNotNull, lookup()};
            b2.having = std::move(notnull);
        }
        std::vector<std::pair<ExprPtr, std::string>> final2;
        for (auto& [e, name] : items2) {
            std::vector<ExprPtr> parts;
            parts.push_back(std::move(e));
            if (!yg.empty()) parts.push_back(mk_agg("ds_agg", mk_ref(yg, "d")));
            final2.emplace_back(ds_union_expr(std::move(parts)), name);
        }
        emit_items(b2, std::move(final2));
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    QueryPair tx_window(const SelectBlock& b, SourceSpan span) {
        rules.insert("Window");
        const std::string t = b.from[0].item.alias;
        FromPair f = tx_from_item(b.from[0]);

        std::map<std::string, WindowBinding> binding_of;
        SelectBlock b1, b2;
        std::vector<FromStep> replay_steps;

        ExprPtr rho1 = mk_ref(t, kRhoColumn);
        for (const auto& wd : b.windows) {
            int site = new_site(SiteKind::Win, 0, span);

            WindowDef wd1;
            wd1.name = wd.name;
            std::vector<ExprPtr> ydeps;
            for (const auto& p : wd.partition) {
                auto pair = tx_expr(*p);
                wd1.partition.push_back(std::move(pair.p1));
                ydeps.push_back(std::move(pair.p2));
            }
            for (const auto& o : wd.order) {
                auto pair = tx_expr(*o.expr);
                wd1.order.push_back(OrderItem{std::move(pair.p1), o.desc});
                ydeps.push_back(std::move(pair.p2));
            }
            b1.windows.push_back(std::move(wd1));

            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(std::move(rho1));
            args.push_back(mk_winfunc("first_value", mk_ref(t, kRhoColumn), wd.name, std::nullopt));
            args.push_back(mk_winfunc("rank", nullptr, wd.name, std::nullopt));
            rho1 = mk_call("logwrite_win", std::move(args));

            WindowBinding bind;
            bind.lateral_alias = names.fresh("win");
            {
                std::vector<ExprPtr> rargs;
                rargs.push_back(mk_int(site));
                rargs.push_back(mk_ref(t, kRhoColumn));
                replay_steps.push_back(mk_step(mk_tablefunc_item("logread_win", std::move(rargs),
                                                                 bind.lateral_alias,
                                                                 {"part", "rank"}),
                                               true));
            }
            if (opts.why) {
                bind.y_alias = names.fresh("yw");
                replay_steps.push_back(
                    mk_scalar_lateral(ds_why_expr(ds_union_expr(std::move(ydeps))), bind.y_alias));
            }
            WindowDef wd2;
            wd2.name = wd.name;
            wd2.partition.push_back(mk_ref(bind.lateral_alias, "part"));
            wd2.order.push_back(OrderItem{mk_ref(bind.lateral_alias, "rank"), false});
            b2.windows.push_back(std::move(wd2));
            binding_of[wd.name] = std::move(bind);
        }

        b1.items.push_back(mk_item(std::move(rho1), kRhoColumn));
        b2.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));

        std::vector<std::pair<ExprPtr, std::string>> items2;
        for (const auto& it : b.items) {
            auto pair = tx_window_item(*it.expr, binding_of);
            b1.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        b1.from.push_back(std::move(f.s1));
        b2.from.push_back(std::move(f.s2));
        for (auto& s : replay_steps) b2.from.push_back(std::move(s));
        emit_items(b2, std::move(items2));
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    ExprPair tx_window_item(const Expr& e, const std::map<std::string, WindowBinding>& bindings) {
        if (const auto* wf = std::get_if<WindowFuncExpr>(&e.node)) {
            rules.insert("AggWin");
            auto it = bindings.find(wf->over.name);
            if (it == bindings.end()) tx_error("unknown window in item", e.span);
            const WindowBinding& bind = it->second;

            ExprPair arg;
            bool has_arg = !wf->args.empty();
            if (has_arg) arg = tx_expr(*wf->args[0]);

            auto p1 = std::make_unique<Expr>();
            p1->span = e.span;
            {
                WindowFuncExpr w1;
                w1.func = wf->func;
                if (has_arg) w1.args.push_back(std::move(arg.p1));
                w1.over.name = wf->over.name;
                w1.over.frame = wf->over.frame;
                p1->node = std::move(w1);
            }
            std::vector<ExprPtr> parts;
            if (wf->func == "rank") {
                // no value is copied; only the criteria are inspected
            } else if (wf->func == "first_value") {
                parts.push_back(
                    mk_winfunc("ds_first_value", std::move(arg.p2), wf->over.name, wf->over.frame));
            } else {
                parts.push_back(
                    mk_winfunc("ds_agg", std::move(arg.p2), wf->over.name, wf->over.frame));
            }
            if (opts.why && !bind.y_alias.empty()) {
                auto frame = wf->func == "rank" ? std::optional<Frame>() : wf->over.frame;
                parts.push_back(
                    mk_winfunc("ds_agg", mk_ref(bind.y_alias, "d"), wf->over.name, frame));
            }
            return {std::move(p1), ds_union_expr(std::move(parts))};
        }
        return std::visit(
            [&](const auto& n) -> ExprPair {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, BinaryExpr>) {
                    auto l = tx_window_item(*n.lhs, bindings);
                    auto r = tx_window_item(*n.rhs, bindings);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = BinaryExpr{n.op, std::move(l.p1), std::move(r.p1)};
                    std::vector<ExprPtr> parts;
                    parts.push_back(std::move(l.p2));
                    parts.push_back(std::move(r.p2));
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    auto o = tx_window_item(*n.operand, bindings);
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = UnaryExpr{n.op, std::move(o.p1)};
                    return {std::move(p1), std::move(o.p2)};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    FuncCallExpr f1;
                    f1.name = n.name;
                    std::vector<ExprPtr> parts;
                    for (const auto& x : n.args) {
                        auto p = tx_window_item(*x, bindings);
                        f1.args.push_back(std::move(p.p1));
                        parts.push_back(std::move(p.p2));
                    }
                    auto p1 = std::make_unique<Expr>();
                    p1->span = e.span;
                    p1->node = std::move(f1);
                    return {std::move(p1), ds_union_expr(std::move(parts))};
                } else {
                    return tx_expr(e);
                }
            },
            e.node);
    }

    QueryPair tx_distinct(const SelectBlock& b, SourceSpan span) {
        rules.insert("Distinct");
        const std::string t = b.from[0].item.alias;
        FromPair f = tx_from_item(b.from[0]);
        int site = new_site(SiteKind::Filter, 0, span);

        std::vector<ExprPair> dkeys;
        for (const auto& d : b.distinct_on) dkeys.push_back(tx_expr(*d));
        std::vector<ExprPair> orders;
        for (const auto& o : b.order_by) orders.push_back(tx_expr(*o.expr));
        std::vector<std::pair<ExprPtr, std::string>> items2;

        SelectBlock inner;
        inner.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
        for (const auto& it : b.items) {
            auto pair = tx_expr(*it.expr);
            inner.items.push_back(mk_item(std::move(pair.p1), it.alias));
            items2.emplace_back(std::move(pair.p2), it.alias);
        }
        inner.from.push_back(std::move(f.s1));
        for (auto& k : dkeys) inner.distinct_on.push_back(std::move(k.p1));
        for (size_t i = 0; i < orders.size(); ++i)
            inner.order_by.push_back(OrderItem{std::move(orders[i].p1), b.order_by[i].desc});

        std::string t2 = names.fresh("t");
        SelectBlock b1;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t2, kRhoColumn));
            b1.items.push_back(mk_item(mk_call("logwrite_filter", std::move(args)), kRhoColumn));
        }
        for (const auto& it : b.items) b1.items.push_back(mk_item(mk_ref(t2, it.alias), it.alias));
        b1.from.push_back(mk_step(mk_subquery_item(mk_query(std::move(inner), span), t2)));

        SelectBlock b2;
        b2.from.push_back(std::move(f.s2));
        std::string fa = names.fresh("f");
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t, kRhoColumn));
            b2.from.push_back(mk_step(
                mk_tablefunc_item("logread_filter", std::move(args), fa, {kRhoColumn}), true));
        }
        std::string yf;
        if (opts.why) {
            std::vector<ExprPtr> parts;
            for (auto& k : dkeys) parts.push_back(std::move(k.p2));
            yf = names.fresh("yf");
            b2.from.push_back(mk_scalar_lateral(ds_why_expr(ds_union_expr(std::move(parts))), yf));
        }
        b2.items.push_back(mk_item(mk_ref(fa, kRhoColumn), kRhoColumn));
        std::vector<std::pair<ExprPtr, std::string>> final2;
        for (auto& [e, name] : items2) {
            std::vector<ExprPtr> parts;
            parts.push_back(std::move(e));
            if (!yf.empty()) parts.push_back(mk_ref(yf, "d"));
            final2.emplace_back(ds_union_expr(std::move(parts)), name);
        }
        emit_items(b2, std::move(final2));
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }

    QueryPair tx_orderby(const SelectBlock& b, SourceSpan span) {
        rules.insert("OrderBy");
        const std::string t = b.from[0].item.alias;
        const bool filters =
            (b.offset && *b.offset != 0) || (b.limit && b.limit->count.has_value());
        FromPair f = tx_from_item(b.from[0]);

        std::vector<ExprPair> orders;
        for (const auto& o : b.order_by) orders.push_back(tx_expr(*o.expr));
        std::vector<std::pair<ExprPtr, std::string>> items1, items2;
        for (const auto& it : b.items) {
            auto pair = tx_expr(*it.expr);
            items1.emplace_back(std::move(pair.p1), it.alias);
            items2.emplace_back(std::move(pair.p2), it.alias);
        }

        if (!filters) {
            // ordering alone decides no row's presence: phase 1 keeps it,
            // phase 2 drops it and no site is needed
            SelectBlock b1;
            b1.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
            for (auto& [e, name] : items1) b1.items.push_back(mk_item(std::move(e), name));
            b1.from.push_back(std::move(f.s1));
            for (size_t i = 0; i < orders.size(); ++i)
                b1.order_by.push_back(OrderItem{std::move(orders[i].p1), b.order_by[i].desc});
            b1.offset = 0;
            b1.limit = LimitClause{std::nullopt};

            SelectBlock b2;
            b2.from.push_back(std::move(f.s2));
            b2.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
            emit_items(b2, std::move(items2));
            return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
        }

        int site = new_site(SiteKind::Filter, 0, span);
        SelectBlock inner;
        inner.items.push_back(mk_item(mk_ref(t, kRhoColumn), kRhoColumn));
        for (auto& [e, name] : items1) inner.items.push_back(mk_item(std::move(e), name));
        inner.from.push_back(std::move(f.s1));
        for (size_t i = 0; i < orders.size(); ++i)
            inner.order_by.push_back(OrderItem{std::move(orders[i].p1), b.order_by[i].desc});
        inner.offset = b.offset;
        inner.limit = b.limit;

        std::string t2 = names.fresh("t");
        SelectBlock b1;
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t2, kRhoColumn));
            b1.items.push_back(mk_item(mk_call("logwrite_filter", std::move(args)), kRhoColumn));
        }
        for (const auto& it : b.items) b1.items.push_back(mk_item(mk_ref(t2, it.alias), it.alias));
        b1.from.push_back(mk_step(mk_subquery_item(mk_query(std::move(inner), span), t2)));

        SelectBlock b2;
        b2.from.push_back(std::move(f.s2));
        std::string fa = names.fresh("f");
        {
            std::vector<ExprPtr> args;
            args.push_back(mk_int(site));
            args.push_back(mk_ref(t, kRhoColumn));
            b2.from.push_back(mk_step(
                mk_tablefunc_item("logread_filter", std::move(args), fa, {kRhoColumn}), true));
        }
        std::string yf;
        if (opts.why && !orders.empty()) {
            std::vector<ExprPtr> parts;
            for (auto& o : orders) parts.push_back(std::move(o.p2));
            yf = names.fresh("yf");
            b2.from.push_back(mk_scalar_lateral(ds_why_expr(ds_union_expr(std::move(parts))), yf));
        }
        b2.items.push_back(mk_item(mk_ref(fa, kRhoColumn), kRhoColumn));
        std::vector<std::pair<ExprPtr, std::string>> final2;
        for (auto& [e, name] : items2) {
            std::vector<ExprPtr> parts;
            parts.push_back(std::move(e));
            if (!yf.empty()) parts.push_back(mk_ref(yf, "d"));
            final2.emplace_back(ds_union_expr(std::move(parts)), name);
        }
        emit_items(b2, std::move(final2));
        return {mk_query(std::move(b1), span), mk_query(std::move(b2), span), item_names(b)};
    }
};

// ---------------------------------------------------------------------------
// hoisting (the set-aggregate rewrite)

struct Hoister {
    void hoist_query(Query& q) {
        std::visit(
            [&](auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    hoist_block(n);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    for (auto& a : n.arms) hoist_query(*a);
                } else {
                    for (auto& b : n.bindings) hoist_query(*b.query);
                    hoist_query(*n.body);
                }
            },
            q.node);
    }

    struct Leaf {
        ExprPtr expr;
        bool why;
    };

    static void flatten(ExprPtr e, bool why, std::vector<Leaf>& out) {
        if (auto* call = std::get_if<FuncCallExpr>(&e->node)) {
            if (call->name == "ds_union") {
                for (auto& a : call->args) flatten(std::move(a), why, out);
                return;
            }
            if (call->name == "ds_why") {
                flatten(std::move(call->args[0]), true, out);
                return;
            }
            if (call->name == "ds_empty") return;
        }
        out.push_back(Leaf{std::move(e), why});
    }

    static ExprPtr rebuild(std::vector<Leaf> leaves) {
        std::vector<ExprPtr> parts;
        for (auto& l : leaves) {
            if (l.why) parts.push_back(ds_why_expr(std::move(l.expr)));
            else parts.push_back(std::move(l.expr));
        }
        return ds_union_expr(std::move(parts));
    }

    static bool is_closed(const Expr& e, const std::set<std::string>& local) {
        std::set<std::string> refs;
        expr_referenced_aliases(e, refs);
        for (const auto& r : refs)
            if (local.count(r)) return false;
        return true;
    }

    void hoist_block(SelectBlock& b) {
        for (auto& s : b.from)
            if (s.item.subquery) hoist_query(*s.item.subquery);
        for (auto& it : b.items) hoist_nested(it.expr);
        if (b.having) hoist_nested(b.having);

        // grand-total aggregations are skipped: over empty input the set
        // aggregate is empty and the rewrite would change the result
        const bool grouped = b.group_by.has_value() && !b.group_by->empty();
        const bool windowed = !b.windows.empty();
        if (!grouped && !windowed) return;

        std::set<std::string> local;
        for (const auto& s : b.from) local.insert(s.item.alias);

        // pull closed parts out of the single-expression laterals first,
        // so aggregations over their columns can hoist them too
        std::map<std::string, ExprPtr> lateral_closed;
        for (auto& s : b.from) {
            if (!s.lateral || s.item.kind != FromItem::Kind::Subquery) continue;
            if (!s.item.subquery->is<SelectBlock>()) continue;
            auto& lb = s.item.subquery->as<SelectBlock>();
            if (!lb.from.empty() || lb.items.size() != 1) continue;
            std::vector<Leaf> leaves;
            flatten(std::move(lb.items[0].expr), false, leaves);
            std::vector<Leaf> closed, open;
            for (auto& l : leaves) {
                if (is_closed(*l.expr, local)) closed.push_back(std::move(l));
                else open.push_back(std::move(l));
            }
            if (closed.empty()) {
                lb.items[0].expr = rebuild(std::move(open));
                continue;
            }
            std::vector<Leaf> closed_copy;
            for (auto& l : closed) closed_copy.push_back(Leaf{clone(*l.expr), l.why});
            lateral_closed[s.item.alias] = rebuild(std::move(closed_copy));
            lb.items[0].expr = rebuild(std::move(open));
        }

        for (auto& it : b.items) hoist_expr(it.expr, local, lateral_closed);
    }

    void hoist_nested(ExprPtr& e) {
        std::function<void(ExprPtr&)> rec = [&](ExprPtr& x) {
            std::visit(
                [&](auto& n) {
                    using T = std::decay_t<decltype(n)>;
                    if constexpr (std::is_same_v<T, BinaryExpr>) {
                        rec(n.lhs);
                        rec(n.rhs);
                    } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                        rec(n.operand);
                    } else if constexpr (std::is_same_v<T, CaseExpr>) {
                        if (n.operand) rec(n.operand);
                        for (auto& a : n.arms) {
                            rec(a.when);
                            rec(a.then);
                        }
                        if (n.else_arm) rec(n.else_arm);
                    } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                        for (auto& a : n.args) rec(a);
                    } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                        if (n.arg) rec(n.arg);
                    } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                        for (auto& a : n.args) rec(a);
                    } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                        hoist_query(*n.query);
                    } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                        rec(n.probe);
                        hoist_query(*n.query);
                    } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                        hoist_query(*n.query);
                    }
                },
                x->node);
        };
        rec(e);
    }

    void hoist_expr(ExprPtr& e, const std::set<std::string>& local,
                    const std::map<std::string, ExprPtr>& lateral_closed) {
        if (auto* agg = std::get_if<AggregateExpr>(&e->node)) {
            if (agg->func == "ds_agg" && agg->arg) {
                auto parts = split_agg_arg(std::move(agg->arg), local, lateral_closed);
                if (parts.closed.empty()) {
                    agg->arg = std::move(parts.open);
                    return;
                }
                std::vector<ExprPtr> outer;
                for (auto& c : parts.closed) outer.push_back(std::move(c));
                outer.push_back(mk_agg("ds_agg", std::move(parts.open)));
                e = ds_union_expr(std::move(outer));
            }
            return;
        }
        if (auto* wf = std::get_if<WindowFuncExpr>(&e->node)) {
            if (wf->func == "ds_agg" && !wf->args.empty()) {
                auto parts = split_agg_arg(std::move(wf->args[0]), local, lateral_closed);
                if (parts.closed.empty()) {
                    wf->args[0] = std::move(parts.open);
                    return;
                }
                wf->args[0] = std::move(parts.open);
                std::vector<ExprPtr> outer;
                for (auto& c : parts.closed) outer.push_back(std::move(c));
                auto inner = std::make_unique<Expr>();
                inner->node = std::move(e->node);
                outer.push_back(std::move(inner));
                e = ds_union_expr(std::move(outer));
            }
            return;
        }
        std::visit(
            [&](auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, BinaryExpr>) {
                    hoist_expr(n.lhs, local, lateral_closed);
                    hoist_expr(n.rhs, local, lateral_closed);
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    hoist_expr(n.operand, local, lateral_closed);
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    if (n.operand) hoist_expr(n.operand, local, lateral_closed);
                    for (auto& a : n.arms) {
                        hoist_expr(a.when, local, lateral_closed);
                        hoist_expr(a.then, local, lateral_closed);
                    }
                    if (n.else_arm) hoist_expr(n.else_arm, local, lateral_closed);
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    for (auto& a : n.args) hoist_expr(a, local, lateral_closed);
                }
            },
            e->node);
    }

    struct SplitResult {
        std::vector<ExprPtr> closed;
        ExprPtr open;
    };

    SplitResult split_agg_arg(ExprPtr arg, const std::set<std::string>& local,
                              const std::map<std::string, ExprPtr>& lateral_closed) {
        std::vector<Leaf> leaves;
        flatten(std::move(arg), false, leaves);
        SplitResult out;
        std::vector<Leaf> open;
        for (auto& l : leaves) {
            // a reference to a slimmed lateral carries its closed parts along
            if (const auto* ref = std::get_if<ColumnRef>(&l.expr->node)) {
                auto it = lateral_closed.find(ref->table);
                if (it != lateral_closed.end()) {
                    ExprPtr extra = clone(*it->second);
                    if (l.why) extra = ds_why_expr(std::move(extra));
                    out.closed.push_back(std::move(extra));
                    open.push_back(std::move(l));
                    continue;
                }
            }
            if (is_closed(*l.expr, local)) {
                if (l.why) out.closed.push_back(ds_why_expr(std::move(l.expr)));
                else out.closed.push_back(std::move(l.expr));
            } else {
                open.push_back(std::move(l));
            }
        }
        out.open = rebuild(std::move(open));
        return out;
    }
};

} // namespace

std::vector<Site> allocate_sites(const Query& normalized) {
    return derive(normalized, TransformOptions{}).sites;
}

TransformResult derive(const Query& normalized, TransformOptions opts) {
    auto violations = check_normal_form(normalized);
    if (!violations.empty())
        throw SqlError(ErrorKind::Validation,
                       "derive requires a normalized query: " + violations[0].message,
                       violations[0].span);
    Transformer tx(normalized, opts);
    QueryPair pair = tx.tx_query(normalized);
    TransformResult out;
    out.phase1 = std::move(pair.p1);
    out.phase2 = std::move(pair.p2);
    out.sites = std::move(tx.sites);
    out.rules_applied = std::move(tx.rules);
    if (opts.hoist) out.phase2 = hoist_set_aggregates(*out.phase2);
    return out;
}

QueryPtr hoist_set_aggregates(const Query& q2) {
    QueryPtr out = clone(q2);
    Hoister h;
    h.hoist_query(*out);
    return out;
}

std::string sites_to_json(const std::vector<Site>& sites) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& s : sites) {
        nlohmann::ordered_json j;
        j["id"] = s.id;
        std::string kind = site_kind_name(s.kind);
        if (s.kind == SiteKind::Join) kind += "<" + std::to_string(s.arity) + ">";
        j["kind"] = kind;
        j["span"] = {s.span.begin, s.span.end};
        arr.push_back(std::move(j));
    }
    return arr.dump(2);
}

} // namespace sqlprov
