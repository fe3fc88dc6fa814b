#include "sqlprov/normalize.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace sqlprov {

using detail::NameEnv;
using detail::ResolveContext;

namespace {

[[noreturn]] void fail(const std::string& msg, SourceSpan span = {}) {
    throw SqlError(ErrorKind::Validation, msg, span);
}

// ---------------------------------------------------------------------------
// expression rewriting

void rewrite_expr(ExprPtr& e, const std::function<ExprPtr(const Expr&)>& match);

void rewrite_children(Expr& e, const std::function<ExprPtr(const Expr&)>& match) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, BinaryExpr>) {
                rewrite_expr(n.lhs, match);
                rewrite_expr(n.rhs, match);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                rewrite_expr(n.operand, match);
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                for (auto& x : n.items) rewrite_expr(x, match);
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                rewrite_expr(n.probe, match);
                for (auto& x : n.items) rewrite_expr(x, match);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) rewrite_expr(n.operand, match);
                for (auto& a : n.arms) {
                    rewrite_expr(a.when, match);
                    rewrite_expr(a.then, match);
                }
                if (n.else_arm) rewrite_expr(n.else_arm, match);
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                for (auto& x : n.args) rewrite_expr(x, match);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.arg) rewrite_expr(n.arg, match);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                for (auto& x : n.args) rewrite_expr(x, match);
                for (auto& x : n.over.partition) rewrite_expr(x, match);
                for (auto& o : n.over.order) rewrite_expr(o.expr, match);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                rewrite_expr(n.probe, match);
            }
        },
        e.node);
}

/// Replace every subtree for which `match` returns a replacement. Does not
/// descend into subquery bodies.
void rewrite_expr(ExprPtr& e, const std::function<ExprPtr(const Expr&)>& match) {
    if (auto repl = match(*e)) {
        e = std::move(repl);
        return;
    }
    rewrite_children(*e, match);
}

using RefMap = std::map<std::pair<std::string, std::string>, std::pair<std::string, std::string>>;

void substitute_refs_query(Query& q, const RefMap& map, std::set<std::string> shadowed);
void rename_alias_in_query(Query& q, const std::string& old, const std::string& fresh);

/// Rename column references, following them into subquery bodies (where the
/// renamed aliases may be referenced freely or via BIND columns, as long as
/// a nested from-item does not shadow the alias).
void substitute_refs(ExprPtr& e, const RefMap& map) {
    rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
        if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
            auto it = map.find({ref->table, ref->column});
            if (it != map.end()) {
                auto out = make_column_ref(it->second.first, it->second.second);
                out->span = x.span;
                return out;
            }
        }
        return nullptr;
    });
}

/// Visit each clause expression of a block (not descending into subqueries).
void for_block_exprs(SelectBlock& b, const std::function<void(ExprPtr&)>& fn) {
    for (auto& it : b.items) fn(it.expr);
    for (auto& s : b.from) {
        for (auto& a : s.item.args) fn(a);
        if (s.on) fn(s.on);
    }
    if (b.where) fn(b.where);
    if (b.group_by)
        for (auto& g : *b.group_by) fn(g);
    if (b.having) fn(b.having);
    for (auto& w : b.windows) {
        for (auto& p : w.partition) fn(p);
        for (auto& o : w.order) fn(o.expr);
    }
    for (auto& d : b.distinct_on) fn(d);
    for (auto& o : b.order_by) fn(o.expr);
}

/// Mutable access to every expression-level subquery of an expression.
void for_subqueries(ExprPtr& e, const std::function<void(QueryPtr&)>& fn) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, BinaryExpr>) {
                for_subqueries(n.lhs, fn);
                for_subqueries(n.rhs, fn);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                for_subqueries(n.operand, fn);
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                for (auto& x : n.items) for_subqueries(x, fn);
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                for_subqueries(n.probe, fn);
                for (auto& x : n.items) for_subqueries(x, fn);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) for_subqueries(n.operand, fn);
                for (auto& a : n.arms) {
                    for_subqueries(a.when, fn);
                    for_subqueries(a.then, fn);
                }
                if (n.else_arm) for_subqueries(n.else_arm, fn);
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                for (auto& x : n.args) for_subqueries(x, fn);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.arg) for_subqueries(n.arg, fn);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                for (auto& x : n.args) for_subqueries(x, fn);
                for (auto& x : n.over.partition) for_subqueries(x, fn);
                for (auto& o : n.over.order) for_subqueries(o.expr, fn);
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                fn(n.query);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                for_subqueries(n.probe, fn);
                fn(n.query);
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                fn(n.query);
            }
        },
        e->node);
}

void substitute_refs_query(Query& q, const RefMap& map, std::set<std::string> shadowed) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                std::set<std::string> inner = shadowed;
                for (auto& s : n.from) {
                    if (s.item.kind == FromItem::Kind::Bind) {
                        // a BIND forwards the outer binding: if the outer
                        // alias is being folded away, retarget the BIND and
                        // keep the map live so the body refs follow
                        std::string target;
                        bool retarget = true;
                        for (const auto& col : s.item.bind_columns) {
                            auto it = map.find({s.item.alias, col});
                            if (it == map.end()) {
                                retarget = false;
                                break;
                            }
                            if (target.empty()) target = it->second.first;
                            if (target != it->second.first) retarget = false;
                        }
                        if (retarget && !s.item.bind_columns.empty()) {
                            std::vector<std::string> cols;
                            for (const auto& col : s.item.bind_columns)
                                cols.push_back(map.at({s.item.alias, col}).second);
                            s.item.alias = target;
                            s.item.bind_columns = std::move(cols);
                            continue; // alias not shadowed: body refs rewrite below
                        }
                    }
                    inner.insert(s.item.alias);
                }
                RefMap pruned;
                for (const auto& [from, to] : map)
                    if (!inner.count(from.first)) pruned.emplace(from, to);
                for_block_exprs(n, [&](ExprPtr& e) {
                    substitute_refs(e, pruned);
                    for_subqueries(e, [&](QueryPtr& s) { substitute_refs_query(*s, pruned, inner); });
                });
                for (auto& s : n.from)
                    if (s.item.subquery) substitute_refs_query(*s.item.subquery, pruned, inner);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) substitute_refs_query(*a, map, shadowed);
            } else {
                for (auto& b : n.bindings) substitute_refs_query(*b.query, map, shadowed);
                substitute_refs_query(*n.body, map, shadowed);
            }
        },
        q.node);
}

/// Substitute including subquery bodies of the given expression.
void substitute_refs_deep(ExprPtr& e, const RefMap& map) {
    substitute_refs(e, map);
    for_subqueries(e, [&](QueryPtr& s) { substitute_refs_query(*s, map, {}); });
}

bool contains_aggregate(const Expr& e) {
    bool found = false;
    walk_exprs(e, [&](const Expr& x) {
        if (x.is<WindowFuncExpr>()) return false;
        if (x.is<AggregateExpr>()) {
            found = true;
            return false;
        }
        if (x.is<SubqueryExpr>() || x.is<InSubqueryExpr>() || x.is<ExistsExpr>()) return false;
        return true;
    });
    return found;
}

bool contains_window_func(const Expr& e) {
    bool found = false;
    walk_exprs(e, [&](const Expr& x) {
        if (x.is<WindowFuncExpr>()) {
            found = true;
            return false;
        }
        if (x.is<SubqueryExpr>() || x.is<InSubqueryExpr>() || x.is<ExistsExpr>()) return false;
        return true;
    });
    return found;
}

bool contains_case(const Expr& e) {
    bool found = false;
    walk_exprs(e, [&](const Expr& x) {
        if (x.is<CaseExpr>()) {
            found = true;
            return false;
        }
        if (x.is<SubqueryExpr>() || x.is<InSubqueryExpr>() || x.is<ExistsExpr>()) return false;
        return true;
    });
    return found;
}

// ---------------------------------------------------------------------------

struct Normalizer {
    const Catalog& cat;
    ResolveContext ctx;
    FreshNames names;

    Normalizer(const Catalog& c, const Query& q) : cat(c), ctx{&c, nullptr}, names(q) {}

    void freshen_aliases(Query& q);
    void inline_udfs(Query& q);
    void inline_udfs_expr(ExprPtr& e);

    void phase_a(Query& q, const NameEnv* outer);
    void phase_a_block(SelectBlock& b, SourceSpan span, const NameEnv* outer);
    void phase_a_expr(ExprPtr& e, const NameEnv* env, SelectBlock* block);
    void normalize_subquery(Query& sub, const NameEnv* env);
    void insert_binds(Query& sub, const NameEnv* env);

    void phase_b(QueryPtr& q, const NameEnv* outer);
    void phase_b_block(QueryPtr& qp, const NameEnv* outer);
    void restructure_block(QueryPtr& qp, const NameEnv* outer);
};

// ---------------------------------------------------------------------------
// UDF inlining

void Normalizer::freshen_aliases(Query& q) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                for (auto& step : n.from) {
                    if (step.item.subquery) freshen_aliases(*step.item.subquery);
                    std::string old = step.item.alias;
                    std::string fresh = names.fresh(old);
                    if (fresh == old) continue;
                    step.item.alias = fresh;
                    for_block_exprs(n, [&](ExprPtr& e) {
                        rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
                            if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                                if (ref->table == old) return make_column_ref(fresh, ref->column);
                            return nullptr;
                        });
                        for_subqueries(e, [&](QueryPtr& s) { rename_alias_in_query(*s, old, fresh); });
                    });
                }
                for_block_exprs(n, [&](ExprPtr& e) {
                    for_subqueries(e, [&](QueryPtr& s) { freshen_aliases(*s); });
                });
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) freshen_aliases(*a);
            } else {
                for (auto& b : n.bindings) freshen_aliases(*b.query);
                freshen_aliases(*n.body);
            }
        },
        q.node);
}

void rename_alias_in_query(Query& q, const std::string& old, const std::string& fresh) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                for (const auto& s : n.from)
                    if (s.item.alias == old) return; // shadowed below
                for_block_exprs(n, [&](ExprPtr& e) {
                    rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
                        if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                            if (ref->table == old) return make_column_ref(fresh, ref->column);
                        return nullptr;
                    });
                    for_subqueries(e, [&](QueryPtr& s) { rename_alias_in_query(*s, old, fresh); });
                });
                for (auto& s : n.from)
                    if (s.item.subquery) rename_alias_in_query(*s.item.subquery, old, fresh);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) rename_alias_in_query(*a, old, fresh);
            } else {
                for (auto& b : n.bindings) rename_alias_in_query(*b.query, old, fresh);
                rename_alias_in_query(*n.body, old, fresh);
            }
        },
        q.node);
}

void substitute_params_query(Query& q, const std::map<std::string, const Expr*>& params);

void substitute_params(ExprPtr& e, const std::map<std::string, const Expr*>& params) {
    rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
        if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
            if (ref->table.empty()) {
                auto it = params.find(ref->column);
                if (it != params.end()) return clone(*it->second);
            }
        }
        return nullptr;
    });
    for_subqueries(e, [&](QueryPtr& s) { substitute_params_query(*s, params); });
}

void substitute_params_query(Query& q, const std::map<std::string, const Expr*>& params) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                for_block_exprs(n, [&](ExprPtr& e) { substitute_params(e, params); });
                for (auto& s : n.from)
                    if (s.item.subquery) substitute_params_query(*s.item.subquery, params);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) substitute_params_query(*a, params);
            } else {
                for (auto& b : n.bindings) substitute_params_query(*b.query, params);
                substitute_params_query(*n.body, params);
            }
        },
        q.node);
}

void Normalizer::inline_udfs_expr(ExprPtr& e) {
    rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
        const auto* call = std::get_if<FuncCallExpr>(&x.node);
        if (!call) return nullptr;
        const Udf* udf = cat.find_udf(call->name);
        if (!udf || udf->returns_table) return nullptr;
        if (call->args.size() != udf->params.size())
            fail("wrong argument count for " + call->name, x.span);
        QueryPtr body = clone(*udf->body);
        inline_udfs(*body);
        freshen_aliases(*body);
        std::vector<ExprPtr> arg_copies;
        for (const auto& a : call->args) {
            auto c = clone(*a);
            inline_udfs_expr(c);
            arg_copies.push_back(std::move(c));
        }
        std::map<std::string, const Expr*> params;
        for (size_t i = 0; i < udf->params.size(); ++i)
            params[udf->params[i].name] = arg_copies[i].get();
        substitute_params_query(*body, params);
        if (body->is<SelectBlock>()) {
            auto& blk = body->as<SelectBlock>();
            if (blk.from.empty() && blk.items.size() == 1 && !blk.where && !blk.group_by &&
                !blk.having && blk.windows.empty() && blk.order_by.empty() && !blk.offset &&
                !blk.limit)
                return std::move(blk.items[0].expr);
        }
        auto sub = std::make_unique<Expr>();
        sub->span = x.span;
        sub->node = SubqueryExpr{std::move(body)};
        return sub;
    });
    for_subqueries(e, [&](QueryPtr& s) { inline_udfs(*s); });
}

void Normalizer::inline_udfs(Query& q) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                for (auto& s : n.from) {
                    if (s.item.kind == FromItem::Kind::TableFunc) {
                        const Udf* udf = cat.find_udf(s.item.func);
                        if (udf) {
                            if (!udf->returns_table)
                                fail("scalar function used in FROM: " + s.item.func, s.item.span);
                            if (s.item.args.size() != udf->params.size())
                                fail("wrong argument count for " + s.item.func, s.item.span);
                            QueryPtr body = clone(*udf->body);
                            inline_udfs(*body);
                            freshen_aliases(*body);
                            std::vector<ExprPtr> arg_copies;
                            for (auto& a : s.item.args) {
                                inline_udfs_expr(a);
                                arg_copies.push_back(clone(*a));
                            }
                            std::map<std::string, const Expr*> params;
                            for (size_t i = 0; i < udf->params.size(); ++i)
                                params[udf->params[i].name] = arg_copies[i].get();
                            substitute_params_query(*body, params);
                            // the declared (or aliased) column names move into
                            // the body's select items
                            std::vector<std::string> out_names = s.item.column_aliases;
                            if (out_names.empty())
                                for (const auto& c : udf->table_columns)
                                    out_names.push_back(c.name);
                            if (body->is<SelectBlock>()) {
                                auto& bb = body->as<SelectBlock>();
                                for (size_t i = 0;
                                     i < out_names.size() && i < bb.items.size(); ++i)
                                    bb.items[i].alias = out_names[i];
                            }
                            s.item.kind = FromItem::Kind::Subquery;
                            s.item.subquery = std::move(body);
                            s.item.func.clear();
                            s.item.args.clear();
                            s.item.column_aliases.clear();
                        }
                    }
                    if (s.item.subquery) inline_udfs(*s.item.subquery);
                }
                for_block_exprs(n, [&](ExprPtr& e) { inline_udfs_expr(e); });
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) inline_udfs(*a);
            } else {
                for (auto& b : n.bindings) inline_udfs(*b.query);
                inline_udfs(*n.body);
            }
        },
        q.node);
}

// ---------------------------------------------------------------------------
// phase A: explicitness

void Normalizer::phase_a(Query& q, const NameEnv* outer) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                phase_a_block(n, q.span, outer);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) phase_a(*a, outer);
            } else {
                NameEnv env;
                env.parent = outer;
                for (auto& b : n.bindings) {
                    if (n.recursive && b.query->template is<SetOpQuery>()) {
                        auto& arms = b.query->template as<SetOpQuery>().arms;
                        phase_a(*arms[0], &env);
                        auto cols = detail::query_columns(ctx, *arms[0], &env);
                        if (!b.columns.empty())
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        env.ctes.emplace_back(b.name, cols);
                        for (size_t i = 1; i < arms.size(); ++i) phase_a(*arms[i], &env);
                    } else {
                        phase_a(*b.query, &env);
                        auto cols = detail::query_columns(ctx, *b.query, &env);
                        if (!b.columns.empty())
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        env.ctes.emplace_back(b.name, cols);
                    }
                }
                phase_a(*n.body, &env);
            }
        },
        q.node);
}

void Normalizer::phase_a_block(SelectBlock& b, SourceSpan span, const NameEnv* outer) {
    NameEnv env;
    env.parent = outer;

    for (auto& step : b.from) {
        NameEnv partial = env;
        const NameEnv* item_env = step.lateral ? &partial : outer;
        if (step.item.kind == FromItem::Kind::Subquery) {
            normalize_subquery(*step.item.subquery, item_env);
        } else if (step.item.kind == FromItem::Kind::TableFunc) {
            for (auto& a : step.item.args) phase_a_expr(a, item_env, &b);
        }
        env.rels.push_back(
            NameEnv::Rel{step.item.alias, detail::from_item_columns(ctx, step.item, item_env)});
    }

    if (b.select_star) {
        b.select_star = false;
        for (const auto& rel : env.rels) {
            for (const auto& col : rel.columns) {
                SelectItem item;
                item.expr = make_column_ref(rel.alias, col.name);
                item.span = span;
                b.items.push_back(std::move(item));
            }
        }
    }

    bool has_left = false;
    for (const auto& s : b.from)
        if (s.join == FromStep::Join::Left) has_left = true;
    if (b.from.size() > 1 && !b.where && !has_left) b.where = make_literal_bool(true);

    for (auto& step : b.from)
        if (step.on) phase_a_expr(step.on, &env, &b);
    for (auto& it : b.items) phase_a_expr(it.expr, &env, &b);
    if (b.where) phase_a_expr(b.where, &env, &b);
    if (b.group_by)
        for (auto& g : *b.group_by) phase_a_expr(g, &env, &b);
    if (b.having) phase_a_expr(b.having, &env, &b);
    for (auto& w : b.windows) {
        for (auto& p : w.partition) phase_a_expr(p, &env, &b);
        for (auto& o : w.order) phase_a_expr(o.expr, &env, &b);
    }
    for (auto& d : b.distinct_on) phase_a_expr(d, &env, &b);
    for (auto& o : b.order_by) phase_a_expr(o.expr, &env, &b);

    std::set<std::string> taken;
    int unnamed = 0;
    for (auto& it : b.items) {
        std::string name = it.alias;
        if (name.empty()) {
            if (const auto* ref = std::get_if<ColumnRef>(&it.expr->node)) name = ref->column;
            else name = "c" + std::to_string(++unnamed);
        }
        std::string base = name;
        for (int i = 2; taken.count(name); ++i) name = base + "_" + std::to_string(i);
        taken.insert(name);
        it.alias = name;
    }

    if (b.distinct) {
        b.distinct = false;
        std::vector<OrderItem> lead;
        for (const auto& it : b.items) {
            b.distinct_on.push_back(clone(*it.expr));
            lead.push_back(OrderItem{clone(*it.expr), false});
        }
        for (auto& o : b.order_by) lead.push_back(std::move(o));
        b.order_by = std::move(lead);
    }

    if (!b.group_by) {
        bool agg = (b.having && contains_aggregate(*b.having));
        for (const auto& it : b.items) agg = agg || contains_aggregate(*it.expr);
        for (const auto& o : b.order_by) agg = agg || contains_aggregate(*o.expr);
        for (const auto& d : b.distinct_on) agg = agg || contains_aggregate(*d);
        if (agg) b.group_by = std::vector<ExprPtr>{};
    }

    // explicit paging defaults whenever the order/paging layer is in play;
    // ordering that belongs to a DISTINCT ON layer does not count
    if (b.offset || b.limit || (!b.order_by.empty() && b.distinct_on.empty())) {
        if (!b.offset) b.offset = 0;
        if (!b.limit) b.limit = LimitClause{std::nullopt};
    }
}

void Normalizer::phase_a_expr(ExprPtr& e, const NameEnv* env, SelectBlock* block) {
    if (auto* bin = std::get_if<BinaryExpr>(&e->node)) {
        if ((bin->op == BinOp::Eq || bin->op == BinOp::Ne) && bin->lhs->is<RowExpr>() &&
            bin->rhs->is<RowExpr>()) {
            auto& l = bin->lhs->as<RowExpr>();
            auto& r = bin->rhs->as<RowExpr>();
            if (l.items.size() != r.items.size()) fail("ROW comparison arity mismatch", e->span);
            ExprPtr conj;
            for (size_t i = 0; i < l.items.size(); ++i) {
                auto cmp = make_binary(BinOp::Eq, std::move(l.items[i]), std::move(r.items[i]));
                conj = conj ? make_binary(BinOp::And, std::move(conj), std::move(cmp))
                            : std::move(cmp);
            }
            if (bin->op == BinOp::Ne) {
                auto neg = std::make_unique<Expr>();
                neg->span = e->span;
                neg->node = UnaryExpr{UnOp::Not, std::move(conj)};
                conj = std::move(neg);
            }
            conj->span = e->span;
            e = std::move(conj);
            phase_a_expr(e, env, block);
            return;
        }
    }
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, ColumnRef>) {
                if (n.table.empty()) {
                    for (const NameEnv* s = env; s; s = s->parent) {
                        const NameEnv::Rel* found = nullptr;
                        bool ambiguous = false;
                        for (const auto& rel : s->rels)
                            for (const auto& col : rel.columns)
                                if (col.name == n.column) {
                                    if (found && found != &rel) ambiguous = true;
                                    found = &rel;
                                }
                        if (ambiguous) fail("ambiguous column reference: " + n.column, e->span);
                        if (found) {
                            n.table = found->alias;
                            return;
                        }
                    }
                    fail("unknown column: " + n.column, e->span);
                }
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) {
                    ExprPtr op = std::move(n.operand);
                    n.operand = nullptr;
                    for (auto& arm : n.arms)
                        arm.when = make_binary(BinOp::Eq, clone(*op), std::move(arm.when));
                }
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.star) {
                    n.star = false;
                    n.arg = make_literal_int(1);
                }
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                if (block && !n.over.is_ref()) {
                    for (auto& p : n.over.partition) phase_a_expr(p, env, block);
                    for (auto& o : n.over.order) phase_a_expr(o.expr, env, block);
                    std::string found;
                    for (const auto& w : block->windows) {
                        if (w.partition.size() != n.over.partition.size() ||
                            w.order.size() != n.over.order.size())
                            continue;
                        bool same = true;
                        for (size_t i = 0; i < w.partition.size(); ++i)
                            same = same && equal(*w.partition[i], *n.over.partition[i]);
                        for (size_t i = 0; i < w.order.size(); ++i)
                            same = same && w.order[i].desc == n.over.order[i].desc &&
                                   equal(*w.order[i].expr, *n.over.order[i].expr);
                        if (same) {
                            found = w.name;
                            break;
                        }
                    }
                    if (found.empty()) {
                        WindowDef def;
                        def.name = names.fresh("w");
                        def.partition = std::move(n.over.partition);
                        def.order = std::move(n.over.order);
                        found = def.name;
                        block->windows.push_back(std::move(def));
                    }
                    auto frame = n.over.frame;
                    n.over = WindowSpec{};
                    n.over.name = found;
                    n.over.frame = frame;
                }
            }
        },
        e->node);
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, BinaryExpr>) {
                phase_a_expr(n.lhs, env, block);
                phase_a_expr(n.rhs, env, block);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                phase_a_expr(n.operand, env, block);
            } else if constexpr (std::is_same_v<T, RowExpr>) {
                for (auto& x : n.items) phase_a_expr(x, env, block);
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                phase_a_expr(n.probe, env, block);
                for (auto& x : n.items) phase_a_expr(x, env, block);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                for (auto& a : n.arms) {
                    phase_a_expr(a.when, env, block);
                    phase_a_expr(a.then, env, block);
                }
                if (n.else_arm) phase_a_expr(n.else_arm, env, block);
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                for (auto& x : n.args) phase_a_expr(x, env, block);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.arg) phase_a_expr(n.arg, env, block);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                for (auto& x : n.args) phase_a_expr(x, env, block);
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                normalize_subquery(*n.query, env);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                phase_a_expr(n.probe, env, block);
                normalize_subquery(*n.query, env);
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                normalize_subquery(*n.query, env);
            }
        },
        e->node);
}

void Normalizer::normalize_subquery(Query& sub, const NameEnv* env) {
    phase_a(sub, env);
    insert_binds(sub, env);
}

// ---------------------------------------------------------------------------
// free row variables and BIND

void collect_free_aliases(const Query& q, const std::set<std::string>& bound,
                          std::vector<std::string>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                std::set<std::string> inner = bound;
                for (const auto& s : n.from) {
                    if (s.item.kind == FromItem::Kind::Bind && !bound.count(s.item.alias) &&
                        std::find(out.begin(), out.end(), s.item.alias) == out.end())
                        out.push_back(s.item.alias);
                    inner.insert(s.item.alias);
                }
                std::function<void(const Expr&)> scan = [&](const Expr& e) {
                    walk_exprs(e, [&](const Expr& x) {
                        if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                            if (!ref->table.empty() && !inner.count(ref->table) &&
                                std::find(out.begin(), out.end(), ref->table) == out.end())
                                out.push_back(ref->table);
                        } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                            collect_free_aliases(*sq->query, inner, out);
                            return false;
                        } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                            scan(*in->probe);
                            collect_free_aliases(*in->query, inner, out);
                            return false;
                        } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                            collect_free_aliases(*ex->query, inner, out);
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
                        collect_free_aliases(*s.item.subquery, s.lateral ? so_far : bound, out);
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
                for (const auto& a : n.arms) collect_free_aliases(*a, bound, out);
            } else {
                for (const auto& b : n.bindings) collect_free_aliases(*b.query, bound, out);
                collect_free_aliases(*n.body, bound, out);
            }
        },
        q.node);
}

// a BIND anywhere along the onion spine already satisfies the alias
bool spine_has_bind(const Query& q, const std::string& alias) {
    if (const auto* b = std::get_if<SelectBlock>(&q.node)) {
        for (const auto& s : b->from) {
            if (s.item.kind == FromItem::Kind::Bind && s.item.alias == alias) return true;
            if (s.item.subquery && spine_has_bind(*s.item.subquery, alias)) return true;
        }
    }
    return false;
}

void Normalizer::insert_binds(Query& sub, const NameEnv* env) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                std::vector<std::string> free;
                collect_free_aliases(sub, {}, free);
                std::vector<std::string> vars;
                for (const auto& v : free) {
                    if (spine_has_bind(sub, v)) continue;
                    if (env && env->find_rel(v)) vars.push_back(v);
                }
                for (auto it = vars.rbegin(); it != vars.rend(); ++it) {
                    const auto* rel = env->find_rel(*it);
                    FromStep step;
                    step.item.kind = FromItem::Kind::Bind;
                    step.item.alias = *it;
                    for (const auto& col : rel->columns)
                        step.item.bind_columns.push_back(col.name);
                    n.from.insert(n.from.begin(), std::move(step));
                    if (n.from.size() > 1 && !n.where) n.where = make_literal_bool(true);
                }
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) insert_binds(*a, env);
            } else {
                insert_binds(*n.body, env);
            }
        },
        sub.node);
}

// ---------------------------------------------------------------------------
// phase B: clause isolation

enum class Shape { NotNormal, Map, Join, Left, Group, Window, Distinct, OrderBy };

bool items_plain(const SelectBlock& b) {
    for (const auto& it : b.items)
        if (contains_aggregate(*it.expr) || contains_window_func(*it.expr)) return false;
    return true;
}

Shape block_shape(const SelectBlock& b) {
    for (size_t i = 0; i < b.from.size(); ++i)
        if (b.from[i].join == FromStep::Join::Left && (i != 1 || b.from.size() != 2))
            return Shape::NotNormal;
    const bool left = b.from.size() == 2 && b.from[1].join == FromStep::Join::Left;
    const bool grp = b.group_by.has_value() || b.having != nullptr;
    const bool win = !b.windows.empty();
    const bool dst = !b.distinct_on.empty();
    const bool paging = b.offset.has_value() || b.limit.has_value();
    const bool ord = !b.order_by.empty();
    if (b.distinct || b.select_star) return Shape::NotNormal;

    auto items_have_case = [&]() {
        for (const auto& it : b.items)
            if (contains_case(*it.expr)) return true;
        return false;
    };
    if (left) {
        if (b.where || grp || win || dst || ord || paging) return Shape::NotNormal;
        if (items_have_case()) return Shape::NotNormal;
        return items_plain(b) ? Shape::Left : Shape::NotNormal;
    }
    if (grp) {
        if (b.where || win || dst || ord || paging || b.from.size() != 1) return Shape::NotNormal;
        for (const auto& it : b.items)
            if (contains_window_func(*it.expr)) return Shape::NotNormal;
        if (b.having && contains_window_func(*b.having)) return Shape::NotNormal;
        return Shape::Group;
    }
    if (win) {
        if (b.where || dst || ord || paging || b.from.size() != 1) return Shape::NotNormal;
        for (const auto& it : b.items)
            if (contains_aggregate(*it.expr)) return Shape::NotNormal;
        return Shape::Window;
    }
    if (dst) {
        if (b.where || paging || b.from.size() != 1 || !items_plain(b)) return Shape::NotNormal;
        if (b.order_by.size() < b.distinct_on.size()) return Shape::NotNormal;
        for (size_t i = 0; i < b.distinct_on.size(); ++i)
            if (!equal(*b.order_by[i].expr, *b.distinct_on[i])) return Shape::NotNormal;
        return Shape::Distinct;
    }
    if (ord || paging) {
        if (b.where || b.from.size() != 1 || !items_plain(b)) return Shape::NotNormal;
        if (!b.offset.has_value() || !b.limit.has_value()) return Shape::NotNormal;
        return Shape::OrderBy;
    }
    if (!items_plain(b)) return Shape::NotNormal;
    if (b.from.size() > 1 || b.where) {
        if (b.from.size() > 1 && !b.where) return Shape::NotNormal;
        if (b.from.size() > 1 && b.where && contains_case(*b.where)) return Shape::NotNormal;
        if (b.from.size() > 1 && items_have_case()) return Shape::NotNormal;
        return Shape::Join;
    }
    return Shape::Map;
}

void Normalizer::phase_b(QueryPtr& q, const NameEnv* outer) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                phase_b_block(q, outer);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) phase_b(a, outer);
            } else {
                NameEnv env;
                env.parent = outer;
                for (auto& b : n.bindings) {
                    if (n.recursive && b.query->template is<SetOpQuery>()) {
                        auto& arms = b.query->template as<SetOpQuery>().arms;
                        phase_b(arms[0], &env);
                        auto cols = detail::query_columns(ctx, *arms[0], &env);
                        if (!b.columns.empty())
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        env.ctes.emplace_back(b.name, cols);
                        for (size_t i = 1; i < arms.size(); ++i) phase_b(arms[i], &env);
                    } else {
                        phase_b(b.query, &env);
                        auto cols = detail::query_columns(ctx, *b.query, &env);
                        if (!b.columns.empty())
                            for (size_t i = 0; i < cols.size() && i < b.columns.size(); ++i)
                                cols[i].name = b.columns[i];
                        env.ctes.emplace_back(b.name, cols);
                    }
                }
                phase_b(n.body, &env);
            }
        },
        q->node);
}

void Normalizer::phase_b_block(QueryPtr& qp, const NameEnv* outer) {
    auto& b = qp->as<SelectBlock>();
    {
        NameEnv env;
        env.parent = outer;
        for (auto& step : b.from) {
            NameEnv partial = env;
            const NameEnv* item_env = step.lateral ? &partial : outer;
            if (step.item.kind == FromItem::Kind::Subquery) phase_b(step.item.subquery, item_env);
            env.rels.push_back(
                NameEnv::Rel{step.item.alias, detail::from_item_columns(ctx, step.item, item_env)});
        }
        for_block_exprs(b, [&](ExprPtr& e) {
            for_subqueries(e, [&](QueryPtr& s) { phase_b(s, &env); });
        });
    }
    if (block_shape(b) != Shape::NotNormal) return;
    restructure_block(qp, outer);
}

struct NeededRef {
    size_t step_index;
    size_t col_index;
    std::string alias;
    std::string column;
};

void Normalizer::restructure_block(QueryPtr& qp, const NameEnv* outer) {
    auto& b = qp->as<SelectBlock>();
    SourceSpan span = qp->span;

    NameEnv env;
    env.parent = outer;
    for (auto& step : b.from) {
        NameEnv partial = env;
        const NameEnv* item_env = step.lateral ? &partial : outer;
        env.rels.push_back(
            NameEnv::Rel{step.item.alias, detail::from_item_columns(ctx, step.item, item_env)});
    }

    bool has_left = false;
    for (const auto& s : b.from)
        if (s.join == FromStep::Join::Left) has_left = true;
    const bool left_layer_shape = b.from.size() == 2 && b.from[1].join == FromStep::Join::Left;
    const bool grp = b.group_by.has_value() || b.having != nullptr;
    const bool win = !b.windows.empty();
    const bool dst = !b.distinct_on.empty();
    const bool ord_layer =
        b.offset.has_value() || b.limit.has_value() || (!b.order_by.empty() && !dst);
    const bool hoist_where =
        b.where && (has_left || (b.from.size() > 1 && contains_case(*b.where)));
    const int upper = (grp ? 1 : 0) + (win ? 1 : 0) + (dst ? 1 : 0) + (ord_layer ? 1 : 0) +
                      (hoist_where ? 1 : 0);
    const bool chain_fold = has_left && !left_layer_shape; // left chain needs binary nesting
    bool case_items = false;
    if (b.from.size() > 1 || has_left)
        for (const auto& it : b.items) case_items = case_items || contains_case(*it.expr);
    const bool force_map = case_items && upper == 0; // CASE needs one row variable
    const bool fold_needed = upper > 0 && (b.from.size() > 1 || b.where || has_left);

    // detach upper clauses
    std::vector<SelectItem> items = std::move(b.items);
    ExprPtr where_hoisted;
    if (hoist_where) where_hoisted = std::move(b.where);
    std::optional<std::vector<ExprPtr>> group_keys = std::move(b.group_by);
    b.group_by.reset();
    ExprPtr having = std::move(b.having);
    std::vector<WindowDef> windows = std::move(b.windows);
    b.windows.clear();
    std::vector<ExprPtr> distinct_on = std::move(b.distinct_on);
    b.distinct_on.clear();
    std::vector<OrderItem> order_by = std::move(b.order_by);
    b.order_by.clear();
    auto offset = b.offset;
    auto limit = b.limit;
    b.offset.reset();
    b.limit.reset();

    auto each_upper = [&](const std::function<void(ExprPtr&)>& fn) {
        for (auto& it : items) fn(it.expr);
        if (where_hoisted) fn(where_hoisted);
        if (group_keys)
            for (auto& g : *group_keys) fn(g);
        if (having) fn(having);
        for (auto& w : windows) {
            for (auto& p : w.partition) fn(p);
            for (auto& o : w.order) fn(o.expr);
        }
        for (auto& d : distinct_on) fn(d);
        for (auto& o : order_by) fn(o.expr);
    };

    FromItem cur_item;
    std::string cur_alias;
    bool cur_item_set = false;

    if ((fold_needed || chain_fold || force_map) && (upper > 0 || chain_fold || force_map)) {
        // collect references needed above the fold (deep: subqueries keep
        // referencing this block's aliases through their BIND machinery)
        std::vector<NeededRef> needed;
        auto note_ref = [&](const std::string& alias, const std::string& column) {
            for (const auto& r : needed)
                if (r.alias == alias && r.column == column) return;
            for (size_t i = 0; i < env.rels.size(); ++i) {
                if (env.rels[i].alias != alias) continue;
                for (size_t c = 0; c < env.rels[i].columns.size(); ++c)
                    if (env.rels[i].columns[c].name == column)
                        needed.push_back(NeededRef{i, c, alias, column});
                return;
            }
        };
        std::function<void(const Query&)> note_query = [&](const Query& query) {
            walk_exprs(query, [&](const Expr& x) {
                if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                    note_ref(ref->table, ref->column);
                return true;
            });
            // nested BIND items reference this block's aliases column-wise
            std::function<void(const Query&)> binds = [&](const Query& query2) {
                std::visit(
                    [&](const auto& nn) {
                        using TT = std::decay_t<decltype(nn)>;
                        if constexpr (std::is_same_v<TT, SelectBlock>) {
                            for (const auto& s : nn.from) {
                                if (s.item.kind == FromItem::Kind::Bind)
                                    for (const auto& col : s.item.bind_columns)
                                        note_ref(s.item.alias, col);
                                if (s.item.subquery) binds(*s.item.subquery);
                            }
                        } else if constexpr (std::is_same_v<TT, SetOpQuery>) {
                            for (const auto& a : nn.arms) binds(*a);
                        } else {
                            for (const auto& bb : nn.bindings) binds(*bb.query);
                            binds(*nn.body);
                        }
                    },
                    query2.node);
                walk_exprs(query2, [&](const Expr& x) {
                    const Query* sub = nullptr;
                    if (const auto* s = std::get_if<SubqueryExpr>(&x.node)) sub = s->query.get();
                    else if (const auto* s2 = std::get_if<InSubqueryExpr>(&x.node))
                        sub = s2->query.get();
                    else if (const auto* s3 = std::get_if<ExistsExpr>(&x.node)) sub = s3->query.get();
                    if (sub) binds(*sub);
                    return true;
                });
            };
            binds(query);
        };
        auto note_expr = [&](const Expr& e) {
            walk_exprs(e, [&](const Expr& x) {
                if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                    note_ref(ref->table, ref->column);
                else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node))
                    note_query(*sq->query);
                else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node))
                    note_query(*in->query);
                else if (const auto* ex = std::get_if<ExistsExpr>(&x.node))
                    note_query(*ex->query);
                return true;
            });
        };
        each_upper([&](ExprPtr& e) { note_expr(*e); });
        // ON predicates and lateral arguments of later steps may reach back
        // across a left-join fold boundary
        if (has_left) {
            for (const auto& step : b.from) {
                if (step.on) note_expr(*step.on);
                for (const auto& a : step.item.args) note_expr(*a);
            }
        }
        std::sort(needed.begin(), needed.end(), [](const NeededRef& a, const NeededRef& b2) {
            return std::tie(a.step_index, a.col_index) < std::tie(b2.step_index, b2.col_index);
        });

        // fold the from chain bottom-up; a left step closes the segment
        // accumulated so far into the left operand of its own layer
        RefMap current; // original ref -> current coordinates
        auto wrap_layer = [&](std::vector<FromStep> steps, ExprPtr pred) {
            SelectBlock layer;
            layer.from = std::move(steps);
            layer.where = std::move(pred);
            if (!layer.where && layer.from.size() > 1) layer.where = make_literal_bool(true);
            std::string alias = names.fresh("t");
            const bool mangle = layer.from.size() > 1;
            std::set<std::string> wrapped;
            for (const auto& s : layer.from) wrapped.insert(s.item.alias);
            std::set<std::string> expose_taken;
            for (const auto& r : needed) {
                std::pair<std::string, std::string> cursrc = {r.alias, r.column};
                auto it = current.find({r.alias, r.column});
                if (it != current.end()) cursrc = it->second;
                if (!wrapped.count(cursrc.first)) continue;
                std::string exposed = mangle ? cursrc.first + "_" + cursrc.second : cursrc.second;
                std::string base = exposed;
                for (int i = 2; expose_taken.count(exposed); ++i)
                    exposed = base + "_" + std::to_string(i);
                expose_taken.insert(exposed);
                SelectItem item;
                item.expr = make_column_ref(cursrc.first, cursrc.second);
                item.alias = exposed;
                layer.items.push_back(std::move(item));
                current[{r.alias, r.column}] = {alias, exposed};
            }
            if (layer.items.empty()) {
                SelectItem item;
                item.expr = make_literal_int(1);
                item.alias = "one";
                layer.items.push_back(std::move(item));
            }
            auto q = std::make_unique<Query>();
            q->span = span;
            q->node = std::move(layer);
            FromItem out;
            out.kind = FromItem::Kind::Subquery;
            out.subquery = std::move(q);
            out.alias = alias;
            return out;
        };
        auto apply_current = [&](ExprPtr& e) {
            RefMap flat;
            for (const auto& [from, to] : current) flat.emplace(from, to);
            substitute_refs_deep(e, flat);
        };

        std::vector<FromStep> seg;
        FromItem folded;
        bool have_folded = false;
        for (auto& step : b.from) {
            // rewrite lateral arguments / ON predicates to current coordinates
            for (auto& a : step.item.args) apply_current(a);
            if (step.on) apply_current(step.on);
            if (step.join == FromStep::Join::Left) {
                // close the accumulated segment into the left operand
                FromItem left_operand;
                if (!have_folded && seg.size() == 1 && seg[0].join == FromStep::Join::Cross) {
                    left_operand = std::move(seg[0].item);
                } else if (have_folded && seg.empty()) {
                    left_operand = std::move(folded);
                } else {
                    std::vector<FromStep> steps;
                    if (have_folded) {
                        FromStep fs;
                        fs.item = std::move(folded);
                        steps.push_back(std::move(fs));
                    }
                    for (auto& s : seg) steps.push_back(std::move(s));
                    left_operand = wrap_layer(std::move(steps), nullptr);
                }
                seg.clear();
                // now wrap the binary left join into its own layer
                ExprPtr on = std::move(step.on);
                apply_current(on);
                std::vector<FromStep> two;
                FromStep l;
                l.item = std::move(left_operand);
                two.push_back(std::move(l));
                FromStep r;
                r.join = FromStep::Join::Left;
                r.lateral = step.lateral;
                r.item = std::move(step.item);
                r.on = std::move(on);
                two.push_back(std::move(r));
                SelectBlock layer;
                layer.from = std::move(two);
                std::string alias = names.fresh("t");
                std::set<std::string> wrapped;
                for (const auto& s : layer.from) wrapped.insert(s.item.alias);
                std::set<std::string> expose_taken;
                for (const auto& rr : needed) {
                    std::pair<std::string, std::string> cursrc = {rr.alias, rr.column};
                    auto it = current.find({rr.alias, rr.column});
                    if (it != current.end()) cursrc = it->second;
                    if (!wrapped.count(cursrc.first)) continue;
                    std::string exposed = cursrc.first + "_" + cursrc.second;
                    std::string base = exposed;
                    for (int i = 2; expose_taken.count(exposed); ++i)
                        exposed = base + "_" + std::to_string(i);
                    expose_taken.insert(exposed);
                    SelectItem item;
                    item.expr = make_column_ref(cursrc.first, cursrc.second);
                    item.alias = exposed;
                    layer.items.push_back(std::move(item));
                    current[{rr.alias, rr.column}] = {alias, exposed};
                }
                if (layer.items.empty()) {
                    SelectItem item;
                    item.expr = make_literal_int(1);
                    item.alias = "one";
                    layer.items.push_back(std::move(item));
                }
                auto q = std::make_unique<Query>();
                q->span = span;
                q->node = std::move(layer);
                folded = FromItem{};
                folded.kind = FromItem::Kind::Subquery;
                folded.subquery = std::move(q);
                folded.alias = alias;
                have_folded = true;
            } else {
                seg.push_back(std::move(step));
            }
        }
        // final segment plus embedded predicate
        ExprPtr embedded = hoist_where ? nullptr : std::move(b.where);
        if (embedded) apply_current(embedded);
        std::vector<FromStep> steps;
        if (have_folded) {
            FromStep fs;
            fs.item = std::move(folded);
            steps.push_back(std::move(fs));
        }
        for (auto& s : seg) steps.push_back(std::move(s));
        if (steps.size() == 1 && !embedded) {
            cur_item = std::move(steps[0].item);
            cur_alias = cur_item.alias;
        } else {
            cur_item = wrap_layer(std::move(steps), std::move(embedded));
            cur_alias = cur_item.alias;
        }
        cur_item_set = true;
        each_upper([&](ExprPtr& e) { apply_current(e); });

        if (upper == 0) {
            // a restructured chain with nothing above becomes a map layer
            SelectBlock m;
            FromStep fs;
            fs.item = std::move(cur_item);
            m.from.push_back(std::move(fs));
            m.items = std::move(items);
            auto q = std::make_unique<Query>();
            q->span = span;
            q->node = std::move(m);
            qp = std::move(q);
            return;
        }
    } else if (upper > 0) {
        cur_item = std::move(b.from[0].item);
        cur_alias = cur_item.alias;
        cur_item_set = true;
    }

    if (!cur_item_set) {
        // no upper layers and no refolding: restore and leave as the
        // innermost layer
        b.items = std::move(items);
        b.group_by = std::move(group_keys);
        b.having = std::move(having);
        b.windows = std::move(windows);
        b.distinct_on = std::move(distinct_on);
        b.order_by = std::move(order_by);
        b.offset = offset;
        b.limit = limit;
        if (where_hoisted) b.where = std::move(where_hoisted);
        return;
    }

    auto make_step = [](FromItem&& item) {
        FromStep s;
        s.item = std::move(item);
        return s;
    };
    auto wrap = [&](SelectBlock&& blk, const std::string& alias) {
        auto q = std::make_unique<Query>();
        q->span = span;
        q->node = std::move(blk);
        FromItem item;
        item.kind = FromItem::Kind::Subquery;
        item.subquery = std::move(q);
        item.alias = alias;
        return item;
    };
    auto finish = [&](SelectBlock&& blk) {
        auto q = std::make_unique<Query>();
        q->span = span;
        q->node = std::move(blk);
        qp = std::move(q);
    };

    // ---- hoisted filter layer
    if (where_hoisted) {
        const bool is_top = !grp && !win && !dst && !ord_layer;
        SelectBlock f;
        f.from.push_back(make_step(std::move(cur_item)));
        f.where = std::move(where_hoisted);
        if (is_top) {
            f.items = std::move(items);
            finish(std::move(f));
            return;
        }
        std::string next_alias = names.fresh("t");
        std::set<std::string> exposed;
        RefMap subst;
        each_upper([&](ExprPtr& e) {
            walk_exprs(*e, [&](const Expr& x) {
                if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                    if (ref->table == cur_alias && !exposed.count(ref->column)) {
                        exposed.insert(ref->column);
                        SelectItem item;
                        item.expr = make_column_ref(cur_alias, ref->column);
                        item.alias = ref->column;
                        f.items.push_back(std::move(item));
                        subst[{cur_alias, ref->column}] = {next_alias, ref->column};
                    }
                return true;
            });
        });
        if (f.items.empty()) {
            SelectItem item;
            item.expr = make_literal_int(1);
            item.alias = "one";
            f.items.push_back(std::move(item));
        }
        each_upper([&](ExprPtr& e) { substitute_refs_deep(e, subst); });
        cur_item = wrap(std::move(f), next_alias);
        cur_alias = next_alias;
    }

    // ---- group layer
    if (grp) {
        const bool is_top = !win && !dst && !ord_layer;
        SelectBlock g;
        g.from.push_back(make_step(std::move(cur_item)));
        g.group_by = std::move(group_keys);
        g.having = std::move(having);
        if (is_top) {
            g.items = std::move(items);
            finish(std::move(g));
            return;
        }
        std::string next_alias = names.fresh("t");
        std::vector<std::pair<ExprPtr, std::string>> exposed;
        std::set<std::string> taken;
        auto expose = [&](const Expr& x, const std::string& hint) -> std::string {
            for (const auto& [pat, name] : exposed)
                if (equal(*pat, x)) return name;
            std::string name = hint;
            for (int i = 2; taken.count(name); ++i) name = hint + "_" + std::to_string(i);
            taken.insert(name);
            SelectItem item;
            item.expr = clone(x);
            item.alias = name;
            g.items.push_back(std::move(item));
            exposed.emplace_back(clone(x), name);
            return name;
        };
        int nagg = 0;
        auto upper_rewrite = [&](ExprPtr& e) {
            rewrite_expr(e, [&](const Expr& x) -> ExprPtr {
                if (x.is<AggregateExpr>())
                    return make_column_ref(next_alias, expose(x, "agg" + std::to_string(++nagg)));
                if (g.group_by)
                    for (const auto& key : *g.group_by)
                        if (equal(*key, x)) {
                            std::string hint = "k";
                            if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                                hint = ref->column;
                            return make_column_ref(next_alias, expose(x, hint));
                        }
                return nullptr;
            });
        };
        for (auto& it : items) upper_rewrite(it.expr);
        for (auto& w : windows) {
            for (auto& p : w.partition) upper_rewrite(p);
            for (auto& o : w.order) upper_rewrite(o.expr);
        }
        for (auto& d : distinct_on) upper_rewrite(d);
        for (auto& o : order_by) upper_rewrite(o.expr);
        if (g.items.empty()) {
            SelectItem item;
            item.expr = make_literal_int(1);
            item.alias = "one";
            g.items.push_back(std::move(item));
        }
        cur_item = wrap(std::move(g), next_alias);
        cur_alias = next_alias;
    }

    // ---- window layer
    if (win) {
        const bool is_top = !dst && !ord_layer;
        SelectBlock w;
        w.from.push_back(make_step(std::move(cur_item)));
        w.windows = std::move(windows);
        w.items = std::move(items);
        if (is_top) {
            finish(std::move(w));
            return;
        }
        // the layers above only see the window layer's outputs: criteria
        // either match an item or ride along as carrier columns
        std::string next_alias = names.fresh("t");
        size_t n_items = w.items.size();
        int ncarry = 0;
        std::set<std::string> taken;
        for (const auto& it : w.items) taken.insert(it.alias);
        auto rewrite_criterion = [&](ExprPtr& e) {
            for (size_t i = 0; i < n_items; ++i)
                if (equal(*w.items[i].expr, *e)) {
                    e = make_column_ref(next_alias, w.items[i].alias);
                    return;
                }
            for (size_t i = n_items; i < w.items.size(); ++i)
                if (equal(*w.items[i].expr, *e)) {
                    e = make_column_ref(next_alias, w.items[i].alias);
                    return;
                }
            std::string name = "ord" + std::to_string(++ncarry);
            while (taken.count(name)) name += "x";
            taken.insert(name);
            SelectItem carry;
            carry.expr = std::move(e);
            carry.alias = name;
            e = make_column_ref(next_alias, name);
            w.items.push_back(std::move(carry));
        };
        for (auto& d : distinct_on) rewrite_criterion(d);
        for (auto& o : order_by) rewrite_criterion(o.expr);
        items.clear();
        for (size_t i = 0; i < n_items; ++i) {
            SelectItem it;
            it.expr = make_column_ref(next_alias, w.items[i].alias);
            it.alias = w.items[i].alias;
            items.push_back(std::move(it));
        }
        cur_item = wrap(std::move(w), next_alias);
        cur_alias = next_alias;
    }

    // ---- distinct layer (carries the ordering criteria)
    if (dst) {
        const bool is_top = !(offset.has_value() || limit.has_value());
        SelectBlock d;
        d.from.push_back(make_step(std::move(cur_item)));
        d.distinct_on = std::move(distinct_on);
        for (auto& key : d.distinct_on) d.order_by.push_back(OrderItem{clone(*key), false});
        for (auto& o : order_by) {
            bool dup = false;
            for (const auto& key : d.distinct_on) dup = dup || equal(*key, *o.expr);
            if (!dup) d.order_by.push_back(std::move(o));
        }
        order_by.clear();
        d.items = std::move(items);
        if (is_top) {
            finish(std::move(d));
            return;
        }
        std::string next_alias = names.fresh("t");
        std::vector<SelectItem> upper_items;
        std::vector<OrderItem> outer_order;
        for (const auto& o : d.order_by) {
            for (const auto& it : d.items)
                if (equal(*it.expr, *o.expr)) {
                    outer_order.push_back(OrderItem{make_column_ref(next_alias, it.alias), o.desc});
                    break;
                }
        }
        for (const auto& it : d.items) {
            SelectItem u;
            u.expr = make_column_ref(next_alias, it.alias);
            u.alias = it.alias;
            upper_items.push_back(std::move(u));
        }
        items = std::move(upper_items);
        order_by = std::move(outer_order);
        cur_item = wrap(std::move(d), next_alias);
        cur_alias = next_alias;
    }

    // ---- outer order/paging layer
    SelectBlock o;
    o.from.push_back(make_step(std::move(cur_item)));
    o.items = std::move(items);
    o.order_by = std::move(order_by);
    o.offset = offset.has_value() ? offset : std::optional<int64_t>(0);
    o.limit = limit.has_value() ? limit : std::optional<LimitClause>(LimitClause{std::nullopt});
    finish(std::move(o));
}

// ---------------------------------------------------------------------------
// check_normal_form

void check_block(const SelectBlock& b, SourceSpan span, std::vector<Violation>& out);

void check_query_nf(const Query& q, std::vector<Violation>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                check_block(n, q.span, out);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (const auto& a : n.arms) check_query_nf(*a, out);
            } else {
                for (const auto& b : n.bindings) check_query_nf(*b.query, out);
                check_query_nf(*n.body, out);
            }
        },
        q.node);
}

void check_exprs_nf(const SelectBlock& b, std::vector<Violation>& out) {
    auto scan = [&](const Expr& e) {
        walk_exprs(e, [&](const Expr& x) {
            if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                if (ref->table.empty())
                    out.push_back(Violation{"unqualified column reference: " + ref->column, x.span});
            } else if (const auto* w = std::get_if<WindowFuncExpr>(&x.node)) {
                if (!w->over.is_ref() &&
                    (!w->over.partition.empty() || !w->over.order.empty()))
                    out.push_back(Violation{"inline window specification", x.span});
            } else if (const auto* c = std::get_if<CaseExpr>(&x.node)) {
                if (c->operand)
                    out.push_back(Violation{"simple CASE form", x.span});
            } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                check_query_nf(*sq->query, out);
                return false;
            } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                check_query_nf(*in->query, out);
            } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                check_query_nf(*ex->query, out);
                return false;
            }
            return true;
        });
    };
    for (const auto& it : b.items) scan(*it.expr);
    for (const auto& s : b.from) {
        for (const auto& a : s.item.args) scan(*a);
        if (s.on) scan(*s.on);
    }
    if (b.where) scan(*b.where);
    if (b.group_by)
        for (const auto& g : *b.group_by) scan(*g);
    if (b.having) scan(*b.having);
    for (const auto& w : b.windows) {
        for (const auto& p : w.partition) scan(*p);
        for (const auto& o : w.order) scan(*o.expr);
    }
    for (const auto& d : b.distinct_on) scan(*d);
    for (const auto& o : b.order_by) scan(*o.expr);
}

void check_block(const SelectBlock& b, SourceSpan span, std::vector<Violation>& out) {
    if (b.select_star) out.push_back(Violation{"SELECT * not expanded", span});
    if (b.distinct) out.push_back(Violation{"DISTINCT not expanded to DISTINCT ON", span});
    for (const auto& it : b.items)
        if (it.alias.empty()) out.push_back(Violation{"select item lacks a name", it.span});
    for (const auto& s : b.from)
        if (s.item.alias.empty()) out.push_back(Violation{"from item lacks an alias", s.item.span});

    if (block_shape(b) == Shape::NotNormal) {
        std::vector<std::string> clauses;
        bool left = false;
        for (const auto& s : b.from)
            if (s.join == FromStep::Join::Left) left = true;
        if (b.from.size() > 1) clauses.push_back("join");
        if (left) clauses.push_back("LEFT JOIN");
        if (b.where) clauses.push_back("WHERE");
        if (b.group_by || b.having) clauses.push_back("GROUP BY/HAVING");
        if (!b.windows.empty()) clauses.push_back("WINDOW");
        if (!b.distinct_on.empty()) clauses.push_back("DISTINCT ON");
        if (!b.order_by.empty() || b.offset || b.limit) clauses.push_back("ORDER BY/OFFSET/LIMIT");
        std::string msg = "block is not a single onion layer; clauses:";
        for (const auto& c : clauses) msg += " " + c;
        out.push_back(Violation{msg, span});
    }
    check_exprs_nf(b, out);
    for (const auto& s : b.from)
        if (s.item.subquery) check_query_nf(*s.item.subquery, out);
}

} // namespace

QueryPtr normalize(const Query& q, const Catalog& cat) {
    QueryPtr out = clone(q);
    Normalizer n(cat, *out);
    n.inline_udfs(*out);
    n.phase_a(*out, nullptr);
    n.phase_b(out, nullptr);
    return out;
}

std::vector<Violation> check_normal_form(const Query& q) {
    std::vector<Violation> out;
    check_query_nf(q, out);
    return out;
}

} // namespace sqlprov
