#include "sqlprov/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace sqlprov {

namespace {

[[noreturn]] void oracle_error(const std::string& msg, SourceSpan span = {}) {
    throw SqlError(ErrorKind::Evaluation, msg, span);
}

/// Annotated value: what regular evaluation computes plus the cell's
/// dependency set.
struct AValue {
    Value v;
    DepSet d;
};

/// Annotated relation. Cells carry per-cell sets at cell granularity; at
/// row granularity `prov` carries the row's single set and `deps` stays
/// empty.
struct ARow {
    Rho rho = 0;
    std::vector<Value> vals;
    std::vector<DepSet> deps;
    DepSet prov;
};

struct ATable {
    std::vector<std::string> cols;
    std::vector<ARow> rows;
};

struct Slot {
    std::string alias;
    std::vector<std::string> cols;
    size_t offset;
};

struct Scope {
    std::vector<Slot> slots;
    size_t width = 0;

    const Slot* find(const std::string& alias) const {
        for (const auto& s : slots)
            if (s.alias == alias) return &s;
        return nullptr;
    }
};

/// Working row during block evaluation: one rho + prov per from-slot, plus
/// the dependency set of the predicate conjuncts already applied to it.
struct WRow {
    std::vector<Value> vals;
    std::vector<DepSet> deps;   // cell granularity
    std::vector<Rho> slot_rho;
    std::vector<DepSet> slot_prov; // row granularity
    DepSet pred_deps;
};

struct WEnv {
    const WEnv* parent = nullptr;
    const Scope* scope = nullptr;
    const WRow* row = nullptr;
};

struct Oracle {
    const Database& db;
    TransformOptions opts;
    DepBackend backend;
    const DepUniverse* universe;
    Rho next_rho;
    // simulated write-once discipline: re-evaluated constructs reuse the
    // ids they allocated for the same input key, like the log store does
    std::map<std::pair<const void*, std::vector<Rho>>, Rho> once_;
    std::vector<std::map<std::string, ATable>> cte_frames;
    std::map<const Query*, ATable> memo;
    std::map<const void*, bool> correlation_cache;

    Oracle(const Database& d, TransformOptions o, DepBackend b, const DepUniverse* u)
        : db(d), opts(o), backend(b), universe(u), next_rho(d.base_row_count() + 1) {}

    bool row_mode() const { return opts.granularity == Granularity::Row; }

    Rho alloc_once(const void* node, std::vector<Rho> key) {
        auto it = once_.find({node, key});
        if (it != once_.end()) return it->second;
        Rho rho = next_rho++;
        once_.emplace(std::make_pair(node, std::move(key)), rho);
        return rho;
    }

    DepSet empty() const {
        return backend == DepBackend::Array ? DepSet::empty_array() : DepSet::empty_bitset(universe);
    }
    DepSet maybe_why(DepSet d) const { return opts.why ? d.mark_why() : empty(); }

    const ATable* find_cte(const std::string& name) const {
        for (auto it = cte_frames.rbegin(); it != cte_frames.rend(); ++it) {
            auto found = it->find(name);
            if (found != it->end()) return &found->second;
        }
        return nullptr;
    }

    bool references_cte(const Query& q) const {
        bool found = false;
        std::function<void(const Query&)> rec = [&](const Query& query) {
            std::visit(
                [&](const auto& n) {
                    using T = std::decay_t<decltype(n)>;
                    if constexpr (std::is_same_v<T, SelectBlock>) {
                        for (const auto& s : n.from) {
                            if (s.item.kind == FromItem::Kind::Table && find_cte(s.item.table))
                                found = true;
                            if (s.item.subquery) rec(*s.item.subquery);
                        }
                    } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                        for (const auto& a : n.arms) rec(*a);
                    } else {
                        for (const auto& b : n.bindings) rec(*b.query);
                        rec(*n.body);
                    }
                },
                query.node);
            walk_exprs(query, [&](const Expr& x) {
                const Query* sub = nullptr;
                if (const auto* s = std::get_if<SubqueryExpr>(&x.node)) sub = s->query.get();
                else if (const auto* s2 = std::get_if<InSubqueryExpr>(&x.node)) sub = s2->query.get();
                else if (const auto* s3 = std::get_if<ExistsExpr>(&x.node)) sub = s3->query.get();
                if (sub) rec(*sub);
                return true;
            });
        };
        rec(q);
        return found;
    }

    bool query_uncorrelated(const Query& q) {
        auto it = correlation_cache.find(&q);
        if (it == correlation_cache.end()) {
            std::set<std::string> frees;
            free_aliases(q, {}, frees);
            it = correlation_cache.emplace(&q, frees.empty()).first;
        }
        return it->second;
    }

    static void free_aliases(const Query& q, std::set<std::string> bound,
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
                    std::function<void(const Expr&)> scan = [&](const Expr& e) {
                        walk_exprs(e, [&](const Expr& x) {
                            if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                                if (!ref->table.empty() && !inner.count(ref->table))
                                    out.insert(ref->table);
                            } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                                free_aliases(*sq->query, inner, out);
                                return false;
                            } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                                scan(*in->probe);
                                free_aliases(*in->query, inner, out);
                                return false;
                            } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                                free_aliases(*ex->query, inner, out);
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
                            free_aliases(*s.item.subquery, s.lateral ? so_far : bound, out);
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
                    for (const auto& a : n.arms) free_aliases(*a, bound, out);
                } else {
                    for (const auto& b : n.bindings) free_aliases(*b.query, bound, out);
                    free_aliases(*n.body, bound, out);
                }
            },
            q.node);
    }

    // ==== expression evaluation ===========================================

    struct Ctx {
        const Scope* scope = nullptr;
        const WRow* row = nullptr;
        const WEnv* outer = nullptr;

        WEnv as_env() const {
            WEnv e;
            e.parent = outer;
            e.scope = scope;
            e.row = row;
            return e;
        }
    };

    AValue lookup(const ColumnRef& ref, const Ctx& ctx, SourceSpan span) {
        auto find_in = [&](const Scope* scope, const WRow* row) -> std::optional<AValue> {
            if (!scope || !row) return std::nullopt;
            if (!ref.table.empty()) {
                const Slot* slot = scope->find(ref.table);
                if (!slot) return std::nullopt;
                for (size_t c = 0; c < slot->cols.size(); ++c) {
                    if (slot->cols[c] == ref.column) {
                        size_t i = slot->offset + c;
                        size_t slot_idx = static_cast<size_t>(slot - scope->slots.data());
                        DepSet d = row_mode() ? row->slot_prov[slot_idx] : row->deps[i];
                        return AValue{row->vals[i], std::move(d)};
                    }
                }
                oracle_error("unknown column: " + ref.table + "." + ref.column, span);
            }
            const Slot* where = nullptr;
            size_t col = 0;
            for (const auto& slot : scope->slots) {
                for (size_t c = 0; c < slot.cols.size(); ++c)
                    if (slot.cols[c] == ref.column) {
                        if (where) oracle_error("ambiguous column: " + ref.column, span);
                        where = &slot;
                        col = c;
                    }
            }
            if (!where) return std::nullopt;
            size_t i = where->offset + col;
            size_t slot_idx = static_cast<size_t>(where - scope->slots.data());
            DepSet d = row_mode() ? row->slot_prov[slot_idx] : row->deps[i];
            return AValue{row->vals[i], std::move(d)};
        };
        if (auto v = find_in(ctx.scope, ctx.row)) return *v;
        for (const WEnv* e = ctx.outer; e; e = e->parent)
            if (auto v = find_in(e->scope, e->row)) return *v;
        oracle_error("unbound reference: " + ref.table + "." + ref.column, span);
    }

    AValue eval(const Expr& e, const Ctx& ctx) {
        return std::visit(
            [&](const auto& n) -> AValue {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Literal>) {
                    Value v = std::visit(
                        [](const auto& x) -> Value {
                            using V = std::decay_t<decltype(x)>;
                            if constexpr (std::is_same_v<V, std::monostate>)
                                return std::monostate{};
                            else
                                return x;
                        },
                        n.value);
                    return {std::move(v), empty()};
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    return lookup(n, ctx, e.span);
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    AValue l = eval(*n.lhs, ctx);
                    AValue r = eval(*n.rhs, ctx);
                    Value v = binary_value(n.op, l.v, r.v, e.span);
                    return {std::move(v), l.d.union_with(r.d)};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    AValue o = eval(*n.operand, ctx);
                    Value v;
                    switch (n.op) {
                        case UnOp::Neg:
                            if (is_null(o.v)) v = std::monostate{};
                            else if (const auto* i = std::get_if<int64_t>(&o.v)) v = -*i;
                            else v = -std::get<double>(o.v);
                            break;
                        case UnOp::Not:
                            if (is_null(o.v)) v = std::monostate{};
                            else v = !std::get<bool>(o.v);
                            break;
                        case UnOp::IsNull: v = is_null(o.v); break;
                        case UnOp::IsNotNull: v = !is_null(o.v); break;
                    }
                    return {std::move(v), std::move(o.d)};
                } else if constexpr (std::is_same_v<T, RowExpr>) {
                    oracle_error("ROW outside a comparison should be normalized away", e.span);
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    AValue probe = eval(*n.probe, ctx);
                    DepSet d = probe.d;
                    bool hit = false, saw_null = is_null(probe.v);
                    for (const auto& item : n.items) {
                        AValue x = eval(*item, ctx);
                        d = d.union_with(x.d);
                        if (is_null(x.v)) {
                            saw_null = true;
                            continue;
                        }
                        if (!is_null(probe.v) && values_equal_sql(probe.v, x.v)) hit = true;
                    }
                    Value v;
                    if (hit) v = !n.negated;
                    else if (saw_null) v = std::monostate{};
                    else v = n.negated;
                    return {std::move(v), std::move(d)};
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    if (n.operand) oracle_error("simple CASE should be normalized away", e.span);
                    DepSet guards = empty();
                    for (size_t i = 0; i < n.arms.size(); ++i) {
                        AValue w = eval(*n.arms[i].when, ctx);
                        guards = guards.union_with(w.d);
                        if (value_truthy(w.v)) {
                            AValue t = eval(*n.arms[i].then, ctx);
                            return {std::move(t.v), t.d.union_with(maybe_why(guards))};
                        }
                    }
                    AValue t{Value(std::monostate{}), empty()};
                    if (n.else_arm) t = eval(*n.else_arm, ctx);
                    return {std::move(t.v), t.d.union_with(maybe_why(guards))};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    std::vector<AValue> args;
                    for (const auto& a : n.args) args.push_back(eval(*a, ctx));
                    DepSet d = empty();
                    for (const auto& a : args) d = d.union_with(a.d);
                    Value v = scalar_value(n.name, args, e.span);
                    return {std::move(v), std::move(d)};
                } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                    oracle_error("aggregate outside a group layer", e.span);
                } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                    oracle_error("window function outside a window layer", e.span);
                } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                    ATable local;
                    const ATable* t = subquery_table(*n.query, ctx, local);
                    if (t->cols.size() != 1)
                        oracle_error("scalar subquery must produce one column", e.span);
                    if (t->rows.size() > 1)
                        oracle_error("scalar subquery produced more than one row", e.span);
                    DepSet d = empty();
                    for (const auto& row : t->rows)
                        d = d.union_with(row_mode() ? row.prov : row.deps[0]);
                    Value v = t->rows.empty() ? Value(std::monostate{}) : t->rows[0].vals[0];
                    return {std::move(v), std::move(d)};
                } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                    AValue probe = eval(*n.probe, ctx);
                    ATable local;
                    const ATable* t = subquery_table(*n.query, ctx, local);
                    if (t->cols.size() != 1)
                        oracle_error("IN subquery must produce one column", e.span);
                    DepSet d = probe.d;
                    bool hit = false, saw_null = is_null(probe.v);
                    for (const auto& row : t->rows) {
                        d = d.union_with(row_mode() ? row.prov : row.deps[0]);
                        if (is_null(row.vals[0])) {
                            saw_null = true;
                            continue;
                        }
                        if (!is_null(probe.v) && values_equal_sql(probe.v, row.vals[0])) hit = true;
                    }
                    Value v;
                    if (hit) v = !n.negated;
                    else if (saw_null) v = std::monostate{};
                    else v = n.negated;
                    return {std::move(v), std::move(d)};
                } else {
                    static_assert(std::is_same_v<T, ExistsExpr>);
                    ATable local;
                    const ATable* t = subquery_table(*n.query, ctx, local);
                    DepSet d = empty();
                    for (const auto& row : t->rows)
                        d = d.union_with(row_mode() ? row.prov : row.deps[0]);
                    bool exists = !t->rows.empty();
                    return {Value(n.negated ? !exists : exists), std::move(d)};
                }
            },
            e.node);
    }

    const ATable* subquery_table(const Query& q, const Ctx& ctx, ATable& local) {
        if (query_uncorrelated(q) && !references_cte(q)) {
            auto it = memo.find(&q);
            if (it == memo.end()) {
                WEnv env = ctx.as_env();
                it = memo.emplace(&q, eval_query(q, &env)).first;
            }
            return &it->second;
        }
        WEnv env = ctx.as_env();
        local = eval_query(q, &env);
        return &local;
    }

    static Value binary_value(BinOp op, const Value& l, const Value& r, SourceSpan span) {
        if (op == BinOp::And || op == BinOp::Or) {
            auto tri = [](const Value& v) -> int {
                if (is_null(v)) return -1;
                return std::get<bool>(v) ? 1 : 0;
            };
            int a = tri(l), b = tri(r);
            if (op == BinOp::And) {
                if (a == 0 || b == 0) return false;
                if (a == -1 || b == -1) return std::monostate{};
                return true;
            }
            if (a == 1 || b == 1) return true;
            if (a == -1 || b == -1) return std::monostate{};
            return false;
        }
        if (is_null(l) || is_null(r)) return std::monostate{};
        switch (op) {
            case BinOp::Eq: return values_equal_sql(l, r);
            case BinOp::Ne: return !values_equal_sql(l, r);
            case BinOp::Lt: return compare_values(l, r) < 0;
            case BinOp::Le: return compare_values(l, r) <= 0;
            case BinOp::Gt: return compare_values(l, r) > 0;
            case BinOp::Ge: return compare_values(l, r) >= 0;
            default: break;
        }
        auto as_d = [](const Value& v) {
            if (const auto* i = std::get_if<int64_t>(&v)) return static_cast<double>(*i);
            return std::get<double>(v);
        };
        if (op == BinOp::Div) {
            double b = as_d(r);
            if (b == 0.0) throw SqlError(ErrorKind::Evaluation, "division by zero", span);
            return as_d(l) / b;
        }
        if (op == BinOp::Pow) return std::pow(as_d(l), as_d(r));
        bool both_int = std::holds_alternative<int64_t>(l) && std::holds_alternative<int64_t>(r);
        if (op == BinOp::Mod) {
            if (!both_int) throw SqlError(ErrorKind::Evaluation, "% requires integers", span);
            int64_t b = std::get<int64_t>(r);
            if (b == 0) throw SqlError(ErrorKind::Evaluation, "division by zero", span);
            return std::get<int64_t>(l) % b;
        }
        if (both_int) {
            int64_t a = std::get<int64_t>(l), b = std::get<int64_t>(r);
            switch (op) {
                case BinOp::Add: return a + b;
                case BinOp::Sub: return a - b;
                case BinOp::Mul: return a * b;
                default: break;
            }
        }
        double a = as_d(l), b = as_d(r);
        switch (op) {
            case BinOp::Add: return a + b;
            case BinOp::Sub: return a - b;
            case BinOp::Mul: return a * b;
            default: break;
        }
        throw SqlError(ErrorKind::Evaluation, "bad operator", span);
    }

    static Value scalar_value(const std::string& name, const std::vector<AValue>& args,
                              SourceSpan span) {
        auto as_d = [](const Value& v) {
            if (const auto* i = std::get_if<int64_t>(&v)) return static_cast<double>(*i);
            return std::get<double>(v);
        };
        auto num1 = [&](auto fn) -> Value {
            if (is_null(args[0].v)) return std::monostate{};
            return fn(as_d(args[0].v));
        };
        if (name == "sqrt")
            return num1([&](double x) -> Value {
                if (x < 0) throw SqlError(ErrorKind::Evaluation, "sqrt of a negative number", span);
                return std::sqrt(x);
            });
        if (name == "degrees") return num1([](double x) -> Value { return x * 180.0 / M_PI; });
        if (name == "radians") return num1([](double x) -> Value { return x * M_PI / 180.0; });
        if (name == "atan") return num1([](double x) -> Value { return std::atan(x); });
        if (name == "sin") return num1([](double x) -> Value { return std::sin(x); });
        if (name == "cos") return num1([](double x) -> Value { return std::cos(x); });
        if (name == "exp") return num1([](double x) -> Value { return std::exp(x); });
        if (name == "ln")
            return num1([&](double x) -> Value {
                if (x <= 0)
                    throw SqlError(ErrorKind::Evaluation, "ln of a non-positive number", span);
                return std::log(x);
            });
        if (name == "round" || name == "floor" || name == "ceil") {
            if (is_null(args[0].v)) return std::monostate{};
            if (const auto* i = std::get_if<int64_t>(&args[0].v)) return *i;
            double x = as_d(args[0].v);
            if (name == "round") return static_cast<int64_t>(std::llround(x));
            if (name == "floor") return static_cast<int64_t>(std::floor(x));
            return static_cast<int64_t>(std::ceil(x));
        }
        if (name == "abs") {
            if (is_null(args[0].v)) return std::monostate{};
            if (const auto* i = std::get_if<int64_t>(&args[0].v)) return *i < 0 ? -*i : *i;
            return std::fabs(as_d(args[0].v));
        }
        if (name == "greatest" || name == "least") {
            std::optional<Value> acc;
            for (const auto& a : args) {
                if (is_null(a.v)) continue;
                if (!acc) {
                    acc = a.v;
                    continue;
                }
                int c = compare_values(a.v, *acc);
                if ((name == "greatest" && c > 0) || (name == "least" && c < 0)) acc = a.v;
            }
            if (!acc) return std::monostate{};
            return *acc;
        }
        throw SqlError(ErrorKind::Evaluation, "unknown function: " + name, span);
    }

    // ==== from items =======================================================

    ATable from_item_table(const FromItem& item, const WEnv* env) {
        switch (item.kind) {
            case FromItem::Kind::Table: {
                if (const ATable* cte = find_cte(item.table)) {
                    ATable t = *cte;
                    for (size_t i = 0; i < item.column_aliases.size() && i < t.cols.size(); ++i)
                        t.cols[i] = item.column_aliases[i];
                    return t;
                }
                int idx = db.table_index(item.table);
                if (idx < 0) oracle_error("unknown table: " + item.table, item.span);
                const Table& base = db.table(static_cast<size_t>(idx));
                ATable t;
                for (const auto& c : base.schema.columns) t.cols.push_back(c.name);
                for (size_t i = 0; i < item.column_aliases.size() && i < t.cols.size(); ++i)
                    t.cols[i] = item.column_aliases[i];
                for (size_t r = 0; r < base.rows.size(); ++r) {
                    ARow row;
                    row.rho = base.rhos[r];
                    row.vals = base.rows[r];
                    if (row_mode()) {
                        row.prov = DepSet::singleton(backend, universe, base.rhos[r]);
                    } else {
                        for (size_t c = 0; c < row.vals.size(); ++c)
                            row.deps.push_back(DepSet::singleton(
                                backend, universe,
                                CellId{base.rhos[r], static_cast<uint32_t>(c)}.code()));
                    }
                    t.rows.push_back(std::move(row));
                }
                return t;
            }
            case FromItem::Kind::Subquery: {
                ATable t = eval_query(*item.subquery, env);
                for (size_t i = 0; i < item.column_aliases.size() && i < t.cols.size(); ++i)
                    t.cols[i] = item.column_aliases[i];
                return t;
            }
            case FromItem::Kind::TableFunc: {
                if (item.func != "generate_series")
                    oracle_error("unknown table function: " + item.func, item.span);
                Ctx ctx;
                ctx.outer = env;
                AValue lo = eval(*item.args[0], ctx);
                AValue hi = eval(*item.args[1], ctx);
                DepSet argdeps = lo.d.union_with(hi.d);
                ATable t;
                t.cols.push_back(item.column_aliases.empty() ? item.alias
                                                             : item.column_aliases[0]);
                if (!is_null(lo.v) && !is_null(hi.v)) {
                    int64_t a = std::get<int64_t>(lo.v), b = std::get<int64_t>(hi.v);
                    for (int64_t i = a; i <= b; ++i) {
                        ARow row;
                        row.rho = next_rho++;
                        row.vals.push_back(i);
                        if (row_mode()) row.prov = argdeps;
                        else row.deps.push_back(argdeps);
                        t.rows.push_back(std::move(row));
                    }
                }
                return t;
            }
            case FromItem::Kind::Bind: {
                for (const WEnv* e = env; e; e = e->parent) {
                    if (!e->scope || !e->row) continue;
                    const Slot* slot = e->scope->find(item.alias);
                    if (!slot) continue;
                    size_t slot_idx = static_cast<size_t>(slot - e->scope->slots.data());
                    ATable t;
                    ARow row;
                    row.rho = e->row->slot_rho[slot_idx];
                    if (row_mode()) row.prov = e->row->slot_prov[slot_idx];
                    for (const auto& c : item.bind_columns) {
                        bool found = false;
                        for (size_t k = 0; k < slot->cols.size(); ++k) {
                            if (slot->cols[k] == c) {
                                t.cols.push_back(c);
                                row.vals.push_back(e->row->vals[slot->offset + k]);
                                if (!row_mode()) row.deps.push_back(e->row->deps[slot->offset + k]);
                                found = true;
                            }
                        }
                        if (!found) oracle_error("BIND column not found: " + c, item.span);
                    }
                    t.rows.push_back(std::move(row));
                    return t;
                }
                oracle_error("BIND without an outer binding: " + item.alias, item.span);
            }
        }
        oracle_error("unreachable");
    }

    // ==== blocks ===========================================================

    struct Built {
        Scope scope;
        std::vector<WRow> rows;
    };

    static std::set<std::string> expr_local_refs(const Expr& e) {
        std::set<std::string> out;
        walk_exprs(e, [&](const Expr& x) {
            if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                if (!ref->table.empty()) out.insert(ref->table);
            } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                free_aliases(*sq->query, {}, out);
                return false;
            } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                free_aliases(*in->query, {}, out);
            } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                free_aliases(*ex->query, {}, out);
                return false;
            }
            return true;
        });
        return out;
    }

    static void split_conjuncts(const Expr& e, std::vector<const Expr*>& out) {
        if (const auto* bin = std::get_if<BinaryExpr>(&e.node)) {
            if (bin->op == BinOp::And) {
                split_conjuncts(*bin->lhs, out);
                split_conjuncts(*bin->rhs, out);
                return;
            }
        }
        out.push_back(&e);
    }

    Built build_from(const SelectBlock& b, const WEnv* env, bool is_left_block,
                     const Expr* where = nullptr) {
        Built w;
        WRow unit;
        unit.pred_deps = empty();
        w.rows.push_back(unit);
        std::vector<const Expr*> conjuncts;
        if (where) split_conjuncts(*where, conjuncts);
        std::vector<bool> applied(conjuncts.size(), false);
        std::set<std::string> bound;
        std::set<std::string> all_aliases;
        for (const auto& step : b.from) all_aliases.insert(step.item.alias);
        std::set<std::string> siblings;
        for (const auto& step : b.from) {
            bool correlated = false;
            {
                std::set<std::string> frees;
                if (step.item.kind == FromItem::Kind::Bind) frees.insert(step.item.alias);
                else if (step.item.kind == FromItem::Kind::Subquery)
                    free_aliases(*step.item.subquery, {}, frees);
                else
                    for (const auto& a : step.item.args)
                        walk_exprs(*a, [&](const Expr& x) {
                            if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                                if (!ref->table.empty()) frees.insert(ref->table);
                            return true;
                        });
                for (const auto& f : frees)
                    if (siblings.count(f)) correlated = true;
            }
            siblings.insert(step.item.alias);

            std::optional<ATable> fixed;
            if (!correlated) fixed = from_item_table(step.item, env);

            const size_t offset = w.scope.width;
            std::vector<std::string> cols;
            bool have_cols = false;
            std::vector<WRow> next;

            for (const auto& left : w.rows) {
                ATable scratch;
                const ATable* right = fixed ? &*fixed : nullptr;
                if (!right) {
                    WEnv here;
                    here.parent = env;
                    here.scope = &w.scope;
                    here.row = &left;
                    scratch = from_item_table(step.item, &here);
                    right = &scratch;
                }
                if (!have_cols) {
                    cols = right->cols;
                    have_cols = true;
                }
                if (step.join == FromStep::Join::Cross) {
                    for (const auto& r : right->rows) {
                        WRow combined = left; // keeps the accumulated pred_deps
                        combined.vals.insert(combined.vals.end(), r.vals.begin(), r.vals.end());
                        if (!row_mode())
                            combined.deps.insert(combined.deps.end(), r.deps.begin(),
                                                 r.deps.end());
                        combined.slot_rho.push_back(r.rho);
                        combined.slot_prov.push_back(r.prov);
                        next.push_back(std::move(combined));
                    }
                } else {
                    // LEFT join handled at block level (tx shape: exactly two
                    // steps); here we only build matched/unmatched combos
                    (void)is_left_block;
                    oracle_error("left join outside a left layer");
                }
            }
            if (!have_cols) cols = fixed ? fixed->cols : infer_item_cols(step.item);
            w.scope.slots.push_back(Slot{step.item.alias, cols, offset});
            w.scope.width = offset + cols.size();
            w.rows = std::move(next);

            bound.insert(step.item.alias);
            for (size_t ci = 0; ci < conjuncts.size(); ++ci) {
                if (applied[ci]) continue;
                std::set<std::string> refs = expr_local_refs(*conjuncts[ci]);
                bool ready = true;
                for (const auto& r : refs)
                    if (all_aliases.count(r) && !bound.count(r)) ready = false;
                if (!ready) continue;
                applied[ci] = true;
                std::vector<WRow> kept;
                for (auto& row : w.rows) {
                    Ctx ctx;
                    ctx.scope = &w.scope;
                    ctx.row = &row;
                    ctx.outer = env;
                    AValue p = eval(*conjuncts[ci], ctx);
                    if (!value_truthy(p.v)) continue;
                    row.pred_deps = row.pred_deps.union_with(p.d);
                    kept.push_back(std::move(row));
                }
                w.rows = std::move(kept);
            }
        }
        for (size_t ci = 0; ci < conjuncts.size(); ++ci) {
            if (applied[ci]) continue;
            std::vector<WRow> kept;
            for (auto& row : w.rows) {
                Ctx ctx;
                ctx.scope = &w.scope;
                ctx.row = &row;
                ctx.outer = env;
                AValue p = eval(*conjuncts[ci], ctx);
                if (!value_truthy(p.v)) continue;
                row.pred_deps = row.pred_deps.union_with(p.d);
                kept.push_back(std::move(row));
            }
            w.rows = std::move(kept);
        }
        return w;
    }

    static void query_output_names(const Query& q, std::vector<std::string>& out) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    for (const auto& it : n.items) {
                        std::string name = it.alias;
                        if (name.empty()) {
                            if (const auto* ref = std::get_if<ColumnRef>(&it.expr->node))
                                name = ref->column;
                            else name = "?column?";
                        }
                        out.push_back(name);
                    }
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    query_output_names(*n.arms[0], out);
                } else {
                    query_output_names(*n.body, out);
                }
            },
            q.node);
    }

    std::vector<std::string> infer_item_cols(const FromItem& item) const {
        std::vector<std::string> out;
        switch (item.kind) {
            case FromItem::Kind::Table: {
                if (const ATable* cte = find_cte(item.table)) {
                    out = cte->cols;
                    break;
                }
                int idx = db.table_index(item.table);
                if (idx < 0) oracle_error("unknown table: " + item.table, item.span);
                for (const auto& c : db.table(static_cast<size_t>(idx)).schema.columns)
                    out.push_back(c.name);
                break;
            }
            case FromItem::Kind::Subquery:
                query_output_names(*item.subquery, out);
                break;
            case FromItem::Kind::TableFunc:
                out.push_back(item.column_aliases.empty() ? item.alias : item.column_aliases[0]);
                break;
            case FromItem::Kind::Bind:
                out = item.bind_columns;
                break;
        }
        for (size_t i = 0; i < item.column_aliases.size() && i < out.size(); ++i)
            out[i] = item.column_aliases[i];
        return out;
    }

    ATable eval_query(const Query& q, const WEnv* env) {
        return std::visit(
            [&](const auto& n) -> ATable {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    return eval_block(n, q.span, env);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    // every arm's rows get fresh ids, mirroring the pipeline's
                    // per-arm filter sites
                    ATable out;
                    for (size_t i = 0; i < n.arms.size(); ++i) {
                        ATable arm = eval_query(*n.arms[i], env);
                        if (i == 0) out.cols = arm.cols;
                        for (auto& row : arm.rows) {
                            row.rho = alloc_once(n.arms[i].get(), {row.rho});
                            out.rows.push_back(std::move(row));
                        }
                    }
                    return out;
                } else {
                    return eval_with(n, q.span, env);
                }
            },
            q.node);
    }

    ATable eval_with(const WithQuery& w, SourceSpan span, const WEnv* env) {
        cte_frames.emplace_back();
        struct Pop {
            std::vector<std::map<std::string, ATable>>* f;
            ~Pop() { f->pop_back(); }
        } pop{&cte_frames};
        for (const auto& b : w.bindings) {
            ATable result;
            if (w.recursive && b.query->is<SetOpQuery>()) {
                const auto& arms = b.query->as<SetOpQuery>().arms;
                // base arm rows pass a filter site in the pipeline
                result = eval_query(*arms[0], env);
                for (auto& row : result.rows) row.rho = alloc_once(arms[0].get(), {row.rho});
                if (!b.columns.empty())
                    for (size_t i = 0; i < b.columns.size() && i < result.cols.size(); ++i)
                        result.cols[i] = b.columns[i];
                ATable working = result;
                int64_t iterations = 0;
                while (!working.rows.empty()) {
                    if (++iterations > 10000)
                        oracle_error("recursive CTE exceeded the iteration cap", span);
                    cte_frames.back()[b.name] = std::move(working);
                    ATable next;
                    next.cols = result.cols;
                    for (size_t i = 1; i < arms.size(); ++i) {
                        ATable step = eval_query(*arms[i], env);
                        for (auto& row : step.rows) {
                            row.rho = alloc_once(arms[i].get(), {row.rho});
                            next.rows.push_back(std::move(row));
                        }
                    }
                    if (arms.size() <= 1) break;
                    working = std::move(next);
                    for (const auto& row : working.rows) result.rows.push_back(row);
                }
                cte_frames.back().erase(b.name);
            } else {
                result = eval_query(*b.query, env);
                if (!b.columns.empty())
                    for (size_t i = 0; i < b.columns.size() && i < result.cols.size(); ++i)
                        result.cols[i] = b.columns[i];
            }
            cte_frames.back()[b.name] = std::move(result);
        }
        return eval_query(*w.body, env);
    }

    ATable eval_block(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        const bool grp = b.group_by.has_value() || b.having != nullptr;
        const bool win = !b.windows.empty();
        const bool dst = !b.distinct_on.empty();
        const bool ord = !b.order_by.empty() || b.offset.has_value() || b.limit.has_value();
        bool left = false;
        for (const auto& s : b.from)
            if (s.join == FromStep::Join::Left) left = true;

        if (left) return eval_left(b, span, env);
        if (grp) return eval_group(b, span, env);
        if (win) return eval_window(b, span, env);
        if (dst) return eval_distinct(b, span, env);
        if (ord) return eval_orderby(b, span, env);
        if (b.from.size() > 1 || b.where) return eval_join(b, span, env);
        return eval_map(b, span, env);
    }

    std::vector<std::string> out_cols(const SelectBlock& b) {
        std::vector<std::string> out;
        for (const auto& it : b.items) out.push_back(it.alias);
        return out;
    }

    ARow project(const SelectBlock& b, const Ctx& ctx, Rho rho, DepSet extra_why,
                 const DepSet* row_sources) {
        ARow out;
        out.rho = rho;
        DepSet prov = empty();
        for (const auto& it : b.items) {
            AValue v = eval(*it.expr, ctx);
            out.vals.push_back(std::move(v.v));
            if (row_mode()) {
                prov = prov.union_with(v.d);
            } else {
                out.deps.push_back(v.d.union_with(extra_why));
            }
        }
        if (row_mode()) {
            if (row_sources) prov = *row_sources; // joins: all source rows as where-part
            out.prov = prov.union_with(extra_why);
        }
        return out;
    }

    ATable eval_map(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        if (b.from.empty()) {
            Ctx ctx;
            ctx.outer = env;
            out.rows.push_back(project(b, ctx, 0, empty(), nullptr));
            return out;
        }
        Built w = build_from(b, env, false);
        (void)span;
        for (const auto& row : w.rows) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &row;
            ctx.outer = env;
            out.rows.push_back(project(b, ctx, row.slot_rho[0], empty(), nullptr));
        }
        return out;
    }

    ATable eval_join(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        // predicates are applied while the sources join (mirroring the
        // engine); survivors project afterwards
        Built w = build_from(b, env, false, b.where.get());
        (void)span;
        for (const auto& row : w.rows) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &row;
            ctx.outer = env;
            DepSet sources = empty();
            if (row_mode())
                for (const auto& sp : row.slot_prov) sources = sources.union_with(sp);
            DepSet why = maybe_why(row.pred_deps);
            Rho rho = alloc_once(&b, row.slot_rho);
            out.rows.push_back(project(b, ctx, rho, why, row_mode() ? &sources : nullptr));
        }
        return out;
    }

    ATable eval_left(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        (void)span;
        // exactly [cross t1, left t2 ON p]
        Built w;
        {
            const auto& step = b.from[0];
            ATable t1 = from_item_table(step.item, env);
            for (const auto& r : t1.rows) {
                WRow combined;
                combined.vals = r.vals;
                if (!row_mode()) combined.deps = r.deps;
                combined.slot_rho.push_back(r.rho);
                combined.slot_prov.push_back(r.prov);
                w.rows.push_back(std::move(combined));
            }
            w.scope.slots.push_back(Slot{step.item.alias, t1.cols, 0});
            w.scope.width = t1.cols.size();
        }
        const auto& rstep = b.from[1];
        for (const auto& lrow : w.rows) {
            ATable right;
            {
                WEnv here;
                here.parent = env;
                here.scope = &w.scope;
                here.row = &lrow;
                right = from_item_table(rstep.item, rstep.lateral ? &here : env);
            }
            Scope trial = w.scope;
            trial.slots.push_back(Slot{rstep.item.alias, right.cols, w.scope.width});
            trial.width = w.scope.width + right.cols.size();
            bool matched = false;
            for (const auto& rrow : right.rows) {
                WRow combined = lrow;
                combined.vals.insert(combined.vals.end(), rrow.vals.begin(), rrow.vals.end());
                if (!row_mode())
                    combined.deps.insert(combined.deps.end(), rrow.deps.begin(), rrow.deps.end());
                combined.slot_rho.push_back(rrow.rho);
                combined.slot_prov.push_back(rrow.prov);
                Ctx ctx;
                ctx.scope = &trial;
                ctx.row = &combined;
                ctx.outer = env;
                AValue p = eval(*rstep.on, ctx);
                if (!value_truthy(p.v)) continue;
                matched = true;
                DepSet sources = empty();
                if (row_mode())
                    for (const auto& sp : combined.slot_prov) sources = sources.union_with(sp);
                DepSet why = maybe_why(p.d);
                Rho rho = alloc_once(&b, combined.slot_rho);
                out.rows.push_back(project(b, ctx, rho, why, row_mode() ? &sources : nullptr));
            }
            if (!matched) {
                WRow combined = lrow;
                for (size_t i = 0; i < right.cols.size(); ++i) {
                    combined.vals.push_back(std::monostate{});
                    if (!row_mode()) combined.deps.push_back(empty());
                }
                combined.slot_rho.push_back(0);
                combined.slot_prov.push_back(empty());
                Ctx ctx;
                ctx.scope = &trial;
                ctx.row = &combined;
                ctx.outer = env;
                AValue p = eval(*rstep.on, ctx); // NULL-padded: contributes its deps
                DepSet sources = empty();
                if (row_mode())
                    for (const auto& sp : combined.slot_prov) sources = sources.union_with(sp);
                DepSet why = maybe_why(p.d);
                Rho rho = alloc_once(&b, combined.slot_rho); // the padding slot holds 0
                out.rows.push_back(project(b, ctx, rho, why, row_mode() ? &sources : nullptr));
            }
        }
        return out;
    }

    // group-layer item evaluation mirroring the interpreter's translation
    AValue eval_group_item(const Expr& e, const Ctx& base, const std::vector<const WRow*>& members);

    ATable eval_group(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        Built w = build_from(b, env, false);
        (void)span;
        static const std::vector<ExprPtr> none;
        const std::vector<ExprPtr>& keys = b.group_by ? *b.group_by : none;

        struct Group {
            std::vector<Value> key_values;
            DepSet why; // per-member key deps + having row deps
            std::vector<const WRow*> members;
        };
        std::vector<Group> groups;
        for (const auto& row : w.rows) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &row;
            ctx.outer = env;
            std::vector<Value> kv;
            DepSet kd = empty();
            for (const auto& k : keys) {
                AValue v = eval(*k, ctx);
                kv.push_back(std::move(v.v));
                kd = kd.union_with(v.d);
            }
            if (b.having) kd = kd.union_with(having_member_deps(*b.having, ctx));
            size_t found = groups.size();
            for (size_t j = 0; j < groups.size(); ++j) {
                bool same = true;
                for (size_t k = 0; k < kv.size(); ++k)
                    same = same && values_equal_grouping(kv[k], groups[j].key_values[k]);
                if (same) {
                    found = j;
                    break;
                }
            }
            if (found == groups.size()) {
                Group g;
                g.key_values = kv;
                g.why = empty();
                groups.push_back(std::move(g));
            }
            groups[found].why = groups[found].why.union_with(kd);
            groups[found].members.push_back(&row);
        }
        if (keys.empty() && groups.empty()) {
            Group g;
            g.why = empty();
            groups.push_back(std::move(g));
        }

        for (auto& g : groups) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.outer = env;
            if (!g.members.empty()) ctx.row = g.members[0];
            if (b.having) {
                AValue h = eval_group_agg(*b.having, ctx, g.members);
                if (!value_truthy(h.v)) continue;
            }
            std::vector<Rho> member_rhos;
            for (const WRow* m : g.members) member_rhos.push_back(m->slot_rho[0]);
            std::sort(member_rhos.begin(), member_rhos.end());
            Rho rho = alloc_once(&b, std::move(member_rhos));
            ARow row;
            row.rho = rho;
            DepSet why = maybe_why(g.why);
            DepSet prov = empty();
            for (const auto& it : b.items) {
                AValue v = eval_group_item(*it.expr, ctx, g.members);
                row.vals.push_back(std::move(v.v));
                if (row_mode()) prov = prov.union_with(v.d);
                else row.deps.push_back(v.d.union_with(why));
            }
            if (row_mode()) row.prov = prov.union_with(why);
            out.rows.push_back(std::move(row));
        }
        return out;
    }

    /// Per-member dependencies a HAVING predicate contributes to the group's
    /// why-set: aggregate arguments evaluate per member, everything else as
    /// written.
    DepSet having_member_deps(const Expr& e, const Ctx& ctx) {
        return std::visit(
            [&](const auto& n) -> DepSet {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, AggregateExpr>) {
                    if (!n.arg) return empty();
                    return eval(*n.arg, ctx).d;
                } else if constexpr (std::is_same_v<T, Literal>) {
                    return empty();
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    return eval(e, ctx).d;
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    return having_member_deps(*n.lhs, ctx).union_with(
                        having_member_deps(*n.rhs, ctx));
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    return having_member_deps(*n.operand, ctx);
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    DepSet d = empty();
                    for (const auto& a : n.args) d = d.union_with(having_member_deps(*a, ctx));
                    return d;
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    DepSet d = having_member_deps(*n.probe, ctx);
                    for (const auto& a : n.items) d = d.union_with(having_member_deps(*a, ctx));
                    return d;
                } else if constexpr (std::is_same_v<T, SubqueryExpr> ||
                                     std::is_same_v<T, InSubqueryExpr> ||
                                     std::is_same_v<T, ExistsExpr>) {
                    return eval(e, ctx).d;
                } else {
                    oracle_error("unsupported HAVING expression", e.span);
                }
            },
            e.node);
    }

    /// HAVING value: aggregates over the group's members.
    AValue eval_group_agg(const Expr& e, const Ctx& base, const std::vector<const WRow*>& members) {
        return std::visit(
            [&](const auto& n) -> AValue {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, AggregateExpr>) {
                    return aggregate(n.func, n.arg.get(), base, members);
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    AValue l = eval_group_agg(*n.lhs, base, members);
                    AValue r = eval_group_agg(*n.rhs, base, members);
                    Value v = binary_value(n.op, l.v, r.v, e.span);
                    return {std::move(v), l.d.union_with(r.d)};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    AValue o = eval_group_agg(*n.operand, base, members);
                    Value v;
                    switch (n.op) {
                        case UnOp::Neg:
                            if (is_null(o.v)) v = std::monostate{};
                            else if (const auto* i = std::get_if<int64_t>(&o.v)) v = -*i;
                            else v = -std::get<double>(o.v);
                            break;
                        case UnOp::Not:
                            if (is_null(o.v)) v = std::monostate{};
                            else v = !std::get<bool>(o.v);
                            break;
                        case UnOp::IsNull: v = is_null(o.v); break;
                        case UnOp::IsNotNull: v = !is_null(o.v); break;
                    }
                    return {std::move(v), std::move(o.d)};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    std::vector<AValue> args;
                    for (const auto& a : n.args) args.push_back(eval_group_agg(*a, base, members));
                    DepSet d = empty();
                    for (const auto& a : args) d = d.union_with(a.d);
                    return {scalar_value(n.name, args, e.span), std::move(d)};
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    AValue probe = eval_group_agg(*n.probe, base, members);
                    DepSet d = probe.d;
                    bool hit = false, saw_null = is_null(probe.v);
                    for (const auto& x : n.items) {
                        AValue a = eval_group_agg(*x, base, members);
                        d = d.union_with(a.d);
                        if (is_null(a.v)) {
                            saw_null = true;
                            continue;
                        }
                        if (!is_null(probe.v) && values_equal_sql(probe.v, a.v)) hit = true;
                    }
                    Value v;
                    if (hit) v = !n.negated;
                    else if (saw_null) v = std::monostate{};
                    else v = n.negated;
                    return {std::move(v), std::move(d)};
                } else {
                    return eval(e, base);
                }
            },
            e.node);
    }

    AValue aggregate(const std::string& func, const Expr* arg, const Ctx& base,
                     const std::vector<const WRow*>& members) {
        std::vector<AValue> vals;
        for (const WRow* m : members) {
            Ctx ctx = base;
            ctx.row = m;
            vals.push_back(arg ? eval(*arg, ctx) : AValue{Value(int64_t(1)), empty()});
        }
        DepSet d = empty();
        for (const auto& v : vals)
            d = d.union_with(v.d);
        Value out;
        if (func == "count") {
            int64_t n = 0;
            for (const auto& v : vals)
                if (!is_null(v.v)) ++n;
            out = n;
        } else if (func == "sum" || func == "avg") {
            bool any = false, all_int = true;
            int64_t isum = 0;
            double fsum = 0;
            int64_t n = 0;
            for (const auto& v : vals) {
                if (is_null(v.v)) continue;
                any = true;
                ++n;
                if (const auto* i = std::get_if<int64_t>(&v.v)) {
                    isum += *i;
                    fsum += static_cast<double>(*i);
                } else {
                    all_int = false;
                    fsum += std::get<double>(v.v);
                }
            }
            if (!any) out = std::monostate{};
            else if (func == "avg") out = fsum / static_cast<double>(n);
            else if (all_int) out = isum;
            else out = fsum;
        } else if (func == "min" || func == "max") {
            std::optional<Value> acc;
            for (const auto& v : vals) {
                if (is_null(v.v)) continue;
                if (!acc) {
                    acc = v.v;
                    continue;
                }
                int c = compare_values(v.v, *acc);
                if ((func == "max" && c > 0) || (func == "min" && c < 0)) acc = v.v;
            }
            out = acc ? *acc : Value(std::monostate{});
        } else if (func == "bool_or" || func == "bool_and") {
            bool any = false, acc = func == "bool_and";
            for (const auto& v : vals) {
                if (is_null(v.v)) continue;
                any = true;
                bool x = std::get<bool>(v.v);
                acc = func == "bool_or" ? (acc || x) : (acc && x);
            }
            out = any ? Value(acc) : Value(std::monostate{});
        } else {
            oracle_error("unknown aggregate: " + func);
        }
        return {std::move(out), std::move(d)};
    }

    ATable eval_window(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        Built w = build_from(b, env, false);
        (void)span;
        const size_t n = w.rows.size();

        struct Layout {
            std::vector<size_t> partition_of;
            std::vector<std::vector<size_t>> partitions;
            std::vector<size_t> position_of;
            std::vector<DepSet> criteria_deps; // per row
        };
        std::map<std::string, Layout> layouts;
        for (const auto& wd : b.windows) {
            Layout lay;
            lay.partition_of.resize(n);
            lay.position_of.resize(n);
            lay.criteria_deps.resize(n, empty());
            std::vector<std::vector<Value>> part_keys;
            std::vector<std::vector<Value>> order_keys(n);
            for (size_t i = 0; i < n; ++i) {
                Ctx ctx;
                ctx.scope = &w.scope;
                ctx.row = &w.rows[i];
                ctx.outer = env;
                std::vector<Value> pk;
                DepSet cd = empty();
                for (const auto& p : wd.partition) {
                    AValue v = eval(*p, ctx);
                    pk.push_back(std::move(v.v));
                    cd = cd.union_with(v.d);
                }
                for (const auto& o : wd.order) {
                    AValue v = eval(*o.expr, ctx);
                    order_keys[i].push_back(std::move(v.v));
                    cd = cd.union_with(v.d);
                }
                lay.criteria_deps[i] = std::move(cd);
                size_t part = part_keys.size();
                for (size_t j = 0; j < part_keys.size(); ++j) {
                    bool same = part_keys[j].size() == pk.size();
                    for (size_t k = 0; same && k < pk.size(); ++k)
                        same = values_equal_grouping(part_keys[j][k], pk[k]);
                    if (same) {
                        part = j;
                        break;
                    }
                }
                if (part == part_keys.size()) {
                    part_keys.push_back(pk);
                    lay.partitions.emplace_back();
                }
                lay.partition_of[i] = part;
                lay.partitions[part].push_back(i);
            }
            for (auto& rows_in : lay.partitions) {
                std::stable_sort(rows_in.begin(), rows_in.end(), [&](size_t a, size_t c) {
                    for (size_t k = 0; k < wd.order.size(); ++k) {
                        const Value& x = order_keys[a][k];
                        const Value& y = order_keys[c][k];
                        bool desc = wd.order[k].desc;
                        if (is_null(x) && is_null(y)) continue;
                        if (is_null(x)) return desc;
                        if (is_null(y)) return !desc;
                        int cmp = compare_values(x, y);
                        if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
                    }
                    return false;
                });
                for (size_t pos = 0; pos < rows_in.size(); ++pos)
                    lay.position_of[rows_in[pos]] = pos;
            }
            layouts.emplace(wd.name, std::move(lay));
        }

        for (size_t i = 0; i < n; ++i) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &w.rows[i];
            ctx.outer = env;
            ARow row;
            row.rho = w.rows[i].slot_rho[0];
            DepSet prov = empty();
            for (const auto& it : b.items) {
                AValue v = eval_window_item(*it.expr, ctx, layouts, w, i);
                row.vals.push_back(std::move(v.v));
                if (row_mode()) prov = prov.union_with(v.d);
                else row.deps.push_back(std::move(v.d));
            }
            if (row_mode()) row.prov = std::move(prov);
            out.rows.push_back(std::move(row));
        }
        return out;
    }

    template <typename Layouts>
    AValue eval_window_item(const Expr& e, const Ctx& ctx, const Layouts& layouts, const Built& w,
                            size_t row_index) {
        if (const auto* wf = std::get_if<WindowFuncExpr>(&e.node)) {
            auto lit = layouts.find(wf->over.name);
            if (lit == layouts.end()) oracle_error("unknown window: " + wf->over.name, e.span);
            const auto& lay = lit->second;
            size_t part = lay.partition_of[row_index];
            const auto& prows = lay.partitions[part];
            size_t pos = lay.position_of[row_index];

            auto frame_range = [&]() -> std::pair<size_t, size_t> {
                const std::optional<Frame>& f = wf->over.frame;
                if (!f) return {0, pos};
                if (f->unit == Frame::Unit::Range) {
                    if (f->lo.kind != FrameBound::Kind::UnboundedPreceding ||
                        f->hi.kind != FrameBound::Kind::CurrentRow)
                        throw SqlError(ErrorKind::Unsupported, "general RANGE frames", e.span);
                    return {0, pos};
                }
                auto bound = [&](const FrameBound& fb) -> int64_t {
                    switch (fb.kind) {
                        case FrameBound::Kind::UnboundedPreceding: return 0;
                        case FrameBound::Kind::Preceding:
                            return static_cast<int64_t>(pos) - fb.offset;
                        case FrameBound::Kind::CurrentRow: return static_cast<int64_t>(pos);
                        case FrameBound::Kind::Following:
                            return static_cast<int64_t>(pos) + fb.offset;
                        case FrameBound::Kind::UnboundedFollowing:
                            return static_cast<int64_t>(prows.size()) - 1;
                    }
                    return 0;
                };
                int64_t lo = std::max<int64_t>(0, bound(f->lo));
                int64_t hi =
                    std::min<int64_t>(static_cast<int64_t>(prows.size()) - 1, bound(f->hi));
                if (lo > hi) return {1, 0};
                return {static_cast<size_t>(lo), static_cast<size_t>(hi)};
            };

            if (wf->func == "rank") {
                // criteria of the rows up to the current one are inspected
                DepSet d = empty();
                if (opts.why) {
                    for (size_t k = 0; k <= pos; ++k)
                        d = d.union_with(lay.criteria_deps[prows[k]]);
                    d = d.mark_why();
                }
                return {Value(static_cast<int64_t>(pos + 1)), std::move(d)};
            }
            auto [lo, hi] = frame_range();
            DepSet why = empty();
            if (opts.why && lo <= hi) {
                for (size_t k = lo; k <= hi; ++k)
                    why = why.union_with(lay.criteria_deps[prows[k]]);
                why = why.mark_why();
            }
            if (wf->func == "first_value") {
                if (lo > hi) return {Value(std::monostate{}), std::move(why)};
                Ctx first = ctx;
                first.row = &w.rows[prows[lo]];
                AValue v = eval(*wf->args[0], first);
                return {std::move(v.v), v.d.union_with(why)};
            }
            std::vector<const WRow*> frame_rows;
            for (size_t k = lo; k <= hi && lo <= hi; ++k) frame_rows.push_back(&w.rows[prows[k]]);
            AValue agg =
                aggregate(wf->func, wf->args.empty() ? nullptr : wf->args[0].get(), ctx, frame_rows);
            return {std::move(agg.v), agg.d.union_with(why)};
        }
        return std::visit(
            [&](const auto& n) -> AValue {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, BinaryExpr>) {
                    AValue l = eval_window_item(*n.lhs, ctx, layouts, w, row_index);
                    AValue r = eval_window_item(*n.rhs, ctx, layouts, w, row_index);
                    Value v = binary_value(n.op, l.v, r.v, e.span);
                    return {std::move(v), l.d.union_with(r.d)};
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    AValue o = eval_window_item(*n.operand, ctx, layouts, w, row_index);
                    Value v;
                    switch (n.op) {
                        case UnOp::Neg:
                            if (is_null(o.v)) v = std::monostate{};
                            else if (const auto* i = std::get_if<int64_t>(&o.v)) v = -*i;
                            else v = -std::get<double>(o.v);
                            break;
                        case UnOp::Not:
                            if (is_null(o.v)) v = std::monostate{};
                            else v = !std::get<bool>(o.v);
                            break;
                        case UnOp::IsNull: v = is_null(o.v); break;
                        case UnOp::IsNotNull: v = !is_null(o.v); break;
                    }
                    return {std::move(v), std::move(o.d)};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    std::vector<AValue> args;
                    for (const auto& a : n.args)
                        args.push_back(eval_window_item(*a, ctx, layouts, w, row_index));
                    DepSet d = empty();
                    for (const auto& a : args) d = d.union_with(a.d);
                    return {scalar_value(n.name, args, e.span), std::move(d)};
                } else {
                    return eval(e, ctx);
                }
            },
            e.node);
    }

    ATable eval_distinct(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        Built w = build_from(b, env, false);
        (void)span;
        struct Prow {
            ARow row;
            std::vector<Value> dkeys;
            std::vector<Value> okeys;
            DepSet dkey_deps;
        };
        std::vector<Prow> rows;
        for (const auto& wrow : w.rows) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &wrow;
            ctx.outer = env;
            Prow p;
            DepSet dd = empty();
            for (const auto& d : b.distinct_on) {
                AValue v = eval(*d, ctx);
                p.dkeys.push_back(std::move(v.v));
                dd = dd.union_with(v.d);
            }
            for (const auto& o : b.order_by) p.okeys.push_back(eval(*o.expr, ctx).v);
            p.dkey_deps = std::move(dd);
            p.row = project(b, ctx, 0, empty(), nullptr);
            if (row_mode()) {
                // criteria deps of the surviving rows join the prov below
            }
            rows.push_back(std::move(p));
        }
        std::vector<size_t> idx(rows.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t c) {
            for (size_t k = 0; k < b.order_by.size(); ++k) {
                const Value& x = rows[a].okeys[k];
                const Value& y = rows[c].okeys[k];
                bool desc = b.order_by[k].desc;
                if (is_null(x) && is_null(y)) continue;
                if (is_null(x)) return desc;
                if (is_null(y)) return !desc;
                int cmp = compare_values(x, y);
                if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
            }
            return false;
        });
        std::vector<std::vector<Value>> seen;
        for (size_t i : idx) {
            bool dup = false;
            for (const auto& key : seen) {
                bool same = true;
                for (size_t k = 0; k < key.size(); ++k)
                    same = same && values_equal_grouping(key[k], rows[i].dkeys[k]);
                if (same) dup = true;
            }
            if (dup) continue;
            seen.push_back(rows[i].dkeys);
            ARow row = std::move(rows[i].row);
            row.rho = alloc_once(&b, {w.rows[i].slot_rho[0]});
            DepSet why = maybe_why(rows[i].dkey_deps);
            if (row_mode()) row.prov = row.prov.union_with(why);
            else
                for (auto& d : row.deps) d = d.union_with(why);
            out.rows.push_back(std::move(row));
        }
        return out;
    }

    ATable eval_orderby(const SelectBlock& b, SourceSpan span, const WEnv* env) {
        ATable out;
        out.cols = out_cols(b);
        Built w = build_from(b, env, false);
        (void)span;
        const bool filters =
            (b.offset && *b.offset != 0) || (b.limit && b.limit->count.has_value());
        struct Prow {
            ARow row;
            std::vector<Value> okeys;
            DepSet okey_deps;
        };
        std::vector<Prow> rows;
        for (const auto& wrow : w.rows) {
            Ctx ctx;
            ctx.scope = &w.scope;
            ctx.row = &wrow;
            ctx.outer = env;
            Prow p;
            DepSet od = empty();
            for (const auto& o : b.order_by) {
                AValue v = eval(*o.expr, ctx);
                p.okeys.push_back(std::move(v.v));
                od = od.union_with(v.d);
            }
            p.okey_deps = std::move(od);
            p.row = project(b, ctx, wrow.slot_rho[0], empty(), nullptr);
            rows.push_back(std::move(p));
        }
        std::vector<size_t> idx(rows.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t c) {
            for (size_t k = 0; k < b.order_by.size(); ++k) {
                const Value& x = rows[a].okeys[k];
                const Value& y = rows[c].okeys[k];
                bool desc = b.order_by[k].desc;
                if (is_null(x) && is_null(y)) continue;
                if (is_null(x)) return desc;
                if (is_null(y)) return !desc;
                int cmp = compare_values(x, y);
                if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
            }
            return false;
        });
        size_t begin = 0, end = idx.size();
        if (b.offset)
            begin = std::min<size_t>(static_cast<size_t>(std::max<int64_t>(0, *b.offset)), end);
        if (b.limit && b.limit->count)
            end = std::min(end, begin + static_cast<size_t>(std::max<int64_t>(0, *b.limit->count)));
        for (size_t k = begin; k < end; ++k) {
            ARow row = std::move(rows[idx[k]].row);
            if (filters) {
                row.rho = alloc_once(&b, {w.rows[idx[k]].slot_rho[0]});
                DepSet why = maybe_why(rows[idx[k]].okey_deps);
                if (row_mode()) row.prov = row.prov.union_with(why);
                else
                    for (auto& d : row.deps) d = d.union_with(why);
            }
            out.rows.push_back(std::move(row));
        }
        return out;
    }
};

AValue Oracle::eval_group_item(const Expr& e, const Ctx& base,
                               const std::vector<const WRow*>& members) {
    return std::visit(
        [&](const auto& n) -> AValue {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, AggregateExpr>) {
                return aggregate(n.func, n.arg.get(), base, members);
            } else if constexpr (std::is_same_v<T, Literal>) {
                return eval(e, base);
            } else if constexpr (std::is_same_v<T, ColumnRef>) {
                // key reference: the representative (first) member's cell
                if (members.empty()) return {Value(std::monostate{}), empty()};
                Ctx ctx = base;
                ctx.row = members[0];
                return eval(e, ctx);
            } else if constexpr (std::is_same_v<T, SubqueryExpr> ||
                                 std::is_same_v<T, InSubqueryExpr> ||
                                 std::is_same_v<T, ExistsExpr>) {
                return eval(e, base);
            } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                AValue l = eval_group_item(*n.lhs, base, members);
                AValue r = eval_group_item(*n.rhs, base, members);
                Value v = binary_value(n.op, l.v, r.v, e.span);
                return {std::move(v), l.d.union_with(r.d)};
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                AValue o = eval_group_item(*n.operand, base, members);
                Value v;
                switch (n.op) {
                    case UnOp::Neg:
                        if (is_null(o.v)) v = std::monostate{};
                        else if (const auto* i = std::get_if<int64_t>(&o.v)) v = -*i;
                        else v = -std::get<double>(o.v);
                        break;
                    case UnOp::Not:
                        if (is_null(o.v)) v = std::monostate{};
                        else v = !std::get<bool>(o.v);
                        break;
                    case UnOp::IsNull: v = is_null(o.v); break;
                    case UnOp::IsNotNull: v = !is_null(o.v); break;
                }
                return {std::move(v), std::move(o.d)};
            } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                std::vector<AValue> args;
                for (const auto& a : n.args) args.push_back(eval_group_item(*a, base, members));
                DepSet d = empty();
                for (const auto& a : args) d = d.union_with(a.d);
                return {scalar_value(n.name, args, e.span), std::move(d)};
            } else if constexpr (std::is_same_v<T, InListExpr>) {
                AValue probe = eval_group_item(*n.probe, base, members);
                DepSet d = probe.d;
                bool hit = false, saw_null = is_null(probe.v);
                for (const auto& x : n.items) {
                    AValue a = eval_group_item(*x, base, members);
                    d = d.union_with(a.d);
                    if (is_null(a.v)) {
                        saw_null = true;
                        continue;
                    }
                    if (!is_null(probe.v) && values_equal_sql(probe.v, a.v)) hit = true;
                }
                Value v;
                if (hit) v = !n.negated;
                else if (saw_null) v = std::monostate{};
                else v = n.negated;
                return {std::move(v), std::move(d)};
            } else {
                oracle_error("unsupported expression in a grouped select item", e.span);
            }
        },
        e.node);
}

} // namespace

DepTable annotated_eval(const Query& normalized, const Database& db, TransformOptions opts,
                        DepBackend backend, const DepUniverse* universe) {
    DepUniverse local;
    if (backend == DepBackend::Bitset && !universe) {
        local = db.build_universe(opts.granularity);
        universe = &local;
    }
    Oracle oracle(db, opts, backend, universe);
    ATable t = oracle.eval_query(normalized, nullptr);
    DepTable out;
    out.has_rho = true;
    if (opts.granularity == Granularity::Row) {
        out.schema.columns.push_back(Column{"prov", ColType::Dep});
        for (auto& row : t.rows) {
            out.rhos.push_back(row.rho);
            out.rows.push_back({Value(std::move(row.prov))});
        }
    } else {
        for (const auto& c : t.cols) out.schema.columns.push_back(Column{c, ColType::Dep});
        for (auto& row : t.rows) {
            out.rhos.push_back(row.rho);
            std::vector<Value> cells;
            for (auto& d : row.deps) cells.push_back(Value(std::move(d)));
            out.rows.push_back(std::move(cells));
        }
    }
    return out;
}

DeletionReport deletion_stability(const Query& q, const Database& db, const Table& plain,
                                  const DepTable& row_prov, const std::vector<int>& key_columns) {
    DeletionReport report;
    // all base row ids
    std::vector<Rho> base;
    for (const auto& def : db.defs()) {
        const Table* t = db.find(def.name);
        for (Rho rho : t->rhos) base.push_back(rho);
    }
    for (size_t r = 0; r < plain.rows.size(); ++r) {
        // row-level provenance of the output row, flattened
        std::set<Rho> prov;
        for (const auto& cell : row_prov.rows[r]) {
            const auto* d = std::get_if<DepSet>(&cell);
            if (!d) continue;
            auto [w, y] = d->canonical();
            for (uint64_t code : w) prov.insert(db.cell_row(code, Granularity::Row));
            for (uint64_t code : y) prov.insert(db.cell_row(code, Granularity::Row));
        }
        for (Rho victim : base) {
            if (prov.count(victim)) {
                ++report.skipped;
                continue;
            }
            ++report.checks;
            Database reduced = db.without_row(victim);
            Table after = eval_plain(q, reduced);
            // find the row with the same key values
            int found = -1;
            for (size_t r2 = 0; r2 < after.rows.size(); ++r2) {
                bool same = true;
                for (int kc : key_columns)
                    same = same && values_equal_grouping(plain.rows[r][static_cast<size_t>(kc)],
                                                         after.rows[r2][static_cast<size_t>(kc)]);
                if (same) {
                    found = static_cast<int>(r2);
                    break;
                }
            }
            if (found < 0) {
                report.violations.push_back(
                    {victim, "output row disappeared after deleting an unrelated base row"});
                continue;
            }
            for (size_t c = 0; c < plain.rows[r].size(); ++c) {
                const Value& a = plain.rows[r][c];
                const Value& b = after.rows[static_cast<size_t>(found)][c];
                if (!values_equal_grouping(a, b)) {
                    report.violations.push_back({victim, "output row changed value"});
                    break;
                }
            }
        }
    }
    return report;
}

} // namespace sqlprov
