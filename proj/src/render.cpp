#include "sqlprov/render.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

namespace sqlprov {

namespace {

// precedence levels, higher binds tighter
int precedence(BinOp op) {
    switch (op) {
        case BinOp::Or: return 1;
        case BinOp::And: return 2;
        case BinOp::Eq:
        case BinOp::Ne:
        case BinOp::Lt:
        case BinOp::Le:
        case BinOp::Gt:
        case BinOp::Ge: return 4;
        case BinOp::Add:
        case BinOp::Sub: return 5;
        case BinOp::Mul:
        case BinOp::Div:
        case BinOp::Mod: return 6;
        case BinOp::Pow: return 8;
    }
    return 0;
}

bool needs_quotes(const std::string& ident) {
    if (ident.empty()) return true;
    if (!std::isalpha(static_cast<unsigned char>(ident[0])) && ident[0] != '_') return true;
    for (char c : ident)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return true;
    for (char c : ident)
        if (std::isupper(static_cast<unsigned char>(c))) return true;
    return false;
}

class Renderer {
public:
    std::string render(const Query& q) {
        query(q, 0);
        return out_.str();
    }
    std::string render(const Expr& e) {
        expr(e, 0);
        return out_.str();
    }

private:
    std::ostringstream out_;

    void indent(int level) { out_ << std::string(static_cast<size_t>(level) * 2, ' '); }

    void ident(const std::string& name) {
        if (needs_quotes(name)) {
            out_ << '"';
            for (char c : name) {
                out_ << c; // the dialect has no escapes inside quoted identifiers
            }
            out_ << '"';
        } else {
            out_ << name;
        }
    }

    void literal(const Literal& l) {
        std::visit(
            [&](const auto& v) {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, std::monostate>) {
                    out_ << "NULL";
                } else if constexpr (std::is_same_v<T, int64_t>) {
                    out_ << v;
                } else if constexpr (std::is_same_v<T, double>) {
                    std::ostringstream tmp;
                    tmp.precision(17);
                    tmp << v;
                    std::string s = tmp.str();
                    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
                        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
                        s += ".0";
                    out_ << s;
                } else if constexpr (std::is_same_v<T, bool>) {
                    out_ << (v ? "TRUE" : "FALSE");
                } else {
                    out_ << '\'';
                    for (char c : v) {
                        if (c == '\'') out_ << "''";
                        else out_ << c;
                    }
                    out_ << '\'';
                }
            },
            l.value);
    }

    void expr(const Expr& e, int parent_prec) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Literal>) {
                    literal(n);
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    if (!n.table.empty()) {
                        ident(n.table);
                        out_ << '.';
                    }
                    ident(n.column);
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    int prec = precedence(n.op);
                    bool paren = prec < parent_prec;
                    if (paren) out_ << '(';
                    // left-assoc: right child needs parens at equal precedence;
                    // '^' is right-assoc, mirrored
                    int lp = n.op == BinOp::Pow ? prec + 1 : prec;
                    int rp = n.op == BinOp::Pow ? prec : prec + 1;
                    expr(*n.lhs, lp);
                    out_ << ' ' << bin_op_symbol(n.op) << ' ';
                    expr(*n.rhs, rp);
                    if (paren) out_ << ')';
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    if (n.op == UnOp::Neg) {
                        bool paren = 7 < parent_prec;
                        if (paren) out_ << '(';
                        out_ << '-';
                        expr(*n.operand, 8);
                        if (paren) out_ << ')';
                    } else if (n.op == UnOp::Not) {
                        bool paren = 3 < parent_prec;
                        if (paren) out_ << '(';
                        out_ << "NOT ";
                        expr(*n.operand, 3);
                        if (paren) out_ << ')';
                    } else {
                        bool paren = 4 < parent_prec;
                        if (paren) out_ << '(';
                        expr(*n.operand, 5);
                        out_ << (n.op == UnOp::IsNull ? " IS NULL" : " IS NOT NULL");
                        if (paren) out_ << ')';
                    }
                } else if constexpr (std::is_same_v<T, RowExpr>) {
                    out_ << "ROW(";
                    comma_exprs(n.items);
                    out_ << ')';
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    bool paren = 4 < parent_prec;
                    if (paren) out_ << '(';
                    expr(*n.probe, 5);
                    out_ << (n.negated ? " NOT IN (" : " IN (");
                    comma_exprs(n.items);
                    out_ << ')';
                    if (paren) out_ << ')';
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    out_ << "CASE";
                    if (n.operand) {
                        out_ << ' ';
                        expr(*n.operand, 0);
                    }
                    for (const auto& arm : n.arms) {
                        out_ << " WHEN ";
                        expr(*arm.when, 0);
                        out_ << " THEN ";
                        expr(*arm.then, 0);
                    }
                    if (n.else_arm) {
                        out_ << " ELSE ";
                        expr(*n.else_arm, 0);
                    }
                    out_ << " END";
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    ident(n.name);
                    out_ << '(';
                    comma_exprs(n.args);
                    out_ << ')';
                } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                    ident(n.func);
                    out_ << '(';
                    if (n.star) out_ << '*';
                    else expr(*n.arg, 0);
                    out_ << ')';
                } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                    ident(n.func);
                    out_ << '(';
                    comma_exprs(n.args);
                    out_ << ") OVER ";
                    window_spec(n.over);
                } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                    out_ << '(';
                    query_inline(*n.query);
                    out_ << ')';
                } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                    bool paren = 4 < parent_prec;
                    if (paren) out_ << '(';
                    expr(*n.probe, 5);
                    out_ << (n.negated ? " NOT IN (" : " IN (");
                    query_inline(*n.query);
                    out_ << ')';
                    if (paren) out_ << ')';
                } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                    out_ << (n.negated ? "NOT EXISTS (" : "EXISTS (");
                    query_inline(*n.query);
                    out_ << ')';
                }
            },
            e.node);
    }

    void comma_exprs(const std::vector<ExprPtr>& xs) {
        for (size_t i = 0; i < xs.size(); ++i) {
            if (i) out_ << ", ";
            expr(*xs[i], 0);
        }
    }

    void order_list(const std::vector<OrderItem>& xs) {
        for (size_t i = 0; i < xs.size(); ++i) {
            if (i) out_ << ", ";
            expr(*xs[i].expr, 0);
            if (xs[i].desc) out_ << " DESC";
        }
    }

    void frame(const Frame& f) {
        out_ << (f.unit == Frame::Unit::Rows ? "ROWS BETWEEN " : "RANGE BETWEEN ");
        frame_bound(f.lo);
        out_ << " AND ";
        frame_bound(f.hi);
    }

    void frame_bound(const FrameBound& b) {
        switch (b.kind) {
            case FrameBound::Kind::UnboundedPreceding: out_ << "UNBOUNDED PRECEDING"; break;
            case FrameBound::Kind::Preceding: out_ << b.offset << " PRECEDING"; break;
            case FrameBound::Kind::CurrentRow: out_ << "CURRENT ROW"; break;
            case FrameBound::Kind::Following: out_ << b.offset << " FOLLOWING"; break;
            case FrameBound::Kind::UnboundedFollowing: out_ << "UNBOUNDED FOLLOWING"; break;
        }
    }

    void window_spec(const WindowSpec& w) {
        if (w.is_ref() && !w.frame) {
            ident(w.name);
            return;
        }
        out_ << '(';
        bool space = false;
        if (!w.name.empty()) {
            ident(w.name);
            space = true;
        }
        if (!w.partition.empty()) {
            if (space) out_ << ' ';
            out_ << "PARTITION BY ";
            comma_exprs(w.partition);
            space = true;
        }
        if (!w.order.empty()) {
            if (space) out_ << ' ';
            out_ << "ORDER BY ";
            order_list(w.order);
            space = true;
        }
        if (w.frame) {
            if (space) out_ << ' ';
            frame(*w.frame);
        }
        out_ << ')';
    }

    /// Query without leading indentation (inside parentheses).
    void query_inline(const Query& q) { query(q, -1); }

    void query(const Query& q, int level) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    select_block(n, level);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    for (size_t i = 0; i < n.arms.size(); ++i) {
                        if (i) {
                            newline(level);
                            out_ << "UNION ALL";
                            newline(level);
                        }
                        bool paren = !n.arms[i]->template is<SelectBlock>();
                        if (paren) out_ << '(';
                        query(*n.arms[i], level < 0 ? level : level);
                        if (paren) out_ << ')';
                    }
                } else {
                    out_ << "WITH ";
                    if (n.recursive) out_ << "RECURSIVE ";
                    for (size_t i = 0; i < n.bindings.size(); ++i) {
                        const auto& b = n.bindings[i];
                        if (i) {
                            out_ << ',';
                            newline(level);
                            out_ << std::string(5, ' ');
                        }
                        ident(b.name);
                        if (!b.columns.empty()) {
                            out_ << '(';
                            for (size_t j = 0; j < b.columns.size(); ++j) {
                                if (j) out_ << ", ";
                                ident(b.columns[j]);
                            }
                            out_ << ')';
                        }
                        out_ << " AS (";
                        query_inline(*b.query);
                        out_ << ')';
                    }
                    newline(level);
                    query(*n.body, level);
                }
            },
            q.node);
    }

    void newline(int level) {
        out_ << '\n';
        if (level > 0) indent(level);
    }

    void select_block(const SelectBlock& b, int level) {
        out_ << "SELECT ";
        if (b.distinct) out_ << "DISTINCT ";
        if (!b.distinct_on.empty()) {
            out_ << "DISTINCT ON (";
            comma_exprs(b.distinct_on);
            out_ << ") ";
        }
        if (b.select_star) {
            out_ << '*';
        } else {
            for (size_t i = 0; i < b.items.size(); ++i) {
                if (i) out_ << ", ";
                expr(*b.items[i].expr, 0);
                if (!b.items[i].alias.empty()) {
                    out_ << " AS ";
                    ident(b.items[i].alias);
                }
            }
        }
        if (!b.from.empty()) {
            newline(level);
            out_ << "FROM ";
            for (size_t i = 0; i < b.from.size(); ++i) {
                const auto& s = b.from[i];
                if (i) {
                    if (s.join == FromStep::Join::Left) {
                        newline(level);
                        out_ << "  LEFT OUTER JOIN ";
                    } else {
                        out_ << ',';
                        newline(level);
                        out_ << "     ";
                    }
                }
                if (s.lateral) out_ << "LATERAL ";
                from_item(s.item, level);
                if (s.on) {
                    out_ << " ON (";
                    expr(*s.on, 0);
                    out_ << ')';
                }
            }
        }
        if (b.where) {
            newline(level);
            out_ << "WHERE ";
            expr(*b.where, 0);
        }
        if (b.group_by) {
            newline(level);
            out_ << "GROUP BY ";
            if (b.group_by->empty()) out_ << "()";
            else comma_exprs(*b.group_by);
        }
        if (b.having) {
            newline(level);
            out_ << "HAVING ";
            expr(*b.having, 0);
        }
        if (!b.windows.empty()) {
            newline(level);
            out_ << "WINDOW ";
            for (size_t i = 0; i < b.windows.size(); ++i) {
                const auto& w = b.windows[i];
                if (i) out_ << ", ";
                ident(w.name);
                out_ << " AS (";
                bool space = false;
                if (!w.partition.empty()) {
                    out_ << "PARTITION BY ";
                    comma_exprs(w.partition);
                    space = true;
                }
                if (!w.order.empty()) {
                    if (space) out_ << ' ';
                    out_ << "ORDER BY ";
                    order_list(w.order);
                }
                out_ << ')';
            }
        }
        if (!b.order_by.empty()) {
            newline(level);
            out_ << "ORDER BY ";
            order_list(b.order_by);
        }
        if (b.offset) {
            newline(level);
            out_ << "OFFSET " << *b.offset;
        }
        if (b.limit) {
            newline(level);
            out_ << "LIMIT ";
            if (b.limit->count) out_ << *b.limit->count;
            else out_ << "ALL";
        }
    }

    void from_item(const FromItem& f, int level) {
        switch (f.kind) {
            case FromItem::Kind::Table:
                ident(f.table);
                break;
            case FromItem::Kind::Subquery:
                out_ << '(';
                query(*f.subquery, level < 0 ? -1 : level + 2);
                out_ << ')';
                break;
            case FromItem::Kind::TableFunc:
                ident(f.func);
                out_ << '(';
                comma_exprs(f.args);
                out_ << ')';
                break;
            case FromItem::Kind::Bind:
                out_ << "(BIND ";
                for (size_t i = 0; i < f.bind_columns.size(); ++i) {
                    if (i) out_ << ", ";
                    ident(f.bind_columns[i]);
                }
                out_ << ')';
                break;
        }
        out_ << " AS ";
        ident(f.alias);
        if (!f.column_aliases.empty()) {
            out_ << '(';
            for (size_t i = 0; i < f.column_aliases.size(); ++i) {
                if (i) out_ << ", ";
                ident(f.column_aliases[i]);
            }
            out_ << ')';
        }
    }
};

} // namespace

std::string render_sql(const Query& q) {
    Renderer r;
    return r.render(q);
}

std::string render_sql(const Expr& e) {
    Renderer r;
    return r.render(e);
}

} // namespace sqlprov
