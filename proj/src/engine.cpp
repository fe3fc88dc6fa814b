#include "sqlprov/engine.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace sqlprov {

namespace {

[[noreturn]] void eval_error(const std::string& msg, SourceSpan span = {}) {
    throw SqlError(ErrorKind::Evaluation, msg, span);
}

bool numeric(const Value& v) {
    return std::holds_alternative<int64_t>(v) || std::holds_alternative<double>(v);
}

double as_double(const Value& v) {
    if (const auto* i = std::get_if<int64_t>(&v)) return static_cast<double>(*i);
    return std::get<double>(v);
}

} // namespace

int Schema::index_of(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == name) return static_cast<int>(i);
    return -1;
}

// ---------------------------------------------------------------------------
// value helpers

bool value_truthy(const Value& v) {
    const bool* b = std::get_if<bool>(&v);
    return b && *b;
}

bool values_equal_sql(const Value& a, const Value& b) {
    if (numeric(a) && numeric(b)) {
        if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b))
            return std::get<int64_t>(a) == std::get<int64_t>(b);
        return as_double(a) == as_double(b);
    }
    if (a.index() != b.index()) eval_error("type mismatch in comparison");
    if (const auto* s = std::get_if<std::string>(&a)) return *s == std::get<std::string>(b);
    if (const auto* f = std::get_if<bool>(&a)) return *f == std::get<bool>(b);
    eval_error("values of this type cannot be compared");
}

bool values_equal_grouping(const Value& a, const Value& b) {
    if (is_null(a) || is_null(b)) return is_null(a) && is_null(b);
    return values_equal_sql(a, b);
}

int compare_values(const Value& a, const Value& b) {
    if (numeric(a) && numeric(b)) {
        if (std::holds_alternative<int64_t>(a) && std::holds_alternative<int64_t>(b)) {
            int64_t x = std::get<int64_t>(a), y = std::get<int64_t>(b);
            return x < y ? -1 : x > y ? 1 : 0;
        }
        double x = as_double(a), y = as_double(b);
        return x < y ? -1 : x > y ? 1 : 0;
    }
    if (a.index() != b.index()) eval_error("type mismatch in comparison");
    if (const auto* s = std::get_if<std::string>(&a)) {
        int c = s->compare(std::get<std::string>(b));
        return c < 0 ? -1 : c > 0 ? 1 : 0;
    }
    if (const auto* f = std::get_if<bool>(&a)) {
        bool x = *f, y = std::get<bool>(b);
        return x == y ? 0 : (!x ? -1 : 1);
    }
    eval_error("values of this type cannot be ordered");
}

std::string value_to_text(const Value& v) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, std::monostate>) {
                return "";
            } else if constexpr (std::is_same_v<T, int64_t>) {
                return std::to_string(x);
            } else if constexpr (std::is_same_v<T, double>) {
                std::ostringstream out;
                out.precision(17);
                out << x;
                std::string s = out.str();
                if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
                    s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
                    s += ".0";
                return s;
            } else if constexpr (std::is_same_v<T, bool>) {
                return x ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::string>) {
                return x;
            } else {
                return "<set>";
            }
        },
        v);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

struct CsvField {
    std::string text;
    bool quoted = false;
};

std::vector<std::vector<CsvField>> parse_csv(const std::string& text) {
    std::vector<std::vector<CsvField>> rows;
    std::vector<CsvField> row;
    CsvField field;
    bool quoting = false;
    bool row_has_content = false;
    size_t i = 0;
    auto push_field = [&]() {
        row.push_back(std::move(field));
        field = {};
    };
    auto push_row = [&]() {
        push_field();
        rows.push_back(std::move(row));
        row.clear();
        row_has_content = false;
    };
    while (i < text.size()) {
        char c = text[i];
        if (quoting) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.text.push_back('"');
                    i += 2;
                    continue;
                }
                quoting = false;
                ++i;
                continue;
            }
            field.text.push_back(c);
            ++i;
            continue;
        }
        switch (c) {
            case '"':
                quoting = true;
                field.quoted = true;
                row_has_content = true;
                ++i;
                break;
            case ',':
                push_field();
                row_has_content = true;
                ++i;
                break;
            case '\r': ++i; break;
            case '\n':
                if (row_has_content || !field.text.empty() || !row.empty()) push_row();
                ++i;
                break;
            default:
                field.text.push_back(c);
                row_has_content = true;
                ++i;
                break;
        }
    }
    if (row_has_content || !field.text.empty() || !row.empty()) push_row();
    return rows;
}

std::string csv_escape(const std::string& s, bool force_quote) {
    bool need = force_quote;
    for (char c : s)
        if (c == ',' || c == '"' || c == '\n' || c == '\r') need = true;
    if (!need) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

Value parse_cell(const CsvField& f, ColType type) {
    if (f.text.empty() && !f.quoted) return std::monostate{}; // empty field = NULL
    switch (type) {
        case ColType::Int64: return static_cast<int64_t>(std::stoll(f.text));
        case ColType::Float64: return std::stod(f.text);
        case ColType::Bool: {
            std::string low = f.text;
            std::transform(low.begin(), low.end(), low.begin(), ::tolower);
            if (low == "true" || low == "t" || low == "1") return true;
            if (low == "false" || low == "f" || low == "0") return false;
            eval_error("bad boolean in CSV: " + f.text);
        }
        default: return f.text;
    }
}

} // namespace

std::string table_to_csv(const Table& t) {
    std::ostringstream out;
    bool first = true;
    if (t.has_rho) {
        out << kRhoColumn;
        first = false;
    }
    for (const auto& col : t.schema.columns) {
        if (!first) out << ',';
        out << csv_escape(col.name, false);
        first = false;
    }
    out << '\n';
    for (size_t r = 0; r < t.rows.size(); ++r) {
        first = true;
        if (t.has_rho) {
            out << t.rhos[r];
            first = false;
        }
        for (const auto& v : t.rows[r]) {
            if (!first) out << ',';
            bool force = std::holds_alternative<std::string>(v) && value_to_text(v).empty();
            out << csv_escape(value_to_text(v), force);
            first = false;
        }
        out << '\n';
    }
    return out.str();
}

Table table_from_csv(const std::string& text, const std::vector<Column>& columns) {
    Table t;
    t.schema.columns = columns;
    auto rows = parse_csv(text);
    if (rows.empty()) eval_error("CSV lacks a header row");
    const auto& header = rows[0];
    std::vector<int> order;
    for (const auto& col : columns) {
        int found = -1;
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i].text == col.name) found = static_cast<int>(i);
        if (found < 0) eval_error("CSV is missing column: " + col.name);
        order.push_back(found);
    }
    for (size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < header.size()) eval_error("short CSV row");
        std::vector<Value> row;
        for (size_t c = 0; c < columns.size(); ++c)
            row.push_back(parse_cell(rows[r][static_cast<size_t>(order[c])], columns[c].type));
        t.rows.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Database

Database Database::load(const std::string& directory) {
    std::ifstream schema_in(directory + "/schema.json");
    if (!schema_in) throw SqlError(ErrorKind::Io, "missing schema.json in " + directory);
    nlohmann::ordered_json schema = nlohmann::ordered_json::parse(schema_in);

    std::vector<TableDef> defs;
    std::vector<std::vector<std::vector<Value>>> data;
    for (auto it = schema.begin(); it != schema.end(); ++it) {
        TableDef def;
        def.name = it.key();
        for (const auto& col : it.value().at("columns")) {
            auto t = col_type_from_name(col.at("type").get<std::string>());
            if (!t) throw SqlError(ErrorKind::Io, "unsupported column type in schema.json");
            def.columns.push_back(Column{col.at("name").get<std::string>(), *t});
        }
        std::ifstream csv(directory + "/" + def.name + ".csv");
        if (!csv) throw SqlError(ErrorKind::Io, "missing CSV for table " + def.name);
        std::stringstream buf;
        buf << csv.rdbuf();
        Table t = table_from_csv(buf.str(), def.columns);
        data.push_back(std::move(t.rows));
        defs.push_back(std::move(def));
    }
    return from_tables(std::move(defs), std::move(data));
}

Database Database::from_tables(std::vector<TableDef> defs,
                               std::vector<std::vector<std::vector<Value>>> rows) {
    Database db;
    for (auto& def : defs) {
        std::set<std::string> names;
        for (const auto& c : def.columns) {
            if (c.name == kRhoColumn)
                throw SqlError(ErrorKind::Io,
                               "column name " + kRhoColumn + " is reserved (table " + def.name + ")");
            if (!names.insert(c.name).second)
                throw SqlError(ErrorKind::Io, "duplicate column in table " + def.name);
        }
        if (db.find(def.name)) throw SqlError(ErrorKind::Io, "duplicate table " + def.name);
        db.defs_.push_back(def);
    }
    Rho next = 1;
    for (size_t i = 0; i < db.defs_.size(); ++i) {
        Table t;
        t.schema.columns = db.defs_[i].columns;
        t.rows = std::move(rows[i]);
        t.has_rho = true;
        db.first_rho_.push_back(next);
        for (size_t r = 0; r < t.rows.size(); ++r) t.rhos.push_back(next++);
        db.tables_.push_back(std::move(t));
    }
    db.base_rows_ = next - 1;
    return db;
}

const Table* Database::find(const std::string& name) const {
    for (size_t i = 0; i < defs_.size(); ++i)
        if (defs_[i].name == name) return &tables_[i];
    return nullptr;
}

int Database::table_index(const std::string& name) const {
    for (size_t i = 0; i < defs_.size(); ++i)
        if (defs_[i].name == name) return static_cast<int>(i);
    return -1;
}

Catalog Database::catalog() const {
    Catalog cat;
    cat.tables = defs_;
    return cat;
}

Table Database::dep_variant(size_t i, Granularity g, DepBackend b, const DepUniverse* u) const {
    const Table& base = tables_[i];
    Table out;
    out.has_rho = true;
    out.rhos = base.rhos;
    if (g == Granularity::Cell) {
        for (const auto& col : base.schema.columns)
            out.schema.columns.push_back(Column{col.name, ColType::Dep});
        for (size_t r = 0; r < base.rows.size(); ++r) {
            std::vector<Value> row;
            for (size_t c = 0; c < base.schema.columns.size(); ++c)
                row.push_back(
                    DepSet::singleton(b, u, CellId{base.rhos[r], static_cast<uint32_t>(c)}.code()));
            out.rows.push_back(std::move(row));
        }
    } else {
        out.schema.columns.push_back(Column{"prov", ColType::Dep});
        for (size_t r = 0; r < base.rows.size(); ++r)
            out.rows.push_back({Value(DepSet::singleton(b, u, base.rhos[r]))});
    }
    return out;
}

DepUniverse Database::build_universe(Granularity g) const {
    DepUniverse u;
    for (size_t i = 0; i < tables_.size(); ++i) {
        const Table& t = tables_[i];
        for (size_t r = 0; r < t.rows.size(); ++r) {
            if (g == Granularity::Cell) {
                for (size_t c = 0; c < t.schema.columns.size(); ++c)
                    u.add(CellId{t.rhos[r], static_cast<uint32_t>(c)}.code());
            } else {
                u.add(t.rhos[r]);
            }
        }
    }
    u.finalize();
    return u;
}

std::string Database::cell_name(uint64_t code, Granularity g) const {
    Rho rho = g == Granularity::Cell ? CellId::from_code(code).rho : code;
    for (size_t i = 0; i < defs_.size(); ++i) {
        Rho first = first_rho_[i];
        if (rho >= first && rho < first + tables_[i].rows.size()) {
            std::string out = defs_[i].name + ".ρ" + std::to_string(rho);
            if (g == Granularity::Cell) {
                uint32_t col = CellId::from_code(code).column;
                out += "." + defs_[i].columns[col].name;
            }
            return out;
        }
    }
    return "?ρ" + std::to_string(rho);
}

Rho Database::cell_row(uint64_t code, Granularity g) const {
    return g == Granularity::Cell ? CellId::from_code(code).rho : code;
}

Database Database::without_row(Rho rho) const {
    Database out = *this;
    for (auto& t : out.tables_) {
        for (size_t r = 0; r < t.rhos.size(); ++r) {
            if (t.rhos[r] == rho) {
                t.rows.erase(t.rows.begin() + static_cast<long>(r));
                t.rhos.erase(t.rhos.begin() + static_cast<long>(r));
                return out;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Engine internals

namespace {

bool contains_any_aggregate(const Expr& e) {
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

bool contains_any_window(const Expr& e) {
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

struct RelSlot {
    std::string alias;
    Schema schema;
    size_t offset;
};

struct BlockScope {
    std::vector<RelSlot> rels;
    size_t width = 0;

    const RelSlot* find(const std::string& alias) const {
        for (const auto& r : rels)
            if (r.alias == alias) return &r;
        return nullptr;
    }
};

struct Env {
    const Env* parent = nullptr;
    const BlockScope* scope = nullptr;
    const std::vector<Value>* row = nullptr;
};

struct GroupCtx {
    const std::vector<ExprPtr>* keys = nullptr;
    std::vector<Value> key_values;
    const std::vector<std::vector<Value>>* input = nullptr;
    std::vector<size_t> members;
};

struct WindowValues {
    std::map<const Expr*, std::vector<Value>> values;
};

struct RowCtx {
    const BlockScope* scope = nullptr;
    const std::vector<Value>* row = nullptr;
    const Env* outer = nullptr;
    const GroupCtx* group = nullptr;
    const WindowValues* windows = nullptr;
    size_t row_index = 0;

    Env as_env() const {
        Env e;
        e.parent = outer;
        e.scope = scope;
        e.row = row;
        return e;
    }
};

int64_t require_int(const Value& v, const char* what, SourceSpan span) {
    if (const auto* i = std::get_if<int64_t>(&v)) return *i;
    throw SqlError(ErrorKind::Evaluation, std::string("expected integer for ") + what, span);
}

Value eval_binary_arith(BinOp op, const Value& l, const Value& r, SourceSpan span) {
    if (op == BinOp::Div || op == BinOp::Pow) {
        double a = as_double(l), b = as_double(r);
        if (op == BinOp::Div) {
            if (b == 0.0) throw SqlError(ErrorKind::Evaluation, "division by zero", span);
            return a / b;
        }
        return std::pow(a, b);
    }
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
    double a = as_double(l), b = as_double(r);
    switch (op) {
        case BinOp::Add: return a + b;
        case BinOp::Sub: return a - b;
        case BinOp::Mul: return a * b;
        default: break;
    }
    throw SqlError(ErrorKind::Evaluation, "bad arithmetic operator", span);
}

// free aliases used for correlation checks

void query_free_aliases(const Query& q, std::set<std::string> bound, std::set<std::string>& out) {
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
                            query_free_aliases(*sq->query, inner, out);
                            return false;
                        } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                            scan(*in->probe);
                            query_free_aliases(*in->query, inner, out);
                            return false;
                        } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                            query_free_aliases(*ex->query, inner, out);
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
                        query_free_aliases(*s.item.subquery, s.lateral ? so_far : bound, out);
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
                for (const auto& a : n.arms) query_free_aliases(*a, bound, out);
            } else {
                std::set<std::string> with_bound = bound;
                for (const auto& b : n.bindings) query_free_aliases(*b.query, with_bound, out);
                query_free_aliases(*n.body, with_bound, out);
            }
        },
        q.node);
}

void item_free_aliases(const FromItem& item, std::set<std::string>& out) {
    switch (item.kind) {
        case FromItem::Kind::Bind:
            out.insert(item.alias);
            break;
        case FromItem::Kind::Subquery:
            query_free_aliases(*item.subquery, {}, out);
            break;
        case FromItem::Kind::TableFunc:
            for (const auto& a : item.args)
                walk_exprs(*a, [&](const Expr& x) {
                    if (const auto* ref = std::get_if<ColumnRef>(&x.node))
                        if (!ref->table.empty()) out.insert(ref->table);
                    return true;
                });
            break;
        case FromItem::Kind::Table:
            break;
    }
}

struct OutRow {
    std::vector<Value> items;
    std::vector<Value> order_keys;
    std::vector<Value> distinct_keys;
};

struct EngineState {
    const Database& db;
    EvalOptions opt;
    DepUniverse local_universe;
    std::vector<std::map<std::string, Table>> cte_frames;
    std::map<size_t, Table> dep_cache;
    std::map<const Query*, Table> subquery_memo;
    std::map<const void*, bool> correlation_cache;

    EngineState(const Database& d, EvalOptions o) : db(d), opt(o) {
        if (opt.mode == EvalMode::Phase2 && !opt.universe && opt.backend == DepBackend::Bitset) {
            local_universe = db.build_universe(opt.granularity);
            opt.universe = &local_universe;
        }
    }

    DepSet empty_dep() const {
        return opt.backend == DepBackend::Array ? DepSet::empty_array()
                                                : DepSet::empty_bitset(opt.universe);
    }
    DepSet as_dep(const Value& v) const {
        if (is_null(v)) return empty_dep();
        if (const auto* d = std::get_if<DepSet>(&v)) return *d;
        eval_error("expected a dependency set");
    }

    const Table* find_cte(const std::string& name) const {
        for (auto it = cte_frames.rbegin(); it != cte_frames.rend(); ++it) {
            auto found = it->find(name);
            if (found != it->end()) return &found->second;
        }
        return nullptr;
    }

    bool query_uncorrelated(const Query& q) {
        auto it = correlation_cache.find(&q);
        if (it != correlation_cache.end()) return it->second;
        std::set<std::string> frees;
        query_free_aliases(q, {}, frees);
        bool un = frees.empty();
        correlation_cache[&q] = un;
        return un;
    }

    // ---- table access per mode

    Table base_table_for_mode(const std::string& name, SourceSpan span) {
        int idx = db.table_index(name);
        if (idx < 0) eval_error("unknown table: " + name, span);
        const Table& plain = db.table(static_cast<size_t>(idx));
        if (opt.mode == EvalMode::Plain) {
            Table t;
            t.schema = plain.schema;
            t.rows = plain.rows;
            return t;
        }
        const Table* source = &plain;
        if (opt.mode == EvalMode::Phase2) {
            auto cached = dep_cache.find(static_cast<size_t>(idx));
            if (cached == dep_cache.end())
                cached = dep_cache
                             .emplace(static_cast<size_t>(idx),
                                      db.dep_variant(static_cast<size_t>(idx), opt.granularity,
                                                     opt.backend, opt.universe))
                             .first;
            source = &cached->second;
        }
        Table t;
        t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
        for (const auto& c : source->schema.columns) t.schema.columns.push_back(c);
        for (size_t r = 0; r < source->rows.size(); ++r) {
            std::vector<Value> row;
            row.push_back(static_cast<int64_t>(source->rhos[r]));
            for (const auto& v : source->rows[r]) row.push_back(v);
            t.rows.push_back(std::move(row));
        }
        return t;
    }

    // ---- expression evaluation

    Value lookup_column(const ColumnRef& ref, const RowCtx& ctx, SourceSpan span) {
        if (!ref.table.empty()) {
            if (ctx.scope && ctx.row) {
                if (const RelSlot* slot = ctx.scope->find(ref.table)) {
                    int c = slot->schema.index_of(ref.column);
                    if (c < 0) eval_error("unknown column: " + ref.table + "." + ref.column, span);
                    return (*ctx.row)[slot->offset + static_cast<size_t>(c)];
                }
            }
            for (const Env* e = ctx.outer; e; e = e->parent) {
                if (!e->scope || !e->row) continue;
                if (const RelSlot* slot = e->scope->find(ref.table)) {
                    int c = slot->schema.index_of(ref.column);
                    if (c < 0) eval_error("unknown column: " + ref.table + "." + ref.column, span);
                    return (*e->row)[slot->offset + static_cast<size_t>(c)];
                }
            }
            eval_error("unbound row variable: " + ref.table, span);
        }
        auto try_scope = [&](const BlockScope* scope,
                             const std::vector<Value>* row) -> std::optional<Value> {
            if (!scope || !row) return std::nullopt;
            const RelSlot* where = nullptr;
            int col = -1;
            for (const auto& slot : scope->rels) {
                int c = slot.schema.index_of(ref.column);
                if (c >= 0) {
                    if (where) eval_error("ambiguous column: " + ref.column, span);
                    where = &slot;
                    col = c;
                }
            }
            if (!where) return std::nullopt;
            return (*row)[where->offset + static_cast<size_t>(col)];
        };
        if (auto v = try_scope(ctx.scope, ctx.row)) return *v;
        for (const Env* e = ctx.outer; e; e = e->parent)
            if (auto v = try_scope(e->scope, e->row)) return *v;
        eval_error("unknown column: " + ref.column, span);
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

    const Table* subquery_table(const Query& q, const RowCtx& ctx, Table& local) {
        if (query_uncorrelated(q) && !references_cte(q)) {
            auto memo = subquery_memo.find(&q);
            if (memo == subquery_memo.end()) {
                Env env = ctx.as_env();
                memo = subquery_memo.emplace(&q, eval_query(q, &env)).first;
            }
            return &memo->second;
        }
        Env env = ctx.as_env();
        local = eval_query(q, &env);
        return &local;
    }

    Value eval_expr(const Expr& e, const RowCtx& ctx) {
        return std::visit(
            [&](const auto& n) -> Value {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Literal>) {
                    return std::visit(
                        [](const auto& v) -> Value {
                            using V = std::decay_t<decltype(v)>;
                            if constexpr (std::is_same_v<V, std::monostate>)
                                return std::monostate{};
                            else
                                return v;
                        },
                        n.value);
                } else if constexpr (std::is_same_v<T, ColumnRef>) {
                    if (ctx.group && ctx.group->keys) {
                        for (size_t i = 0; i < ctx.group->keys->size(); ++i)
                            if (equal(*(*ctx.group->keys)[i], e)) return ctx.group->key_values[i];
                    }
                    return lookup_column(n, ctx, e.span);
                } else if constexpr (std::is_same_v<T, BinaryExpr>) {
                    if (n.op == BinOp::And || n.op == BinOp::Or) {
                        Value l = eval_expr(*n.lhs, ctx);
                        Value r = eval_expr(*n.rhs, ctx);
                        auto tri = [](const Value& v) -> int {
                            if (is_null(v)) return -1;
                            if (!std::holds_alternative<bool>(v))
                                eval_error("boolean operator over a non-boolean");
                            return std::get<bool>(v) ? 1 : 0;
                        };
                        int a = tri(l), b = tri(r);
                        if (n.op == BinOp::And) {
                            if (a == 0 || b == 0) return false;
                            if (a == -1 || b == -1) return std::monostate{};
                            return true;
                        }
                        if (a == 1 || b == 1) return true;
                        if (a == -1 || b == -1) return std::monostate{};
                        return false;
                    }
                    if ((n.op == BinOp::Eq || n.op == BinOp::Ne) &&
                        std::holds_alternative<RowExpr>(n.lhs->node) &&
                        std::holds_alternative<RowExpr>(n.rhs->node)) {
                        // ROW comparisons on not-yet-normalized queries
                        const auto& l = std::get<RowExpr>(n.lhs->node);
                        const auto& r = std::get<RowExpr>(n.rhs->node);
                        if (l.items.size() != r.items.size())
                            eval_error("ROW comparison arity mismatch", e.span);
                        bool all = true, saw_null = false;
                        for (size_t i = 0; i < l.items.size(); ++i) {
                            Value a = eval_expr(*l.items[i], ctx);
                            Value b = eval_expr(*r.items[i], ctx);
                            if (is_null(a) || is_null(b)) {
                                saw_null = true;
                                continue;
                            }
                            if (!values_equal_sql(a, b)) all = false;
                        }
                        if (!all) return n.op == BinOp::Ne;
                        if (saw_null) return std::monostate{};
                        return n.op == BinOp::Eq;
                    }
                    Value l = eval_expr(*n.lhs, ctx);
                    Value r = eval_expr(*n.rhs, ctx);
                    if (is_null(l) || is_null(r)) return std::monostate{};
                    switch (n.op) {
                        case BinOp::Eq: return values_equal_sql(l, r);
                        case BinOp::Ne: return !values_equal_sql(l, r);
                        case BinOp::Lt: return compare_values(l, r) < 0;
                        case BinOp::Le: return compare_values(l, r) <= 0;
                        case BinOp::Gt: return compare_values(l, r) > 0;
                        case BinOp::Ge: return compare_values(l, r) >= 0;
                        default: return eval_binary_arith(n.op, l, r, e.span);
                    }
                } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                    Value v = eval_expr(*n.operand, ctx);
                    switch (n.op) {
                        case UnOp::Neg:
                            if (is_null(v)) return std::monostate{};
                            if (const auto* i = std::get_if<int64_t>(&v)) return -*i;
                            return -as_double(v);
                        case UnOp::Not:
                            if (is_null(v)) return std::monostate{};
                            return !std::get<bool>(v);
                        case UnOp::IsNull: return is_null(v);
                        case UnOp::IsNotNull: return !is_null(v);
                    }
                    return std::monostate{};
                } else if constexpr (std::is_same_v<T, RowExpr>) {
                    eval_error("ROW value used outside a comparison", e.span);
                } else if constexpr (std::is_same_v<T, InListExpr>) {
                    Value probe = eval_expr(*n.probe, ctx);
                    bool saw_null = is_null(probe);
                    bool hit = false;
                    for (const auto& item : n.items) {
                        Value v = eval_expr(*item, ctx);
                        if (is_null(v)) {
                            saw_null = true;
                            continue;
                        }
                        if (!is_null(probe) && values_equal_sql(probe, v)) hit = true;
                    }
                    if (hit) return !n.negated;
                    if (saw_null) return std::monostate{};
                    return n.negated;
                } else if constexpr (std::is_same_v<T, CaseExpr>) {
                    if (n.operand) {
                        Value op = eval_expr(*n.operand, ctx);
                        for (const auto& arm : n.arms) {
                            Value w = eval_expr(*arm.when, ctx);
                            if (!is_null(op) && !is_null(w) && values_equal_sql(op, w))
                                return eval_expr(*arm.then, ctx);
                        }
                        if (n.else_arm) return eval_expr(*n.else_arm, ctx);
                        return std::monostate{};
                    }
                    for (const auto& arm : n.arms)
                        if (value_truthy(eval_expr(*arm.when, ctx)))
                            return eval_expr(*arm.then, ctx);
                    if (n.else_arm) return eval_expr(*n.else_arm, ctx);
                    return std::monostate{};
                } else if constexpr (std::is_same_v<T, FuncCallExpr>) {
                    return eval_scalar_call(n, e, ctx);
                } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                    if (!ctx.group) eval_error("aggregate outside a grouped block", e.span);
                    std::vector<const std::vector<Value>*> rows;
                    for (size_t idx : ctx.group->members)
                        rows.push_back(&(*ctx.group->input)[idx]);
                    return aggregate_over(n.func, n.arg.get(), rows, ctx);
                } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                    if (!ctx.windows)
                        eval_error("window function outside a windowed block", e.span);
                    auto it = ctx.windows->values.find(&e);
                    if (it == ctx.windows->values.end())
                        eval_error("window function was not precomputed", e.span);
                    return it->second[ctx.row_index];
                } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                    Table local;
                    const Table* t = subquery_table(*n.query, ctx, local);
                    if (t->schema.columns.size() != 1)
                        eval_error("scalar subquery must produce one column", e.span);
                    if (t->rows.empty()) return std::monostate{};
                    if (t->rows.size() > 1)
                        eval_error("scalar subquery produced more than one row", e.span);
                    return t->rows[0][0];
                } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                    Value probe = eval_expr(*n.probe, ctx);
                    Table local;
                    const Table* t = subquery_table(*n.query, ctx, local);
                    if (t->schema.columns.size() != 1)
                        eval_error("IN subquery must produce one column", e.span);
                    bool saw_null = is_null(probe);
                    bool hit = false;
                    for (const auto& row : t->rows) {
                        if (is_null(row[0])) {
                            saw_null = true;
                            continue;
                        }
                        if (!is_null(probe) && values_equal_sql(probe, row[0])) hit = true;
                    }
                    if (hit) return !n.negated;
                    if (saw_null) return std::monostate{};
                    return n.negated;
                } else {
                    static_assert(std::is_same_v<T, ExistsExpr>);
                    Table local;
                    const Table* t = subquery_table(*n.query, ctx, local);
                    bool exists = !t->rows.empty();
                    return n.negated ? !exists : exists;
                }
            },
            e.node);
    }

    Value eval_scalar_call(const FuncCallExpr& call, const Expr& e, const RowCtx& ctx) {
        const std::string& name = call.name;
        auto arg = [&](size_t i) { return eval_expr(*call.args[i], ctx); };

        if (name == "ds_empty") return empty_dep();
        if (name == "ds_union") {
            DepSet acc = empty_dep();
            for (const auto& a : call.args) acc = acc.union_with(as_dep(eval_expr(*a, ctx)));
            return acc;
        }
        if (name == "ds_why") return as_dep(arg(0)).mark_why();

        if (name.rfind("logwrite_", 0) == 0) {
            if (opt.mode != EvalMode::Phase1 || !opt.log)
                eval_error(name + " is only available in Phase 1", e.span);
            LogStore& log = *opt.log;
            if (name.rfind("logwrite_join", 0) == 0) {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                std::vector<int64_t> rhos;
                for (size_t i = 1; i < call.args.size(); ++i)
                    rhos.push_back(require_int(arg(i), "rho", e.span));
                return static_cast<int64_t>(log.write_join(site, rhos));
            }
            if (name == "logwrite_grp") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                Value v = arg(1);
                const auto* rs = std::get_if<RidSet>(&v);
                if (!rs) eval_error("logwrite_grp expects a rid set", e.span);
                return static_cast<int64_t>(log.write_grp(site, rs->ids));
            }
            if (name == "logwrite_win") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                Rho rho = static_cast<Rho>(require_int(arg(1), "rho", e.span));
                Rho part = static_cast<Rho>(require_int(arg(2), "part", e.span));
                int64_t rank = require_int(arg(3), "rank", e.span);
                return static_cast<int64_t>(log.write_win(site, rho, part, rank));
            }
            if (name == "logwrite_case") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                Value rv = arg(1);
                Rho rho = is_null(rv) ? Rho(0) : static_cast<Rho>(require_int(rv, "rho", e.span));
                int64_t branch = require_int(arg(2), "branch", e.span);
                return log.write_case(site, rho, branch);
            }
            if (name == "logwrite_left") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                Rho left = static_cast<Rho>(require_int(arg(1), "rho", e.span));
                Value rv = arg(2);
                std::optional<Rho> right;
                if (!is_null(rv)) right = static_cast<Rho>(require_int(rv, "rho", e.span));
                return static_cast<int64_t>(log.write_left(site, left, right));
            }
            if (name == "logwrite_filter") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                Rho rho = static_cast<Rho>(require_int(arg(1), "rho", e.span));
                return static_cast<int64_t>(log.write_filter(site, rho));
            }
            if (name == "logwrite_tblf") {
                int site = static_cast<int>(require_int(arg(0), "site", e.span));
                return static_cast<int64_t>(log.write_tblf(site));
            }
            eval_error("unknown log writer: " + name, e.span);
        }
        if (name == "logread_case") {
            if (opt.mode != EvalMode::Phase2 || !opt.log)
                eval_error(name + " is only available in Phase 2", e.span);
            int site = static_cast<int>(require_int(arg(0), "site", e.span));
            Value rv = arg(1);
            Rho rho = is_null(rv) ? Rho(0) : static_cast<Rho>(require_int(rv, "rho", e.span));
            auto branch = opt.log->read_case(site, rho);
            if (!branch)
                throw SqlError(ErrorKind::ReplayIntegrity,
                               "missing CASE record at site " + std::to_string(site) +
                                   " for rho " + std::to_string(rho),
                               e.span);
            return *branch;
        }
        if (name == "logread_grp_key") {
            if (opt.mode != EvalMode::Phase2 || !opt.log)
                eval_error(name + " is only available in Phase 2", e.span);
            int site = static_cast<int>(require_int(arg(0), "site", e.span));
            Value v = arg(1);
            const auto* rs = std::get_if<RidSet>(&v);
            if (!rs) eval_error("logread_grp_key expects a rid set", e.span);
            auto rho = opt.log->read_grp_by_key(site, rs->ids);
            if (!rho) return std::monostate{};
            return static_cast<int64_t>(*rho);
        }

        auto num1 = [&](auto fn) -> Value {
            Value v = arg(0);
            if (is_null(v)) return std::monostate{};
            return fn(as_double(v));
        };
        if (name == "sqrt")
            return num1([&](double x) -> Value {
                if (x < 0) eval_error("sqrt of a negative number", e.span);
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
                if (x <= 0) eval_error("ln of a non-positive number", e.span);
                return std::log(x);
            });
        if (name == "round" || name == "floor" || name == "ceil") {
            Value v = arg(0);
            if (is_null(v)) return std::monostate{};
            if (const auto* i = std::get_if<int64_t>(&v)) return *i;
            double x = as_double(v);
            if (name == "round") return static_cast<int64_t>(std::llround(x));
            if (name == "floor") return static_cast<int64_t>(std::floor(x));
            return static_cast<int64_t>(std::ceil(x));
        }
        if (name == "abs") {
            Value v = arg(0);
            if (is_null(v)) return std::monostate{};
            if (const auto* i = std::get_if<int64_t>(&v)) return *i < 0 ? -*i : *i;
            return std::fabs(as_double(v));
        }
        if (name == "greatest" || name == "least") {
            std::optional<Value> acc;
            for (size_t i = 0; i < call.args.size(); ++i) {
                Value v = arg(i);
                if (is_null(v)) continue;
                if (!acc) {
                    acc = v;
                    continue;
                }
                int c = compare_values(v, *acc);
                if ((name == "greatest" && c > 0) || (name == "least" && c < 0)) acc = v;
            }
            if (!acc) return std::monostate{};
            return *acc;
        }
        eval_error("unknown function: " + name, e.span);
    }

    Value aggregate_over(const std::string& func, const Expr* arg,
                         const std::vector<const std::vector<Value>*>& rows, const RowCtx& base) {
        std::vector<Value> vals;
        vals.reserve(rows.size());
        for (const auto* row : rows) {
            RowCtx ctx = base;
            ctx.row = row;
            ctx.group = nullptr;
            ctx.windows = nullptr;
            vals.push_back(arg ? eval_expr(*arg, ctx) : Value(int64_t(1)));
        }
        if (func == "count") {
            int64_t n = 0;
            for (const auto& v : vals)
                if (!is_null(v)) ++n;
            return n;
        }
        if (func == "ds_agg") {
            DepSet acc = empty_dep();
            for (const auto& v : vals)
                if (!is_null(v)) acc = acc.union_with(as_dep(v));
            return acc;
        }
        if (func == "ds_first") {
            if (vals.empty()) return std::monostate{};
            return vals[0];
        }
        if (func == "rid_agg") {
            RidSet out;
            for (const auto& v : vals) {
                if (is_null(v)) continue;
                out.ids.push_back(static_cast<Rho>(std::get<int64_t>(v)));
            }
            std::sort(out.ids.begin(), out.ids.end());
            out.ids.erase(std::unique(out.ids.begin(), out.ids.end()), out.ids.end());
            return out;
        }
        if (func == "sum" || func == "avg") {
            bool any = false, all_int = true;
            int64_t isum = 0;
            double fsum = 0;
            int64_t n = 0;
            for (const auto& v : vals) {
                if (is_null(v)) continue;
                any = true;
                ++n;
                if (const auto* i = std::get_if<int64_t>(&v)) {
                    isum += *i;
                    fsum += static_cast<double>(*i);
                } else {
                    all_int = false;
                    fsum += as_double(v);
                }
            }
            if (!any) return std::monostate{};
            if (func == "avg") return fsum / static_cast<double>(n);
            if (all_int) return isum;
            return fsum;
        }
        if (func == "min" || func == "max") {
            std::optional<Value> acc;
            for (const auto& v : vals) {
                if (is_null(v)) continue;
                if (!acc) {
                    acc = v;
                    continue;
                }
                int c = compare_values(v, *acc);
                if ((func == "max" && c > 0) || (func == "min" && c < 0)) acc = v;
            }
            if (!acc) return std::monostate{};
            return *acc;
        }
        if (func == "bool_or" || func == "bool_and") {
            bool any = false;
            bool acc = func == "bool_and";
            for (const auto& v : vals) {
                if (is_null(v)) continue;
                any = true;
                bool b = std::get<bool>(v);
                acc = func == "bool_or" ? (acc || b) : (acc && b);
            }
            if (!any) return std::monostate{};
            return acc;
        }
        eval_error("unknown aggregate: " + func);
    }

    // ---- from items

    Table eval_from_item(const FromItem& item, const Env* env) {
        switch (item.kind) {
            case FromItem::Kind::Table: {
                Table t;
                if (const Table* cte = find_cte(item.table)) {
                    t.schema = cte->schema;
                    t.rows = cte->rows;
                } else {
                    t = base_table_for_mode(item.table, item.span);
                }
                for (size_t i = 0; i < item.column_aliases.size() && i < t.schema.columns.size();
                     ++i)
                    t.schema.columns[i].name = item.column_aliases[i];
                return t;
            }
            case FromItem::Kind::Subquery: {
                Table t = eval_query(*item.subquery, env);
                for (size_t i = 0; i < item.column_aliases.size() && i < t.schema.columns.size();
                     ++i)
                    t.schema.columns[i].name = item.column_aliases[i];
                return t;
            }
            case FromItem::Kind::TableFunc: {
                Table t = eval_table_func(item, env);
                for (size_t i = 0; i < item.column_aliases.size() && i < t.schema.columns.size();
                     ++i)
                    t.schema.columns[i].name = item.column_aliases[i];
                return t;
            }
            case FromItem::Kind::Bind: {
                for (const Env* e = env; e; e = e->parent) {
                    if (!e->scope || !e->row) continue;
                    if (const RelSlot* slot = e->scope->find(item.alias)) {
                        Table t;
                        std::vector<Value> row;
                        int rc = slot->schema.index_of(kRhoColumn);
                        if (rc >= 0) {
                            t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
                            row.push_back((*e->row)[slot->offset + static_cast<size_t>(rc)]);
                        }
                        for (const auto& col : item.bind_columns) {
                            if (col == kRhoColumn) continue;
                            int c = slot->schema.index_of(col);
                            if (c < 0) eval_error("BIND column not found: " + col, item.span);
                            t.schema.columns.push_back(
                                slot->schema.columns[static_cast<size_t>(c)]);
                            row.push_back((*e->row)[slot->offset + static_cast<size_t>(c)]);
                        }
                        t.rows.push_back(std::move(row));
                        return t;
                    }
                }
                eval_error("BIND without an outer binding: " + item.alias, item.span);
            }
        }
        eval_error("unreachable");
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

    /// Schema of a from item without evaluating it; used when the working
    /// set is already empty and only slot layout is needed.
    Schema infer_item_schema(const FromItem& item) {
        Schema out;
        auto add = [&](const std::string& name) { out.columns.push_back(Column{name, ColType::Int64}); };
        switch (item.kind) {
            case FromItem::Kind::Table: {
                if (const Table* cte = find_cte(item.table)) {
                    out = cte->schema;
                    break;
                }
                int idx = db.table_index(item.table);
                if (idx < 0) eval_error("unknown table: " + item.table, item.span);
                if (opt.mode != EvalMode::Plain) add(kRhoColumn);
                if (opt.mode == EvalMode::Phase2 && opt.granularity == Granularity::Row) {
                    add("prov");
                } else {
                    for (const auto& c : db.table(static_cast<size_t>(idx)).schema.columns)
                        out.columns.push_back(c);
                }
                break;
            }
            case FromItem::Kind::Subquery: {
                std::vector<std::string> names;
                query_output_names(*item.subquery, names);
                for (const auto& n : names) add(n);
                break;
            }
            case FromItem::Kind::TableFunc: {
                const std::string& name = item.func;
                if (name == "generate_series") {
                    add(item.column_aliases.empty() ? item.alias : item.column_aliases[0]);
                } else if (name == "logread_win") {
                    add("part");
                    add("rank");
                } else if (name == "logread_left") {
                    add("pair");
                    add("right");
                } else {
                    add(kRhoColumn);
                }
                break;
            }
            case FromItem::Kind::Bind: {
                if (opt.mode != EvalMode::Plain) add(kRhoColumn);
                for (const auto& c : item.bind_columns) add(c);
                break;
            }
        }
        for (size_t i = 0; i < item.column_aliases.size() && i < out.columns.size(); ++i)
            out.columns[i].name = item.column_aliases[i];
        return out;
    }

    Table eval_table_func(const FromItem& item, const Env* env) {
        RowCtx ctx;
        ctx.outer = env;
        auto arg = [&](size_t i) { return eval_expr(*item.args[i], ctx); };
        const std::string& name = item.func;

        if (name == "generate_series") {
            Value lo = arg(0), hi = arg(1);
            Table t;
            std::string col = item.column_aliases.empty() ? item.alias : item.column_aliases[0];
            t.schema.columns.push_back(Column{col, ColType::Int64});
            if (!is_null(lo) && !is_null(hi)) {
                int64_t a = require_int(lo, "series bound", item.span);
                int64_t b = require_int(hi, "series bound", item.span);
                for (int64_t i = a; i <= b; ++i) t.rows.push_back({Value(i)});
            }
            return t;
        }
        if (name.rfind("logread_", 0) == 0) {
            if (opt.mode != EvalMode::Phase2 || !opt.log)
                eval_error(name + " is only available in Phase 2", item.span);
            const LogStore& log = *opt.log;
            Table t;
            if (name.rfind("logread_join", 0) == 0) {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                std::vector<int64_t> rhos;
                for (size_t i = 1; i < item.args.size(); ++i)
                    rhos.push_back(require_int(arg(i), "rho", item.span));
                t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
                if (auto rho = log.read_join(site, rhos))
                    t.rows.push_back({Value(static_cast<int64_t>(*rho))});
                return t;
            }
            if (name == "logread_grp") {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                Rho member = static_cast<Rho>(require_int(arg(1), "rho", item.span));
                t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
                if (auto rho = log.read_grp_by_member(site, member))
                    t.rows.push_back({Value(static_cast<int64_t>(*rho))});
                return t;
            }
            if (name == "logread_win") {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                Rho rho = static_cast<Rho>(require_int(arg(1), "rho", item.span));
                t.schema.columns.push_back(Column{"part", ColType::Int64});
                t.schema.columns.push_back(Column{"rank", ColType::Int64});
                auto p = log.read_win(site, rho);
                if (!p)
                    throw SqlError(ErrorKind::ReplayIntegrity,
                                   "missing WIN record at site " + std::to_string(site) +
                                       " for rho " + std::to_string(rho),
                                   item.span);
                t.rows.push_back({Value(static_cast<int64_t>(p->part)), Value(p->rank)});
                return t;
            }
            if (name == "logread_filter") {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                Rho rho = static_cast<Rho>(require_int(arg(1), "rho", item.span));
                t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
                if (auto out = log.read_filter(site, rho))
                    t.rows.push_back({Value(static_cast<int64_t>(*out))});
                return t;
            }
            if (name == "logread_left") {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                Rho left = static_cast<Rho>(require_int(arg(1), "rho", item.span));
                t.schema.columns.push_back(Column{"pair", ColType::Int64});
                t.schema.columns.push_back(Column{"right", ColType::Int64});
                for (const auto& [pair, right] : log.read_left(site, left)) {
                    std::vector<Value> row;
                    row.push_back(static_cast<int64_t>(pair));
                    if (right) row.push_back(static_cast<int64_t>(*right));
                    else row.push_back(std::monostate{});
                    t.rows.push_back(std::move(row));
                }
                return t;
            }
            if (name == "logread_tblf") {
                int site = static_cast<int>(require_int(arg(0), "site", item.span));
                t.schema.columns.push_back(Column{kRhoColumn, ColType::Int64});
                for (Rho rho : log.read_tblf(site))
                    t.rows.push_back({Value(static_cast<int64_t>(rho))});
                return t;
            }
        }
        eval_error("unknown table function: " + name, item.span);
    }

    // ---- windows

    struct Working {
        BlockScope scope;
        std::vector<std::vector<Value>> rows;
    };

    void compute_windows(const SelectBlock& b, const Working& w, const Env* env,
                         WindowValues& out) {
        std::vector<const Expr*> nodes;
        for (const auto& it : b.items)
            walk_exprs(*it.expr, [&](const Expr& x) {
                if (x.is<WindowFuncExpr>()) {
                    nodes.push_back(&x);
                    return false;
                }
                if (x.is<SubqueryExpr>() || x.is<InSubqueryExpr>() || x.is<ExistsExpr>())
                    return false;
                return true;
            });

        const size_t n = w.rows.size();
        // per window definition: partition id per row and ordered positions
        struct WindowLayout {
            std::vector<size_t> partition_of;            // row -> partition id
            std::vector<std::vector<size_t>> partitions; // partition -> rows in order
            std::vector<size_t> position_of;             // row -> position in its partition
        };
        std::map<const void*, WindowLayout> layouts;

        // named windows resolve to the block's WINDOW clause; inline
        // specifications (pre-normalization queries) are keyed per node
        auto layout_for = [&](const Expr* node, const WindowSpec& over) -> const WindowLayout& {
            const WindowDef* def = nullptr;
            WindowDef inline_def;
            const void* key = node;
            if (!over.name.empty() && over.partition.empty() && over.order.empty()) {
                for (const auto& wd : b.windows)
                    if (wd.name == over.name) def = &wd;
                if (!def) eval_error("unknown window: " + over.name);
                key = def;
            } else {
                inline_def.name = "<inline>";
                for (const auto& p : over.partition) inline_def.partition.push_back(clone(*p));
                for (const auto& o : over.order)
                    inline_def.order.push_back(OrderItem{clone(*o.expr), o.desc});
                def = &inline_def;
            }
            auto it = layouts.find(key);
            if (it != layouts.end()) return it->second;
            WindowLayout lay;
            lay.partition_of.resize(n);
            lay.position_of.resize(n);
            std::vector<std::vector<Value>> part_keys;
            std::vector<std::vector<Value>> order_keys(n);
            for (size_t i = 0; i < n; ++i) {
                RowCtx ctx;
                ctx.scope = &w.scope;
                ctx.row = &w.rows[i];
                ctx.outer = env;
                std::vector<Value> pk;
                for (const auto& p : def->partition) pk.push_back(eval_expr(*p, ctx));
                for (const auto& o : def->order) order_keys[i].push_back(eval_expr(*o.expr, ctx));
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
            // order each partition: stable by the ordering criteria, input
            // order (= rho order) breaking ties
            for (auto& rows_in : lay.partitions) {
                std::stable_sort(rows_in.begin(), rows_in.end(), [&](size_t a, size_t c) {
                    for (size_t k = 0; k < def->order.size(); ++k) {
                        const Value& x = order_keys[a][k];
                        const Value& y = order_keys[c][k];
                        bool desc = def->order[k].desc;
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
            return layouts.emplace(key, std::move(lay)).first->second;
        };

        for (const Expr* node : nodes) {
            const auto& wf = node->as<WindowFuncExpr>();
            const WindowLayout& lay = layout_for(node, wf.over);
            // frame bounds
            auto frame_range = [&](size_t pos, size_t psize) -> std::pair<size_t, size_t> {
                const std::optional<Frame>& f = wf.over.frame;
                if (!f) return {0, pos}; // default RANGE UNBOUNDED PRECEDING..CURRENT ROW
                if (f->unit == Frame::Unit::Range) {
                    if (f->lo.kind != FrameBound::Kind::UnboundedPreceding ||
                        f->hi.kind != FrameBound::Kind::CurrentRow)
                        throw SqlError(ErrorKind::Unsupported,
                                       "general RANGE frames are not supported", node->span);
                    return {0, pos};
                }
                auto bound = [&](const FrameBound& fb, bool low) -> int64_t {
                    switch (fb.kind) {
                        case FrameBound::Kind::UnboundedPreceding: return 0;
                        case FrameBound::Kind::Preceding:
                            return static_cast<int64_t>(pos) - fb.offset;
                        case FrameBound::Kind::CurrentRow: return static_cast<int64_t>(pos);
                        case FrameBound::Kind::Following:
                            return static_cast<int64_t>(pos) + fb.offset;
                        case FrameBound::Kind::UnboundedFollowing:
                            return static_cast<int64_t>(psize) - 1;
                    }
                    return low ? 0 : static_cast<int64_t>(psize) - 1;
                };
                int64_t lo = std::max<int64_t>(0, bound(f->lo, true));
                int64_t hi = std::min<int64_t>(static_cast<int64_t>(psize) - 1, bound(f->hi, false));
                if (lo > hi) return {1, 0}; // empty
                return {static_cast<size_t>(lo), static_cast<size_t>(hi)};
            };

            std::vector<Value> vals(n);
            for (size_t i = 0; i < n; ++i) {
                size_t part = lay.partition_of[i];
                const auto& prows = lay.partitions[part];
                size_t pos = lay.position_of[i];
                RowCtx base;
                base.scope = &w.scope;
                base.outer = env;
                if (wf.func == "rank") {
                    vals[i] = static_cast<int64_t>(pos + 1);
                    continue;
                }
                auto [lo, hi] = frame_range(pos, prows.size());
                if (lo > hi) {
                    // empty frame: aggregates over nothing
                    std::vector<const std::vector<Value>*> none;
                    vals[i] = aggregate_over(
                        wf.func == "first_value" || wf.func == "ds_first_value" ? "ds_first"
                                                                                : wf.func,
                        wf.args.empty() ? nullptr : wf.args[0].get(), none, base);
                    continue;
                }
                if (wf.func == "first_value" || wf.func == "ds_first_value") {
                    RowCtx ctx = base;
                    ctx.row = &w.rows[prows[lo]];
                    vals[i] = eval_expr(*wf.args[0], ctx);
                    continue;
                }
                std::vector<const std::vector<Value>*> frame_rows;
                for (size_t k = lo; k <= hi; ++k) frame_rows.push_back(&w.rows[prows[k]]);
                vals[i] = aggregate_over(wf.func, wf.args.empty() ? nullptr : wf.args[0].get(),
                                         frame_rows, base);
            }
            out.values.emplace(node, std::move(vals));
        }
    }

    // ---- queries

    Table eval_query(const Query& q, const Env* env) {
        return std::visit(
            [&](const auto& n) -> Table {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, SelectBlock>) {
                    return eval_block(n, q.span, env);
                } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                    Table out;
                    for (size_t i = 0; i < n.arms.size(); ++i) {
                        Table arm = eval_query(*n.arms[i], env);
                        if (i == 0) {
                            out = std::move(arm);
                        } else {
                            if (arm.schema.columns.size() != out.schema.columns.size())
                                eval_error("UNION ALL arms differ in column count", q.span);
                            for (auto& row : arm.rows) out.rows.push_back(std::move(row));
                        }
                    }
                    return out;
                } else {
                    return eval_with(n, q.span, env);
                }
            },
            q.node);
    }

    Table eval_with(const WithQuery& w, SourceSpan span, const Env* env) {
        cte_frames.emplace_back();
        struct FramePop {
            std::vector<std::map<std::string, Table>>* frames;
            ~FramePop() { frames->pop_back(); }
        } pop{&cte_frames};

        for (const auto& b : w.bindings) {
            Table result;
            if (w.recursive && b.query->is<SetOpQuery>()) {
                const auto& arms = b.query->as<SetOpQuery>().arms;
                result = eval_query(*arms[0], env);
                if (!b.columns.empty())
                    for (size_t i = 0; i < b.columns.size() && i < result.schema.columns.size();
                         ++i)
                        result.schema.columns[i].name = b.columns[i];
                Table working = result;
                int64_t iterations = 0;
                while (!working.rows.empty()) {
                    if (++iterations > opt.recursion_cap)
                        eval_error("recursive CTE exceeded the iteration cap", span);
                    cte_frames.back()[b.name] = std::move(working);
                    Table next;
                    bool first = true;
                    for (size_t i = 1; i < arms.size(); ++i) {
                        Table step = eval_query(*arms[i], env);
                        if (first) {
                            next = std::move(step);
                            first = false;
                        } else {
                            for (auto& row : step.rows) next.rows.push_back(std::move(row));
                        }
                    }
                    if (arms.size() <= 1) break;
                    next.schema = result.schema; // declared column names persist
                    working = std::move(next);
                    for (const auto& row : working.rows) result.rows.push_back(row);
                }
                cte_frames.back().erase(b.name);
            } else {
                result = eval_query(*b.query, env);
                if (!b.columns.empty())
                    for (size_t i = 0; i < b.columns.size() && i < result.schema.columns.size();
                         ++i)
                        result.schema.columns[i].name = b.columns[i];
            }
            cte_frames.back()[b.name] = std::move(result);
        }
        return eval_query(*w.body, env);
    }

    // aliases of this block an expression depends on (deep, bind-aware)
    static std::set<std::string> expr_local_refs(const Expr& e) {
        std::set<std::string> out;
        walk_exprs(e, [&](const Expr& x) {
            if (const auto* ref = std::get_if<ColumnRef>(&x.node)) {
                if (!ref->table.empty()) out.insert(ref->table);
            } else if (const auto* sq = std::get_if<SubqueryExpr>(&x.node)) {
                query_free_aliases(*sq->query, {}, out);
                return false;
            } else if (const auto* in = std::get_if<InSubqueryExpr>(&x.node)) {
                query_free_aliases(*in->query, {}, out);
            } else if (const auto* ex = std::get_if<ExistsExpr>(&x.node)) {
                query_free_aliases(*ex->query, {}, out);
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

    Table eval_block(const SelectBlock& b, SourceSpan span, const Env* env) {
        Working w;
        w.rows.push_back({});

        // predicates filter as early as their references allow, so laterals
        // after a filtered source never see rows the predicate excludes
        std::vector<const Expr*> conjuncts;
        if (b.where) split_conjuncts(*b.where, conjuncts);
        std::vector<bool> applied(conjuncts.size(), false);
        std::set<std::string> bound;
        std::set<std::string> all_aliases;
        for (const auto& step : b.from) all_aliases.insert(step.item.alias);

        std::set<std::string> sibling_aliases;
        for (const auto& step : b.from) {
            bool correlated = false;
            {
                std::set<std::string> frees;
                item_free_aliases(step.item, frees);
                for (const auto& f : frees)
                    if (sibling_aliases.count(f)) correlated = true;
            }
            sibling_aliases.insert(step.item.alias);

            std::optional<Table> fixed;
            if (!correlated) fixed = eval_from_item(step.item, env);

            const size_t offset = w.scope.width;
            Schema item_schema;
            bool have_schema = false;
            std::vector<std::vector<Value>> next;

            if (step.join == FromStep::Join::Cross) {
                for (const auto& left : w.rows) {
                    Table scratch;
                    const Table* right = fixed ? &*fixed : nullptr;
                    if (!right) {
                        Env here;
                        here.parent = env;
                        here.scope = &w.scope;
                        here.row = &left;
                        scratch = eval_from_item(step.item, &here);
                        right = &scratch;
                    }
                    if (!have_schema) {
                        item_schema = right->schema;
                        have_schema = true;
                    }
                    for (const auto& r : right->rows) {
                        std::vector<Value> combined = left;
                        combined.insert(combined.end(), r.begin(), r.end());
                        next.push_back(std::move(combined));
                    }
                }
            } else {
                for (const auto& left : w.rows) {
                    Table scratch;
                    const Table* right = fixed ? &*fixed : nullptr;
                    if (!right) {
                        Env here;
                        here.parent = env;
                        here.scope = &w.scope;
                        here.row = &left;
                        scratch = eval_from_item(step.item, &here);
                        right = &scratch;
                    }
                    if (!have_schema) {
                        item_schema = right->schema;
                        have_schema = true;
                    }
                    BlockScope trial = w.scope;
                    trial.rels.push_back(RelSlot{step.item.alias, right->schema, offset});
                    trial.width = offset + right->schema.columns.size();
                    bool matched = false;
                    for (const auto& r : right->rows) {
                        std::vector<Value> combined = left;
                        combined.insert(combined.end(), r.begin(), r.end());
                        RowCtx ctx;
                        ctx.scope = &trial;
                        ctx.row = &combined;
                        ctx.outer = env;
                        if (value_truthy(eval_expr(*step.on, ctx))) {
                            matched = true;
                            next.push_back(std::move(combined));
                        }
                    }
                    if (!matched) {
                        std::vector<Value> combined = left;
                        for (size_t i = 0; i < right->schema.columns.size(); ++i)
                            combined.push_back(std::monostate{});
                        next.push_back(std::move(combined));
                    }
                }
            }
            if (!have_schema) {
                // the working set is empty: only the slot layout matters
                item_schema = fixed ? fixed->schema : infer_item_schema(step.item);
            }
            w.scope.rels.push_back(RelSlot{step.item.alias, item_schema, offset});
            w.scope.width = offset + item_schema.columns.size();
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
                std::vector<std::vector<Value>> kept;
                for (auto& row : w.rows) {
                    RowCtx ctx;
                    ctx.scope = &w.scope;
                    ctx.row = &row;
                    ctx.outer = env;
                    if (value_truthy(eval_expr(*conjuncts[ci], ctx))) kept.push_back(std::move(row));
                }
                w.rows = std::move(kept);
            }
        }

        // conjuncts whose references never resolve (empty FROM defers here)
        for (size_t ci = 0; ci < conjuncts.size(); ++ci) {
            if (applied[ci]) continue;
            std::vector<std::vector<Value>> kept;
            for (auto& row : w.rows) {
                RowCtx ctx;
                ctx.scope = &w.scope;
                ctx.row = &row;
                ctx.outer = env;
                if (value_truthy(eval_expr(*conjuncts[ci], ctx))) kept.push_back(std::move(row));
            }
            w.rows = std::move(kept);
        }

        bool grouped = b.group_by.has_value() || b.having != nullptr;
        if (!grouped) {
            for (const auto& it : b.items) grouped = grouped || contains_any_aggregate(*it.expr);
            for (const auto& o : b.order_by) grouped = grouped || contains_any_aggregate(*o.expr);
            for (const auto& d : b.distinct_on) grouped = grouped || contains_any_aggregate(*d);
        }
        bool has_windows = false;
        for (const auto& it : b.items) has_windows = has_windows || contains_any_window(*it.expr);
        if (grouped && has_windows)
            throw SqlError(ErrorKind::Unsupported,
                           "grouping and window functions in one block; nest subqueries", span);

        std::vector<OutRow> out_rows;

        if (grouped) {
            static const std::vector<ExprPtr> no_keys;
            const std::vector<ExprPtr>& keys = b.group_by ? *b.group_by : no_keys;
            std::vector<GroupCtx> groups;
            std::vector<size_t> group_order;
            for (size_t i = 0; i < w.rows.size(); ++i) {
                RowCtx ctx;
                ctx.scope = &w.scope;
                ctx.row = &w.rows[i];
                ctx.outer = env;
                std::vector<Value> kv;
                for (const auto& k : keys) kv.push_back(eval_expr(*k, ctx));
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
                    GroupCtx g;
                    g.keys = &keys;
                    g.key_values = kv;
                    g.input = &w.rows;
                    groups.push_back(std::move(g));
                }
                groups[found].members.push_back(i);
            }
            if (keys.empty() && groups.empty()) {
                // GROUP BY () (or bare aggregates) over empty input still
                // produces one group
                GroupCtx g;
                g.keys = &keys;
                g.input = &w.rows;
                groups.push_back(std::move(g));
            }
            for (auto& g : groups) {
                RowCtx ctx;
                ctx.scope = &w.scope;
                ctx.outer = env;
                ctx.group = &g;
                if (!g.members.empty()) ctx.row = &w.rows[g.members[0]];
                if (b.having && !value_truthy(eval_expr(*b.having, ctx))) continue;
                OutRow out;
                for (const auto& it : b.items) out.items.push_back(eval_expr(*it.expr, ctx));
                for (const auto& o : b.order_by) out.order_keys.push_back(eval_expr(*o.expr, ctx));
                for (const auto& d : b.distinct_on)
                    out.distinct_keys.push_back(eval_expr(*d, ctx));
                out_rows.push_back(std::move(out));
            }
        } else {
            WindowValues winvals;
            if (has_windows) compute_windows(b, w, env, winvals);
            for (size_t i = 0; i < w.rows.size(); ++i) {
                RowCtx ctx;
                ctx.scope = &w.scope;
                ctx.row = &w.rows[i];
                ctx.outer = env;
                ctx.windows = has_windows ? &winvals : nullptr;
                ctx.row_index = i;
                OutRow out;
                for (const auto& it : b.items) out.items.push_back(eval_expr(*it.expr, ctx));
                for (const auto& o : b.order_by) out.order_keys.push_back(eval_expr(*o.expr, ctx));
                for (const auto& d : b.distinct_on)
                    out.distinct_keys.push_back(eval_expr(*d, ctx));
                out_rows.push_back(std::move(out));
            }
        }

        if (b.distinct) {
            std::vector<OutRow> kept;
            for (auto& row : out_rows) {
                bool dup = false;
                for (const auto& prev : kept) {
                    bool same = true;
                    for (size_t i = 0; i < row.items.size(); ++i)
                        same = same && values_equal_grouping(row.items[i], prev.items[i]);
                    if (same) dup = true;
                }
                if (!dup) kept.push_back(std::move(row));
            }
            out_rows = std::move(kept);
        }

        if (!b.order_by.empty()) {
            std::vector<size_t> idx(out_rows.size());
            for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t c) {
                for (size_t k = 0; k < b.order_by.size(); ++k) {
                    const Value& x = out_rows[a].order_keys[k];
                    const Value& y = out_rows[c].order_keys[k];
                    bool desc = b.order_by[k].desc;
                    if (is_null(x) && is_null(y)) continue;
                    if (is_null(x)) return desc;
                    if (is_null(y)) return !desc;
                    int cmp = compare_values(x, y);
                    if (cmp != 0) return desc ? cmp > 0 : cmp < 0;
                }
                return false;
            });
            std::vector<OutRow> sorted;
            sorted.reserve(out_rows.size());
            for (size_t i : idx) sorted.push_back(std::move(out_rows[i]));
            out_rows = std::move(sorted);
        }

        if (!b.distinct_on.empty()) {
            std::vector<OutRow> kept;
            std::vector<std::vector<Value>> seen;
            for (auto& row : out_rows) {
                bool dup = false;
                for (const auto& key : seen) {
                    bool same = true;
                    for (size_t i = 0; i < key.size(); ++i)
                        same = same && values_equal_grouping(key[i], row.distinct_keys[i]);
                    if (same) dup = true;
                }
                if (!dup) {
                    seen.push_back(row.distinct_keys);
                    kept.push_back(std::move(row));
                }
            }
            out_rows = std::move(kept);
        }

        size_t begin = 0, end = out_rows.size();
        if (b.offset)
            begin = std::min<size_t>(static_cast<size_t>(std::max<int64_t>(0, *b.offset)), end);
        if (b.limit && b.limit->count)
            end = std::min(end,
                           begin + static_cast<size_t>(std::max<int64_t>(0, *b.limit->count)));

        Table result;
        for (const auto& it : b.items) {
            std::string name = it.alias;
            if (name.empty()) {
                if (const auto* ref = std::get_if<ColumnRef>(&it.expr->node)) name = ref->column;
                else name = "?column?";
            }
            result.schema.columns.push_back(Column{name, ColType::Int64});
        }
        for (size_t i = begin; i < end; ++i) result.rows.push_back(std::move(out_rows[i].items));
        return result;
    }
};

Table strip_rho(Table t) {
    int rc = t.schema.index_of(kRhoColumn);
    if (rc < 0) return t;
    Table out;
    out.has_rho = true;
    for (size_t i = 0; i < t.schema.columns.size(); ++i)
        if (static_cast<int>(i) != rc) out.schema.columns.push_back(t.schema.columns[i]);
    for (auto& row : t.rows) {
        const Value& rv = row[static_cast<size_t>(rc)];
        if (is_null(rv))
            throw SqlError(ErrorKind::Evaluation, "NULL row id in a phase result");
        out.rhos.push_back(static_cast<Rho>(std::get<int64_t>(rv)));
        std::vector<Value> vals;
        for (size_t i = 0; i < row.size(); ++i)
            if (static_cast<int>(i) != rc) vals.push_back(std::move(row[i]));
        out.rows.push_back(std::move(vals));
    }
    return out;
}

} // namespace

struct Engine::Impl : EngineState {
    using EngineState::EngineState;
};

Engine::Engine(const Database& db, EvalOptions opt) : impl_(new Impl(db, opt)) {}
Engine::~Engine() = default;

Table Engine::eval(const Query& q) {
    return impl_->eval_query(q, nullptr);
}

Table eval_plain(const Query& q, const Database& db) {
    EvalOptions opt;
    opt.mode = EvalMode::Plain;
    Engine e(db, opt);
    return e.eval(q);
}

Table eval_phase1(const Query& q1, const Database& db, LogStore& log) {
    EvalOptions opt;
    opt.mode = EvalMode::Phase1;
    opt.log = &log;
    Engine e(db, opt);
    return strip_rho(e.eval(q1));
}

DepTable eval_phase2(const Query& q2, const Database& db, const LogStore& log, Granularity g,
                     DepBackend b, const DepUniverse* universe) {
    EvalOptions opt;
    opt.mode = EvalMode::Phase2;
    opt.granularity = g;
    opt.backend = b;
    opt.log = const_cast<LogStore*>(&log);
    opt.universe = universe;
    Engine e(db, opt);
    Table t = strip_rho(e.eval(q2));
    // cells are dependency sets; NULLs (for instance from left-join padding)
    // canonicalize to the empty set
    for (auto& row : t.rows) {
        for (auto& v : row) {
            if (is_null(v)) {
                if (b == DepBackend::Array) v = DepSet::empty_array();
                else v = DepSet::empty_bitset(universe);
            }
        }
    }
    return t;
}

} // namespace sqlprov
