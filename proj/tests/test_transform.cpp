#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/corpus.hpp"
#include "sqlprov/engine.hpp"
#include "sqlprov/normalize.hpp"
#include "sqlprov/oracle.hpp"
#include "sqlprov/parser.hpp"
#include "sqlprov/render.hpp"
#include "sqlprov/transform.hpp"

#include <map>
#include <set>

using namespace sqlprov;

namespace {

Database load_case(const char* name) {
    return Database::load(std::string(SQLPROV_CORPUS_DIR) + "/" + name);
}

QueryPtr normalized(const Database& db, const std::string& sql) {
    Catalog cat = db.catalog();
    auto q = parse_query(sql);
    return normalize(*q, cat);
}

std::pair<std::vector<std::string>, std::vector<std::string>> named(const Database& db,
                                                                    const Value& cell,
                                                                    Granularity g) {
    const auto& d = std::get<DepSet>(cell);
    auto [w, y] = d.canonical();
    std::vector<std::string> ws, ys;
    for (auto c : w) ws.push_back(db.cell_name(c, g));
    for (auto c : y) ys.push_back(db.cell_name(c, g));
    return {ws, ys};
}

std::vector<std::string> cells(std::initializer_list<const char*> xs) {
    std::vector<std::string> out;
    for (const char* c : xs) out.push_back(c);
    return out;
}

} // namespace

TEST_CASE("the join demo produces exactly the three join records") {
    Database db = load_case("logdemo");
    auto q = normalized(db, "SELECT t1.a AS a, t2.c AS c FROM r AS t1, s AS t2 WHERE t1.b = t2.c");
    auto tr = derive(*q, TransformOptions{});
    REQUIRE(tr.sites.size() == 1);
    CHECK(tr.sites[0].kind == SiteKind::Join);
    CHECK(tr.sites[0].arity == 2);

    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    CHECK(t1.rows.size() == 3);
    CHECK(log.record_count() == 3);
    auto p1 = log.read_join(1, {1, 6});
    auto p2 = log.read_join(1, {3, 6});
    auto p3 = log.read_join(1, {5, 6});
    REQUIRE(p1.has_value());
    REQUIRE(p2.has_value());
    REQUIRE(p3.has_value());
    CHECK(*p1 == db.base_row_count() + 1);
    CHECK(*p2 == db.base_row_count() + 2);
    CHECK(*p3 == db.base_row_count() + 3);
    CHECK(!log.read_join(1, {2, 6}).has_value());

    DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
    REQUIRE(t2.rows.size() == 3);
    std::multiset<Rho> r1(t1.rhos.begin(), t1.rhos.end());
    std::multiset<Rho> r2(t2.rhos.begin(), t2.rhos.end());
    CHECK(r1 == r2);
}

TEST_CASE("the grouping demo logs the two groups with their member sets") {
    Database db = load_case("logdemo");
    auto q = normalized(db, "SELECT SUM(t.a) AS agg FROM r AS t GROUP BY t.b");
    auto tr = derive(*q, TransformOptions{});
    REQUIRE(tr.sites.size() == 1);
    CHECK(tr.sites[0].kind == SiteKind::Grp);

    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    CHECK(t1.rows.size() == 2);
    CHECK(log.record_count(LogKind::Grp) == 2);
    auto g135 = log.read_grp_by_member(1, 1);
    REQUIRE(g135.has_value());
    CHECK(log.read_grp_by_member(1, 3) == g135);
    CHECK(log.read_grp_by_member(1, 5) == g135);
    auto g24 = log.read_grp_by_member(1, 2);
    REQUIRE(g24.has_value());
    CHECK(log.read_grp_by_member(1, 4) == g24);
    CHECK(*g135 != *g24);
    size_t members = 0;
    for (const auto& rec : log.all_records())
        if (rec.kind == LogKind::Grp) members += rec.key.size();
    CHECK(members == 5);
}

TEST_CASE("the window demo logs the five window placements") {
    Database db = load_case("logdemo");
    auto q = normalized(db, "SELECT MAX(t.a) OVER w AS agg FROM r AS t "
                            "WINDOW w AS (PARTITION BY t.b ORDER BY t.a)");
    auto tr = derive(*q, TransformOptions{});
    REQUIRE(tr.sites.size() == 1);
    CHECK(tr.sites[0].kind == SiteKind::Win);

    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    CHECK(t1.rows.size() == 5);
    CHECK(log.record_count(LogKind::Win) == 5);
    auto p = log.read_win(1, 3);
    REQUIRE(p.has_value());
    CHECK(p->part == 1);
    CHECK(p->rank == 2);
    auto p2 = log.read_win(1, 5);
    REQUIRE(p2.has_value());
    CHECK(p2->part == 1);
    CHECK(p2->rank == 3);
    auto p3 = log.read_win(1, 4);
    REQUIRE(p3.has_value());
    CHECK(p3->part == 2);
    CHECK(p3->rank == 2);
}

TEST_CASE("group-by cell-level golden") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    auto tr = derive(*q, TransformOptions{});
    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    REQUIRE(t1.rows.size() == 2);
    CHECK(t1.rhos == std::vector<Rho>{6, 7});

    DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
    REQUIRE(t2.rows.size() == 2);
    REQUIRE(t2.rhos == std::vector<Rho>{6, 7});

    auto [a6w, a6y] = named(db, t2.rows[0][0], Granularity::Cell);
    CHECK(a6w == cells({"r.ρ1.a"}));
    CHECK(a6y == cells({"r.ρ1.a", "r.ρ2.a", "r.ρ3.a"}));
    auto [s6w, s6y] = named(db, t2.rows[0][1], Granularity::Cell);
    CHECK(s6w == cells({"r.ρ1.b", "r.ρ2.b", "r.ρ3.b"}));
    CHECK(s6y == cells({"r.ρ1.a", "r.ρ2.a", "r.ρ3.a"}));
    auto [a7w, a7y] = named(db, t2.rows[1][0], Granularity::Cell);
    CHECK(a7w == cells({"r.ρ4.a"}));
    CHECK(a7y == cells({"r.ρ4.a", "r.ρ5.a"}));
    auto [s7w, s7y] = named(db, t2.rows[1][1], Granularity::Cell);
    CHECK(s7w == cells({"r.ρ4.b", "r.ρ5.b"}));
    CHECK(s7y == cells({"r.ρ4.a", "r.ρ5.a"}));
}

TEST_CASE("group-by row-level golden") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    TransformOptions opts;
    opts.granularity = Granularity::Row;
    auto tr = derive(*q, opts);
    LogStore log(db.base_row_count() + 1);
    eval_phase1(*tr.phase1, db, log);
    DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Row, DepBackend::Array);
    REQUIRE(t2.rows.size() == 2);
    REQUIRE(t2.schema.columns.size() == 1);
    REQUIRE(t2.rhos == std::vector<Rho>{6, 7});
    auto flat = [&](const Value& cell) {
        const auto& d = std::get<DepSet>(cell);
        auto [w, y] = d.canonical();
        std::set<uint64_t> all(w.begin(), w.end());
        all.insert(y.begin(), y.end());
        return all;
    };
    CHECK(flat(t2.rows[0][0]) == std::set<uint64_t>{1, 2, 3});
    CHECK(flat(t2.rows[1][0]) == std::set<uint64_t>{4, 5});
}

TEST_CASE("sites: max_scan fragment gets JOIN then WIN; pure projection none") {
    Catalog cat;
    {
        TableDef rays;
        rays.name = "rays";
        rays.columns = {{"x1", ColType::Int64},
                        {"y1", ColType::Int64},
                        {"rx", ColType::Int64},
                        {"ry", ColType::Int64}};
        cat.tables.push_back(std::move(rays));
        TableDef angles;
        angles.name = "angles";
        angles.columns = {{"x", ColType::Int64}, {"y", ColType::Int64}, {"angle", ColType::Float64}};
        cat.tables.push_back(std::move(angles));
    }
    auto q = parse_query(
        "SELECT r.rx AS x, r.ry AS y, a.angle, MAX(a.angle) OVER (PARTITION BY r.x1, r.y1 "
        "ORDER BY r.rx) AS m FROM rays AS r, angles AS a WHERE r.rx = a.x");
    auto n = normalize(*q, cat);
    auto sites = allocate_sites(*n);
    REQUIRE(sites.size() == 2);
    CHECK(sites[0].id == 1);
    CHECK(sites[0].kind == SiteKind::Join);
    CHECK(sites[0].arity == 2);
    CHECK(sites[1].id == 2);
    CHECK(sites[1].kind == SiteKind::Win);

    auto proj = parse_query("SELECT r.rx AS x FROM rays AS r");
    auto nproj = normalize(*proj, cat);
    CHECK(allocate_sites(*nproj).empty());
}

TEST_CASE("phase-1 transparency and site consistency on a mixed query") {
    Database db = load_case("groupsum");
    const char* queries[] = {
        "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a",
        "SELECT r.c FROM r WHERE r.b > 15 ORDER BY r.b LIMIT 2",
        "SELECT DISTINCT r.a FROM r",
        "SELECT l.a, x.b FROM r AS l, r AS x WHERE l.b = x.b",
        "SELECT max(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m FROM r",
        "SELECT CASE WHEN r.b > 25 THEN 1 ELSE 0 END AS f FROM r WHERE r.a = 1",
        "SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM r AS s WHERE s.b > r.b)",
        "SELECT l.a AS la, x.b AS xb FROM r AS l LEFT OUTER JOIN r AS x ON (l.b = x.a)",
    };
    for (const char* text : queries) {
        CAPTURE(text);
        auto q = normalized(db, text);
        auto tr = derive(*q, TransformOptions{});
        CAPTURE(render_sql(*tr.phase1));
        CAPTURE(render_sql(*tr.phase2));

        Table plain = eval_plain(*q, db);
        LogStore log(db.base_row_count() + 1);
        Table t1 = eval_phase1(*tr.phase1, db, log);
        auto bag = [](const Table& t) {
            std::multiset<std::string> out;
            for (const auto& row : t.rows) {
                std::string s;
                for (const auto& v : row) s += value_to_text(v) + "|";
                out.insert(s);
            }
            return out;
        };
        CHECK(bag(plain) == bag(t1));

        std::set<std::tuple<int, int, LogKey>> seen;
        for (const auto& rec : log.all_records())
            CHECK(seen.insert({static_cast<int>(rec.kind), rec.site, rec.key}).second);

        DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
        CHECK(t2.rows.size() == t1.rows.size());
        CHECK(t2.schema.columns.size() == t1.schema.columns.size());
        std::multiset<Rho> r1(t1.rhos.begin(), t1.rhos.end());
        std::multiset<Rho> r2(t2.rhos.begin(), t2.rhos.end());
        CHECK(r1 == r2);

        CHECK(equal(*tr.phase1, *parse_query(render_sql(*tr.phase1))));
        CHECK(equal(*tr.phase2, *parse_query(render_sql(*tr.phase2))));
    }
}

TEST_CASE("oracle agrees with the pipeline on the group-by example in all four settings") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    for (Granularity g : {Granularity::Cell, Granularity::Row}) {
        for (bool why : {true, false}) {
            CAPTURE(static_cast<int>(g));
            CAPTURE(why);
            TransformOptions opts;
            opts.granularity = g;
            opts.why = why;
            auto tr = derive(*q, opts);
            LogStore log(db.base_row_count() + 1);
            eval_phase1(*tr.phase1, db, log);
            DepTable pipe = eval_phase2(*tr.phase2, db, log, g, DepBackend::Array);
            DepTable oracle = annotated_eval(*q, db, opts, DepBackend::Array);
            REQUIRE(pipe.rows.size() == oracle.rows.size());
            REQUIRE(pipe.rhos == oracle.rhos);
            for (size_t r = 0; r < pipe.rows.size(); ++r)
                for (size_t c = 0; c < pipe.rows[r].size(); ++c)
                    CHECK(std::get<DepSet>(pipe.rows[r][c])
                              .equal(std::get<DepSet>(oracle.rows[r][c])));
        }
    }
}

TEST_CASE("hoisting pulls a closed subquery out of set aggregation") {
    Database db = load_case("groupsum");
    auto q = normalized(db,
                        "SELECT r.a, SUM(r.b + (SELECT max(s.b) FROM r AS s)) AS x "
                        "FROM r GROUP BY r.a");
    TransformOptions opts;
    auto plainTr = derive(*q, opts);
    opts.hoist = true;
    auto hoistTr = derive(*q, opts);
    CHECK(!equal(*plainTr.phase2, *hoistTr.phase2));
    LogStore log1(db.base_row_count() + 1);
    eval_phase1(*plainTr.phase1, db, log1);
    DepTable a = eval_phase2(*plainTr.phase2, db, log1, Granularity::Cell, DepBackend::Array);
    LogStore log2(db.base_row_count() + 1);
    eval_phase1(*hoistTr.phase1, db, log2);
    DepTable b = eval_phase2(*hoistTr.phase2, db, log2, Granularity::Cell, DepBackend::Array);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t r = 0; r < a.rows.size(); ++r)
        for (size_t c = 0; c < a.rows[r].size(); ++c)
            CHECK(std::get<DepSet>(a.rows[r][c]).equal(std::get<DepSet>(b.rows[r][c])));
}

TEST_CASE("why toggle: where-parts identical, why-parts empty when off") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    TransformOptions on, off;
    off.why = false;
    auto tr_on = derive(*q, on);
    auto tr_off = derive(*q, off);
    LogStore log1(db.base_row_count() + 1), log2(db.base_row_count() + 1);
    eval_phase1(*tr_on.phase1, db, log1);
    eval_phase1(*tr_off.phase1, db, log2);
    DepTable with = eval_phase2(*tr_on.phase2, db, log1, Granularity::Cell, DepBackend::Array);
    DepTable without = eval_phase2(*tr_off.phase2, db, log2, Granularity::Cell, DepBackend::Array);
    REQUIRE(with.rows.size() == without.rows.size());
    for (size_t r = 0; r < with.rows.size(); ++r) {
        for (size_t c = 0; c < with.rows[r].size(); ++c) {
            auto [w1, y1] = std::get<DepSet>(with.rows[r][c]).canonical();
            auto [w2, y2] = std::get<DepSet>(without.rows[r][c]).canonical();
            CHECK(w1 == w2);
            CHECK(y2.empty());
            (void)y1;
        }
    }
    std::string sql = render_sql(*tr_off.phase2);
    CHECK(sql.find("ds_why") == std::string::npos);
}

TEST_CASE("backend equivalence on the group-by example") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    auto tr = derive(*q, TransformOptions{});
    LogStore log(db.base_row_count() + 1);
    eval_phase1(*tr.phase1, db, log);
    auto u = db.build_universe(Granularity::Cell);
    DepTable arr = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
    DepTable bit = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Bitset, &u);
    REQUIRE(arr.rows.size() == bit.rows.size());
    for (size_t r = 0; r < arr.rows.size(); ++r)
        for (size_t c = 0; c < arr.rows[r].size(); ++c)
            CHECK(std::get<DepSet>(arr.rows[r][c]).equal(std::get<DepSet>(bit.rows[r][c])));
}

TEST_CASE("ORDER BY with LIMIT 2 over five rows logs exactly two filter records") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.c FROM r ORDER BY r.b DESC LIMIT 2");
    auto tr = derive(*q, TransformOptions{});
    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    CHECK(t1.rows.size() == 2);
    CHECK(log.record_count(LogKind::Filter) == 2);
    // the survivors are the two largest b values: rho 5 and 4
    CHECK(log.read_filter(1, 5).has_value());
    CHECK(log.read_filter(1, 4).has_value());
    CHECK(!log.read_filter(1, 1).has_value());
}

TEST_CASE("CASE with two WHENs logs a branch in {0,1,2} per row") {
    Database db = load_case("groupsum");
    auto q = normalized(
        db, "SELECT CASE WHEN r.b < 15 THEN 1 WHEN r.b < 35 THEN 2 ELSE 0 END AS v FROM r");
    auto tr = derive(*q, TransformOptions{});
    REQUIRE(tr.sites.size() == 1);
    CHECK(tr.sites[0].kind == SiteKind::Case);
    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    CHECK(t1.rows.size() == 5);
    CHECK(log.record_count(LogKind::Case) == 5);
    // b values 10,20,30,40,50 take branches 1,2,2,0,0
    CHECK(log.read_case(1, 1) == 1);
    CHECK(log.read_case(1, 2) == 2);
    CHECK(log.read_case(1, 3) == 2);
    CHECK(log.read_case(1, 4) == 0);
    CHECK(log.read_case(1, 5) == 0);
    // phase 2 replays into matching dep tables
    DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
    DepTable oracle = annotated_eval(*q, db, TransformOptions{}, DepBackend::Array);
    REQUIRE(t2.rhos == oracle.rhos);
    for (size_t i = 0; i < t2.rows.size(); ++i)
        CHECK(std::get<DepSet>(t2.rows[i][0]).equal(std::get<DepSet>(oracle.rows[i][0])));
}

TEST_CASE("multi-variable CASE items and left-join chains normalize and agree") {
    Database db = load_case("groupsum");
    const char* queries[] = {
        "SELECT CASE WHEN l.a > x.a THEN l.b ELSE x.b END AS v FROM r AS l, r AS x "
        "WHERE l.b = x.b",
        "SELECT CASE WHEN l.b > x.a THEN 1 ELSE 0 END AS v FROM r AS l "
        "LEFT OUTER JOIN r AS x ON (l.a = x.a)",
        "SELECT l.a AS la, y.b AS yb FROM r AS l, r AS m "
        "LEFT OUTER JOIN r AS y ON (m.b = y.b) WHERE l.a = m.a",
        "SELECT l.a AS v FROM r AS l LEFT OUTER JOIN r AS x ON (l.b = x.a) "
        "LEFT OUTER JOIN r AS y ON (l.a = y.a)",
        "SELECT sum(CASE WHEN r.b > 25 THEN r.b ELSE 0 END) AS s FROM r GROUP BY r.a",
    };
    for (const char* sql : queries) {
        CAPTURE(sql);
        auto n = normalized(db, sql);
        CHECK(check_normal_form(*n).empty());
        for (Granularity g : {Granularity::Cell, Granularity::Row}) {
            TransformOptions opts;
            opts.granularity = g;
            auto tr = derive(*n, opts);
            LogStore log(db.base_row_count() + 1);
            eval_phase1(*tr.phase1, db, log);
            DepTable t2 = eval_phase2(*tr.phase2, db, log, g, DepBackend::Array);
            DepTable o = annotated_eval(*n, db, opts, DepBackend::Array);
            REQUIRE(t2.rhos == o.rhos);
            for (size_t i = 0; i < t2.rows.size(); ++i)
                for (size_t c = 0; c < t2.rows[i].size(); ++c)
                    CHECK(std::get<DepSet>(t2.rows[i][c]).equal(std::get<DepSet>(o.rows[i][c])));
        }
    }
}

namespace {

/// Count logwrite/logread call sites per (site id, function family).
std::multiset<std::pair<int, std::string>> log_sites(const Query& q, const char* prefix) {
    std::multiset<std::pair<int, std::string>> out;
    std::function<void(const Query&)> rec = [&](const Query& query) {
        walk_exprs(query, [&](const Expr& e) {
            if (const auto* call = std::get_if<FuncCallExpr>(&e.node)) {
                if (call->name.rfind(prefix, 0) == 0 && !call->args.empty()) {
                    if (const auto* lit = std::get_if<Literal>(&call->args[0]->node))
                        if (const auto* site = std::get_if<int64_t>(&lit->value))
                            out.emplace(static_cast<int>(*site),
                                        call->name.substr(std::string(prefix).size()));
                }
            }
            return true;
        });
        std::function<void(const Query&)> from_scan = [&](const Query& query2) {
            std::visit(
                [&](const auto& n) {
                    using T = std::decay_t<decltype(n)>;
                    if constexpr (std::is_same_v<T, SelectBlock>) {
                        for (const auto& s : n.from) {
                            if (s.item.kind == FromItem::Kind::TableFunc &&
                                s.item.func.rfind(prefix, 0) == 0 && !s.item.args.empty()) {
                                if (const auto* lit = std::get_if<Literal>(&s.item.args[0]->node))
                                    if (const auto* site = std::get_if<int64_t>(&lit->value))
                                        out.emplace(static_cast<int>(*site),
                                                    s.item.func.substr(std::string(prefix).size()));
                            }
                            if (s.item.subquery) from_scan(*s.item.subquery);
                        }
                    } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                        for (const auto& a : n.arms) from_scan(*a);
                    } else {
                        for (const auto& b : n.bindings) from_scan(*b.query);
                        from_scan(*n.body);
                    }
                },
                query2.node);
            walk_exprs(query2, [&](const Expr& e) {
                const Query* sub = nullptr;
                if (const auto* s1 = std::get_if<SubqueryExpr>(&e.node)) sub = s1->query.get();
                else if (const auto* s2 = std::get_if<InSubqueryExpr>(&e.node))
                    sub = s2->query.get();
                else if (const auto* s3 = std::get_if<ExistsExpr>(&e.node)) sub = s3->query.get();
                if (sub) from_scan(*sub);
                return true;
            });
        };
        from_scan(query);
    };
    rec(q);
    return out;
}

/// Strip every why-marked bit the transformer generates from a why=on
/// interpreter: the y-laterals, references to their columns, aggregations
/// over them, and ds_why(...) guard terms.
void strip_why(Query& q);

bool is_y_alias(const std::string& name) {
    return name.rfind("yj", 0) == 0 || name.rfind("yg", 0) == 0 || name.rfind("yw", 0) == 0 ||
           name.rfind("yf", 0) == 0;
}

bool is_y_part(const Expr& e) {
    if (const auto* call = std::get_if<FuncCallExpr>(&e.node))
        if (call->name == "ds_why") return true;
    if (const auto* ref = std::get_if<ColumnRef>(&e.node))
        if (is_y_alias(ref->table)) return true;
    if (const auto* agg = std::get_if<AggregateExpr>(&e.node))
        if (agg->func == "ds_agg" && agg->arg) return is_y_part(*agg->arg);
    if (const auto* wf = std::get_if<WindowFuncExpr>(&e.node))
        if (wf->func == "ds_agg" && !wf->args.empty()) return is_y_part(*wf->args[0]);
    return false;
}

void strip_why_expr(ExprPtr& e) {
    if (auto* call = std::get_if<FuncCallExpr>(&e->node)) {
        if (call->name == "ds_union") {
            std::vector<ExprPtr> kept;
            for (auto& a : call->args) {
                if (is_y_part(*a)) continue;
                strip_why_expr(a);
                kept.push_back(std::move(a));
            }
            if (kept.size() == 1) {
                e = std::move(kept[0]);
                return;
            }
            call->args = std::move(kept);
            return;
        }
        for (auto& a : call->args) strip_why_expr(a);
        return;
    }
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, BinaryExpr>) {
                strip_why_expr(n.lhs);
                strip_why_expr(n.rhs);
            } else if constexpr (std::is_same_v<T, UnaryExpr>) {
                strip_why_expr(n.operand);
            } else if constexpr (std::is_same_v<T, CaseExpr>) {
                if (n.operand) strip_why_expr(n.operand);
                for (auto& a : n.arms) {
                    strip_why_expr(a.when);
                    strip_why_expr(a.then);
                }
                if (n.else_arm) strip_why_expr(n.else_arm);
            } else if constexpr (std::is_same_v<T, AggregateExpr>) {
                if (n.arg) strip_why_expr(n.arg);
            } else if constexpr (std::is_same_v<T, WindowFuncExpr>) {
                for (auto& a : n.args) strip_why_expr(a);
            } else if constexpr (std::is_same_v<T, SubqueryExpr>) {
                strip_why(*n.query);
            } else if constexpr (std::is_same_v<T, InSubqueryExpr>) {
                strip_why_expr(n.probe);
                strip_why(*n.query);
            } else if constexpr (std::is_same_v<T, ExistsExpr>) {
                strip_why(*n.query);
            }
        },
        e->node);
}

void strip_why(Query& q) {
    std::visit(
        [&](auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                std::vector<FromStep> kept;
                for (auto& s : n.from) {
                    if (s.item.kind == FromItem::Kind::Subquery && is_y_alias(s.item.alias))
                        continue;
                    if (s.item.subquery) strip_why(*s.item.subquery);
                    if (s.on) strip_why_expr(s.on);
                    kept.push_back(std::move(s));
                }
                n.from = std::move(kept);
                for (auto& it : n.items) strip_why_expr(it.expr);
                if (n.where) strip_why_expr(n.where);
                if (n.group_by)
                    for (auto& g : *n.group_by) strip_why_expr(g);
                if (n.having) strip_why_expr(n.having);
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                for (auto& a : n.arms) strip_why(*a);
            } else {
                for (auto& b : n.bindings) strip_why(*b.query);
                strip_why(*n.body);
            }
        },
        q.node);
}

} // namespace

TEST_CASE("site multisets of phase 1 and phase 2 coincide") {
    Database db = load_case("groupsum");
    for (uint64_t seed = 1; seed <= 120; ++seed) {
        GeneratedCase c = gen_random_query(seed);
        Catalog cat = c.db.catalog();
        auto n = normalize(*c.query, cat);
        auto tr = derive(*n, TransformOptions{});
        auto writes = log_sites(*tr.phase1, "logwrite_");
        auto reads = log_sites(*tr.phase2, "logread_");
        // family names differ (grp vs grp_key/grp0) only via the exact-key
        // grand-group lookup; compare site id sets and counts by site
        std::set<int> wsites, rsites;
        for (const auto& [site, fam] : writes) wsites.insert(site);
        for (const auto& [site, fam] : reads) rsites.insert(site);
        CAPTURE(c.sql);
        CHECK(wsites == rsites);
        CHECK(wsites.size() == tr.sites.size());
    }
    (void)db;
}

TEST_CASE("why=off interpreter equals the why=on interpreter minus its Y parts") {
    Database db = load_case("groupsum");
    const char* queries[] = {
        "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a",
        "SELECT l.a, x.b FROM r AS l, r AS x WHERE l.b = x.b",
        "SELECT max(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m FROM r",
        "SELECT DISTINCT r.a FROM r",
        "SELECT r.c FROM r WHERE r.b > 15 ORDER BY r.b LIMIT 2",
        "SELECT l.a AS la, x.b AS xb FROM r AS l LEFT OUTER JOIN r AS x ON (l.b = x.a)",
        "SELECT CASE WHEN r.b > 25 THEN 1 ELSE 0 END AS f FROM r WHERE r.a = 1",
    };
    for (const char* sql : queries) {
        CAPTURE(sql);
        Catalog cat = db.catalog();
        auto n = normalize(*parse_query(sql), cat);
        TransformOptions on, off;
        off.why = false;
        auto with = derive(*n, on);
        auto without = derive(*n, off);
        strip_why(*with.phase2);
        CAPTURE(render_sql(*with.phase2));
        CAPTURE(render_sql(*without.phase2));
        CHECK(equal(*with.phase2, *without.phase2));
    }
}

TEST_CASE("row mode emits only the prov column; cell mode never does") {
    Database db = load_case("groupsum");
    Catalog cat = db.catalog();
    auto n = normalize(*parse_query("SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a"), cat);
    TransformOptions row;
    row.granularity = Granularity::Row;
    auto r = derive(*n, row);
    bool only_prov = true;
    std::function<void(const Query&)> scan = [&](const Query& q) {
        if (const auto* b = std::get_if<SelectBlock>(&q.node)) {
            for (const auto& it : b->items)
                if (it.alias != kRhoColumn && it.alias != "prov" && it.alias != "d")
                    only_prov = false;
            for (const auto& s : b->from)
                if (s.item.subquery) scan(*s.item.subquery);
        }
    };
    scan(*r.phase2);
    CHECK(only_prov);
    auto c = derive(*n, TransformOptions{});
    CHECK(render_sql(*c.phase2).find("AS prov") == std::string::npos);
}

TEST_CASE("cell-level provenance mapped to rows reproduces row-level lineage") {
    for (uint64_t seed = 500; seed <= 620; ++seed) {
        GeneratedCase c = gen_random_query(seed);
        Catalog cat = c.db.catalog();
        auto n = normalize(*c.query, cat);
        CAPTURE(c.sql);
        auto trc = derive(*n, TransformOptions{});
        LogStore log1(c.db.base_row_count() + 1);
        eval_phase1(*trc.phase1, c.db, log1);
        DepTable cell = eval_phase2(*trc.phase2, c.db, log1, Granularity::Cell, DepBackend::Array);
        TransformOptions ropts;
        ropts.granularity = Granularity::Row;
        auto trr = derive(*n, ropts);
        LogStore log2(c.db.base_row_count() + 1);
        eval_phase1(*trr.phase1, c.db, log2);
        DepTable row = eval_phase2(*trr.phase2, c.db, log2, Granularity::Row, DepBackend::Array);
        REQUIRE(cell.rhos == row.rhos);
        for (size_t i = 0; i < cell.rows.size(); ++i) {
            std::set<Rho> mapped;
            for (const auto& v : cell.rows[i]) {
                auto [w, y] = std::get<DepSet>(v).canonical();
                for (auto code : w) mapped.insert(c.db.cell_row(code, Granularity::Cell));
                for (auto code : y) mapped.insert(c.db.cell_row(code, Granularity::Cell));
            }
            auto [w, y] = std::get<DepSet>(row.rows[i][0]).canonical();
            std::set<Rho> prov(w.begin(), w.end());
            prov.insert(y.begin(), y.end());
            CHECK(mapped == prov);
        }
    }
}

TEST_CASE("pipeline and oracle agree on nested and compound shapes") {
    Database db = load_case("groupsum");
    const char* queries[] = {
        "SELECT max(r.a) OVER (ORDER BY r.a) AS m1, "
        "sum(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m2 FROM r",
        "WITH base(k, v) AS (SELECT r.a AS k, r.b AS v FROM r WHERE r.b > 15) "
        "SELECT x.k AS a, y.v AS b FROM base AS x, base AS y WHERE x.k = y.k",
        "SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM r AS s WHERE s.a = r.a AND "
        "EXISTS (SELECT 1 FROM r AS u WHERE u.b = s.b AND u.c <> r.c))",
        "SELECT r.a + (SELECT min(s.a) FROM r AS s) AS k, count(1) AS n "
        "FROM r GROUP BY r.a + (SELECT min(s.a) FROM r AS s)",
        "SELECT r.b FROM r ORDER BY r.b LIMIT 0",
        "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT c.n + 1 FROM c WHERE c.n < 4) "
        "SELECT c.n AS n, sum(r.b) AS s FROM c, r WHERE r.a <= c.n GROUP BY c.n",
        "SELECT max(l.b) OVER (PARTITION BY l.a ORDER BY x.b) AS m FROM r AS l, r AS x "
        "WHERE l.a = x.a AND x.b >= 20",
    };
    for (const char* sql : queries) {
        CAPTURE(sql);
        auto n = normalized(db, sql);
        CHECK(check_normal_form(*n).empty());
        for (Granularity g : {Granularity::Cell, Granularity::Row}) {
            for (bool why : {true, false}) {
                TransformOptions opts;
                opts.granularity = g;
                opts.why = why;
                auto tr = derive(*n, opts);
                LogStore log(db.base_row_count() + 1);
                eval_phase1(*tr.phase1, db, log);
                DepTable t2 = eval_phase2(*tr.phase2, db, log, g, DepBackend::Array);
                DepTable o = annotated_eval(*n, db, opts, DepBackend::Array);
                REQUIRE(t2.rhos == o.rhos);
                for (size_t i = 0; i < t2.rows.size(); ++i)
                    for (size_t c = 0; c < t2.rows[i].size(); ++c)
                        CHECK(std::get<DepSet>(t2.rows[i][c])
                                  .equal(std::get<DepSet>(o.rows[i][c])));
            }
        }
    }
}

TEST_CASE("a literal select interprets to the empty dependency set") {
    Database db = load_case("groupsum");
    Catalog cat = db.catalog();
    auto n = normalize(*parse_query("SELECT 1"), cat);
    auto tr = derive(*n, TransformOptions{});
    CHECK(tr.sites.empty());
    LogStore log(db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, db, log);
    REQUIRE(t1.rows.size() == 1);
    CHECK(log.record_count() == 0);
    DepTable t2 = eval_phase2(*tr.phase2, db, log, Granularity::Cell, DepBackend::Array);
    REQUIRE(t2.rows.size() == 1);
    CHECK(std::get<DepSet>(t2.rows[0][0]).parts_empty());
}

TEST_CASE("hoisting leaves interpreters without closed subqueries unchanged") {
    Database db = load_case("groupsum");
    auto q = normalized(db, "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    TransformOptions opts;
    auto plain = derive(*q, opts);
    auto hoisted = hoist_set_aggregates(*plain.phase2);
    CHECK(equal(*plain.phase2, *hoisted));
}
