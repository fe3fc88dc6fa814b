#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/parser.hpp"
#include "sqlprov/render.hpp"
#include "sqlprov/validate.hpp"

#include <random>

using namespace sqlprov;

namespace {

const char* kVisibilityQuery = R"SQL(
WITH
rays(x1, y1, rx, ry) AS (
 SELECT m.x AS x1, m.y AS y1, l.x AS rx, l.y AS ry
 FROM   map AS m,
        LATERAL line(17, 10, m.x, m.y) AS l(x,y)
 WHERE  m.x IN (0,20) OR m.y IN (0,20)
),
angles(x, y, angle) AS (
 SELECT m.x, m.y,
        degrees(atan((m.alt - 200) /
               (dist(m.x, m.y, 17, 10)))) AS angle
 FROM   map AS m
 WHERE  ROW(m.x, m.y) <> ROW(17, 10)
),
max_scan(x, y, angle, max_angle) AS (
 SELECT r.rx AS x, r.ry AS y, a.angle, MAX(a.angle) OVER (
          PARTITION BY r.x1, r.y1
          ORDER BY dist(17, 10, r.rx, r.ry)) AS max_angle
 FROM   rays AS r, angles AS a
 WHERE  ROW(r.rx, r.ry) = ROW(a.x, a.y)
),
visible(x, y, "visible?") AS (
 SELECT s.x, s.y, bool_or(s.angle >= s.max_angle) AS "visible?"
 FROM   max_scan AS s
 GROUP BY s.x, s.y
)
SELECT v.x, v.y, v."visible?"
FROM   visible AS v;
)SQL";

const char* kVisibilityPrelude = R"SQL(
-- Distance between points (x1,y1) and (x2,y2)
CREATE FUNCTION
dist(x1 int, y1 int, x2 int, y2 int) RETURNS float AS
$$
 SELECT sqrt((x2 - x1)^2 + (y2 - y1)^2)
$$ LANGUAGE SQL;

CREATE FUNCTION
steps(x1 int, y1 int, x2 int, y2 int) RETURNS int AS
$$
 SELECT greatest(abs(x2 - x1), abs(y2 - y1))
$$ LANGUAGE SQL;

CREATE FUNCTION
line(x1 int, y1 int, x2 int, y2 int) RETURNS TABLE(x int, y int) AS
$$
 SELECT x1 + round(i * ((x2 - x1) / steps(x1, y1, x2, y2))) AS x,
        y1 + round(i * ((y2 - y1) / steps(x1, y1, x2, y2))) AS y
 FROM   generate_series(0, steps(x1, y1, x2, y2)) AS i
$$ LANGUAGE SQL;
)SQL";

Catalog map_catalog() {
    Catalog cat;
    TableDef map;
    map.name = "map";
    map.columns = {{"x", ColType::Int64}, {"y", ColType::Int64}, {"alt", ColType::Float64}};
    cat.tables.push_back(std::move(map));
    return cat;
}

// random AST generation for the round-trip property
struct AstGen {
    std::mt19937_64 rng;
    explicit AstGen(uint64_t seed) : rng(seed) {}

    int pick(int n) { return static_cast<int>(rng() % n); }

    ExprPtr gen_expr(int depth) {
        if (depth <= 0 || pick(3) == 0) {
            switch (pick(5)) {
                case 0: return make_literal_int(static_cast<int64_t>(rng() % 100));
                case 1: {
                    auto e = std::make_unique<Expr>();
                    e->node = Literal{1.5 + static_cast<double>(rng() % 10)};
                    return e;
                }
                case 2: {
                    auto e = std::make_unique<Expr>();
                    e->node = Literal{std::string("it''s")};
                    return e;
                }
                case 3: return make_literal_bool(pick(2) == 0);
                default: return make_column_ref("t", "c" + std::to_string(pick(4)));
            }
        }
        switch (pick(8)) {
            case 0: {
                BinOp ops[] = {BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow,
                               BinOp::Eq,  BinOp::Lt,  BinOp::And, BinOp::Or};
                return make_binary(ops[pick(9)], gen_expr(depth - 1), gen_expr(depth - 1));
            }
            case 1: {
                auto e = std::make_unique<Expr>();
                e->node = UnaryExpr{pick(2) ? UnOp::Not : UnOp::Neg, gen_expr(depth - 1)};
                return e;
            }
            case 2: {
                auto e = std::make_unique<Expr>();
                e->node = UnaryExpr{pick(2) ? UnOp::IsNull : UnOp::IsNotNull, gen_expr(depth - 1)};
                return e;
            }
            case 3: {
                CaseExpr c;
                c.arms.push_back(CaseExpr::Arm{gen_expr(depth - 1), gen_expr(depth - 1)});
                if (pick(2)) c.else_arm = gen_expr(depth - 1);
                auto e = std::make_unique<Expr>();
                e->node = std::move(c);
                return e;
            }
            case 4: {
                InListExpr in;
                in.probe = gen_expr(depth - 1);
                in.items.push_back(gen_expr(depth - 1));
                in.items.push_back(gen_expr(depth - 1));
                in.negated = pick(2) == 0;
                auto e = std::make_unique<Expr>();
                e->node = std::move(in);
                return e;
            }
            case 5: return make_func_call("sqrt", [&] {
                std::vector<ExprPtr> args;
                args.push_back(gen_expr(depth - 1));
                return args;
            }());
            case 6: {
                AggregateExpr agg;
                const char* funcs[] = {"sum", "min", "max", "count"};
                agg.func = funcs[pick(4)];
                agg.arg = gen_expr(depth - 1);
                auto e = std::make_unique<Expr>();
                e->node = std::move(agg);
                return e;
            }
            default: {
                RowExpr row;
                row.items.push_back(gen_expr(depth - 1));
                row.items.push_back(gen_expr(depth - 1));
                auto e = std::make_unique<Expr>();
                e->node = std::move(row);
                return e;
            }
        }
    }

    QueryPtr gen_query(int depth) {
        SelectBlock b;
        int nitems = 1 + pick(3);
        for (int i = 0; i < nitems; ++i) {
            SelectItem item;
            item.expr = gen_expr(depth);
            item.alias = "o" + std::to_string(i);
            b.items.push_back(std::move(item));
        }
        if (pick(4) != 0) {
            FromStep step;
            step.item.kind = FromItem::Kind::Table;
            step.item.table = "r";
            step.item.alias = "t";
            b.from.push_back(std::move(step));
            if (depth > 0 && pick(3) == 0) {
                FromStep sub;
                sub.item.kind = FromItem::Kind::Subquery;
                sub.item.subquery = gen_query(depth - 1);
                sub.item.alias = "u";
                b.from.push_back(std::move(sub));
            }
            if (pick(2)) b.where = gen_expr(depth);
            if (pick(3) == 0) {
                b.group_by = std::vector<ExprPtr>{};
                b.group_by->push_back(make_column_ref("t", "c0"));
            }
            if (pick(3) == 0) {
                b.order_by.push_back(OrderItem{make_column_ref("t", "c1"), pick(2) == 0});
                b.offset = pick(5);
                b.limit = LimitClause{pick(2) ? std::optional<int64_t>(pick(9)) : std::nullopt};
            }
        }
        auto q = std::make_unique<Query>();
        q->node = std::move(b);
        return q;
    }
};

} // namespace

TEST_CASE("SELECT 1 parses to a literal select") {
    auto q = parse_query("SELECT 1");
    REQUIRE(q->is<SelectBlock>());
    const auto& b = q->as<SelectBlock>();
    REQUIRE(b.items.size() == 1);
    REQUIRE(b.items[0].expr->is<Literal>());
    CHECK(std::get<int64_t>(b.items[0].expr->as<Literal>().value) == 1);
    CHECK(b.from.empty());
}

TEST_CASE("the full visibility query parses") {
    auto q = parse_query(kVisibilityQuery);
    REQUIRE(q->is<WithQuery>());
    const auto& w = q->as<WithQuery>();
    CHECK(w.bindings.size() == 4);
    CHECK(w.bindings[0].name == "rays");
    CHECK(w.bindings[3].columns[2] == "visible?");
    // LATERAL table function with column aliases
    const auto& rays = w.bindings[0].query->as<SelectBlock>();
    REQUIRE(rays.from.size() == 2);
    CHECK(rays.from[1].lateral);
    CHECK(rays.from[1].item.kind == FromItem::Kind::TableFunc);
    CHECK(rays.from[1].item.func == "line");
    CHECK(rays.from[1].item.column_aliases == std::vector<std::string>{"x", "y"});
}

TEST_CASE("syntax error carries a span inside the input") {
    std::string text = "SELECT * FROM r ORDER BY";
    try {
        parse_query(text);
        FAIL("expected a syntax error");
    } catch (const SqlError& e) {
        CHECK(e.kind == ErrorKind::Syntax);
        CHECK(e.span.begin <= text.size());
    }
}

TEST_CASE("keywords are case-insensitive, identifiers lowercased, quoted preserved") {
    auto q = parse_query("select R.X as \"Weird Name\" from R");
    const auto& b = q->as<SelectBlock>();
    CHECK(b.items[0].alias == "Weird Name");
    const auto& ref = b.items[0].expr->as<ColumnRef>();
    CHECK(ref.table == "r");
    CHECK(ref.column == "x");
    CHECK(b.from[0].item.table == "r");
}

TEST_CASE("exponentiation is right-associative and binds tighter than unary minus") {
    auto q = parse_query("SELECT 2 ^ 3 ^ 2 AS a, -2 ^ 2 AS b");
    const auto& b = q->as<SelectBlock>();
    const auto& pow = b.items[0].expr->as<BinaryExpr>();
    CHECK(pow.op == BinOp::Pow);
    CHECK(pow.rhs->is<BinaryExpr>()); // 3 ^ 2 grouped right
    CHECK(b.items[1].expr->is<UnaryExpr>());
}

TEST_CASE("prelude parses dist, steps and line") {
    auto udfs = parse_prelude(kVisibilityPrelude);
    REQUIRE(udfs.size() == 3);
    CHECK(udfs[0].name == "dist");
    CHECK(udfs[0].scalar_type == ColType::Float64);
    CHECK(udfs[0].params.size() == 4);
    CHECK(udfs[2].name == "line");
    CHECK(udfs[2].returns_table);
    REQUIRE(udfs[2].table_columns.size() == 2);
    CHECK(udfs[2].table_columns[0].name == "x");
}

TEST_CASE("empty prelude and recursive UDF") {
    CHECK(parse_prelude("").empty());
    const char* rec = R"SQL(
CREATE FUNCTION f(x int) RETURNS int AS
$$ SELECT f(x - 1) $$ LANGUAGE SQL;
)SQL";
    CHECK_THROWS_AS(parse_prelude(rec), SqlError);
}

TEST_CASE("render/parse round trip on 100 random ASTs") {
    for (uint64_t seed = 1; seed <= 100; ++seed) {
        AstGen gen(seed);
        auto q = gen.gen_query(2);
        std::string text = render_sql(*q);
        QueryPtr back;
        CAPTURE(text);
        REQUIRE_NOTHROW(back = parse_query(text));
        CHECK(equal(*q, *back));
        // determinism
        CHECK(render_sql(*back) == text);
    }
}

TEST_CASE("validate accepts the visibility query against the map catalog") {
    Catalog cat = map_catalog();
    cat.udfs = parse_prelude(kVisibilityPrelude);
    auto q = parse_query(kVisibilityQuery);
    auto violations = validate(*q, cat);
    for (const auto& v : violations) CAPTURE(v.message);
    CHECK(violations.empty());
}

TEST_CASE("validate flags unknown columns and tables") {
    Catalog cat;
    TableDef r;
    r.name = "r";
    r.columns = {{"x", ColType::Int64}};
    cat.tables.push_back(std::move(r));
    CHECK(validate(*parse_query("SELECT r.x FROM r"), cat).empty());
    CHECK(!validate(*parse_query("SELECT r.z FROM r"), cat).empty());
    CHECK(!validate(*parse_query("SELECT s.x FROM s"), cat).empty());
}
