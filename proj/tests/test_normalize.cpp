#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/engine.hpp"
#include "sqlprov/normalize.hpp"
#include "sqlprov/parser.hpp"
#include "sqlprov/render.hpp"

using namespace sqlprov;

namespace {

Catalog rs_catalog() {
    Catalog cat;
    TableDef r;
    r.name = "r";
    r.columns = {{"a", ColType::Int64}, {"b", ColType::Int64}, {"c", ColType::Text}};
    cat.tables.push_back(std::move(r));
    TableDef s;
    s.name = "s";
    s.columns = {{"c", ColType::Int64}};
    cat.tables.push_back(std::move(s));
    return cat;
}

const char* kMaxScanFragment = R"SQL(
SELECT r.rx AS x, r.ry AS y, a.angle, MAX(a.angle) OVER (
         PARTITION BY r.x1, r.y1
         ORDER BY dist(17, 10, r.rx, r.ry)) AS max_angle
FROM   rays AS r, angles AS a
WHERE  ROW(r.rx, r.ry) = ROW(a.x, a.y)
)SQL";

Catalog rays_catalog() {
    Catalog cat;
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
    const char* dist = R"SQL(
CREATE FUNCTION dist(x1 int, y1 int, x2 int, y2 int) RETURNS float AS
$$ SELECT sqrt((x2 - x1)^2 + (y2 - y1)^2) $$ LANGUAGE SQL;
)SQL";
    cat.udfs = parse_prelude(dist);
    return cat;
}

} // namespace

TEST_CASE("max_scan normalizes to the isolated window form with dist inlined") {
    Catalog cat = rays_catalog();
    auto q = parse_query(kMaxScanFragment);
    auto n = normalize(*q, cat);
    CHECK(check_normal_form(*n).empty());

    // the expected shape: a window layer over a join layer, the UDF body
    // substituted into the ORDER BY criterion
    const char* expected = R"SQL(
SELECT t.r_rx AS x, t.r_ry AS y, t.a_angle AS angle,
       max(t.a_angle) OVER w AS max_angle
FROM (SELECT r.x1 AS r_x1, r.y1 AS r_y1,
             r.rx AS r_rx, r.ry AS r_ry,
             a.angle AS a_angle
      FROM rays AS r, angles AS a
      WHERE r.rx = a.x AND r.ry = a.y) AS t
WINDOW w AS (PARTITION BY t.r_x1, t.r_y1
             ORDER BY sqrt((t.r_rx - 17) ^ 2 + (t.r_ry - 10) ^ 2))
)SQL";
    auto want = parse_query(expected);
    CAPTURE(render_sql(*n));
    CHECK(equal(*n, *want));
}

TEST_CASE("already-normal projection is unchanged") {
    Catalog cat = rs_catalog();
    auto q = parse_query("SELECT r.a AS a FROM r");
    auto n = normalize(*q, cat);
    CHECK(equal(*q, *n));
    CHECK(check_normal_form(*n).empty());
}

TEST_CASE("normalize is idempotent") {
    Catalog cat = rs_catalog();
    const char* queries[] = {
        "SELECT r.a FROM r WHERE r.b > 1 ORDER BY r.a LIMIT 2",
        "SELECT r.a, sum(r.b) AS s FROM r GROUP BY r.a HAVING sum(r.b) > 10",
        "SELECT DISTINCT r.a FROM r",
        "SELECT r.a, s.c FROM r, s WHERE r.b = s.c",
        "SELECT max(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m FROM r",
        "SELECT sum(r.b) AS s FROM r",
        "SELECT r.a FROM r LEFT OUTER JOIN s ON (r.b = s.c)",
        "SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM s WHERE s.c = r.b)",
    };
    for (const char* text : queries) {
        CAPTURE(text);
        auto q = parse_query(text);
        auto n1 = normalize(*q, cat);
        CAPTURE(render_sql(*n1));
        CHECK(check_normal_form(*n1).empty());
        auto n2 = normalize(*n1, cat);
        CAPTURE(render_sql(*n2));
        CHECK(equal(*n1, *n2));
    }
}

TEST_CASE("check_normal_form flags group + window in one block") {
    auto q = parse_query(
        "SELECT sum(r.a) AS s, max(r.b) OVER w AS m FROM r AS r GROUP BY r.a "
        "WINDOW w AS (ORDER BY r.a)");
    auto violations = check_normal_form(*q);
    REQUIRE(!violations.empty());
    bool names_both = false;
    for (const auto& v : violations)
        if (v.message.find("GROUP BY") != std::string::npos &&
            v.message.find("WINDOW") != std::string::npos)
            names_both = true;
    CHECK(names_both);
}

TEST_CASE("normalization preserves semantics on handwritten queries") {
    Database db = Database::load(std::string(SQLPROV_CORPUS_DIR) + "/groupsum");
    Catalog cat = db.catalog();
    const char* queries[] = {
        "SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a",
        "SELECT r.a + 1 AS x FROM r WHERE r.b >= 20 ORDER BY r.b DESC LIMIT 3",
        "SELECT DISTINCT r.a FROM r",
        "SELECT r.a FROM r WHERE r.b IN (10, 40)",
        "SELECT l.a, x.b FROM r AS l, r AS x WHERE l.b = x.b ORDER BY l.a, x.b",
        "SELECT max(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m FROM r",
        "SELECT CASE WHEN r.b > 25 THEN 1 ELSE 0 END AS f FROM r",
        "SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM r AS s WHERE s.b > r.b)",
        "SELECT (SELECT max(s.b) FROM r AS s WHERE s.a = r.a) AS m FROM r",
        "SELECT sum(r.b) AS total FROM r",
        "SELECT r.a, count(*) AS n FROM r GROUP BY r.a HAVING count(*) > 2",
        "SELECT DISTINCT ON (r.a) r.a, r.b FROM r ORDER BY r.a, r.b DESC",
    };
    for (const char* text : queries) {
        CAPTURE(text);
        auto q = parse_query(text);
        auto n = normalize(*q, cat);
        CAPTURE(render_sql(*n));
        CHECK(check_normal_form(*n).empty());
        Table a = eval_plain(*q, db);
        Table b = eval_plain(*n, db);
        REQUIRE(a.rows.size() == b.rows.size());
        // compare as bags of rows
        std::vector<std::string> av, bv;
        for (const auto& row : a.rows) {
            std::string s;
            for (const auto& v : row) s += value_to_text(v) + "|";
            av.push_back(s);
        }
        for (const auto& row : b.rows) {
            std::string s;
            for (const auto& v : row) s += value_to_text(v) + "|";
            bv.push_back(s);
        }
        std::sort(av.begin(), av.end());
        std::sort(bv.begin(), bv.end());
        CHECK(av == bv);
    }
}

TEST_CASE("correlated subqueries gain BIND items") {
    Catalog cat = rs_catalog();
    auto q = parse_query("SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM s WHERE s.c = r.b)");
    auto n = normalize(*q, cat);
    bool found_bind = false;
    walk_exprs(*n, [&](const Expr& e) {
        if (const auto* ex = std::get_if<ExistsExpr>(&e.node)) {
            std::function<void(const Query&)> scan = [&](const Query& sub) {
                if (sub.is<SelectBlock>()) {
                    for (const auto& s : sub.as<SelectBlock>().from) {
                        if (s.item.kind == FromItem::Kind::Bind && s.item.alias == "r")
                            found_bind = true;
                        if (s.item.subquery) scan(*s.item.subquery);
                    }
                }
            };
            scan(*ex->query);
        }
        return true;
    });
    CHECK(found_bind);
}

TEST_CASE("normalized queries round-trip through the renderer") {
    Catalog cat = rs_catalog();
    auto q = parse_query(
        "SELECT r.a, sum(r.b) AS s FROM r WHERE r.c = 'x' GROUP BY r.a ORDER BY r.a LIMIT 5");
    auto n = normalize(*q, cat);
    auto back = parse_query(render_sql(*n));
    CHECK(equal(*n, *back));
}
