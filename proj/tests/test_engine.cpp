#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/engine.hpp"
#include "sqlprov/parser.hpp"

using namespace sqlprov;

namespace {

Database groupsum_db() { return Database::load(std::string(SQLPROV_CORPUS_DIR) + "/groupsum"); }

int64_t as_int(const Value& v) { return std::get<int64_t>(v); }

Database tiny() {
    std::vector<TableDef> defs;
    TableDef r;
    r.name = "r";
    r.columns = {{"a", ColType::Int64}, {"b", ColType::Int64}};
    defs.push_back(r);
    std::vector<std::vector<std::vector<Value>>> rows;
    rows.push_back({{Value(int64_t(1)), Value(int64_t(10))},
                    {Value(int64_t(2)), Value(int64_t(20))},
                    {Value(int64_t(2)), Value(int64_t(30))}});
    return Database::from_tables(std::move(defs), std::move(rows));
}

} // namespace

TEST_CASE("database load assigns table-major row ids starting at 1") {
    Database db = groupsum_db();
    const Table* r = db.find("r");
    REQUIRE(r != nullptr);
    REQUIRE(r->rows.size() == 5);
    CHECK(r->rhos == std::vector<Rho>{1, 2, 3, 4, 5});
    CHECK(db.base_row_count() == 5);
    CHECK(as_int(r->rows[0][1]) == 10);
    CHECK(std::get<std::string>(r->rows[4][2]) == "e");
}

TEST_CASE("dep variants hold singleton sets per cell / per row") {
    Database db = groupsum_db();
    auto u = db.build_universe(Granularity::Cell);
    Table dep = db.dep_variant(0, Granularity::Cell, DepBackend::Array, &u);
    REQUIRE(dep.rows.size() == 5);
    auto [w, y] = std::get<DepSet>(dep.rows[0][0]).canonical();
    REQUIRE(w.size() == 1);
    CHECK(db.cell_name(w[0], Granularity::Cell) == "r.ρ1.a");
    CHECK(y.empty());
    Table row = db.dep_variant(0, Granularity::Row, DepBackend::Array, nullptr);
    REQUIRE(row.schema.columns.size() == 1);
    auto [w2, y2] = std::get<DepSet>(row.rows[2][0]).canonical();
    CHECK(w2 == std::vector<uint64_t>{3});
    (void)y2;
}

TEST_CASE("SELECT 1") {
    Database db = tiny();
    Table t = eval_plain(*parse_query("SELECT 1"), db);
    REQUIRE(t.rows.size() == 1);
    CHECK(as_int(t.rows[0][0]) == 1);
}

TEST_CASE("the group-by example evaluates to (1,60),(2,90)") {
    Database db = groupsum_db();
    auto q = parse_query("SELECT r.a, SUM(r.b) AS sum FROM r GROUP BY r.a");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 2);
    CHECK(as_int(t.rows[0][0]) == 1);
    CHECK(as_int(t.rows[0][1]) == 60);
    CHECK(as_int(t.rows[1][0]) == 2);
    CHECK(as_int(t.rows[1][1]) == 90);
}

TEST_CASE("where, order, limit, offset") {
    Database db = tiny();
    Table t = eval_plain(*parse_query("SELECT r.b FROM r WHERE r.a = 2 ORDER BY r.b DESC"), db);
    REQUIRE(t.rows.size() == 2);
    CHECK(as_int(t.rows[0][0]) == 30);
    Table l = eval_plain(*parse_query("SELECT r.b FROM r ORDER BY r.b DESC OFFSET 1 LIMIT 1"), db);
    REQUIRE(l.rows.size() == 1);
    CHECK(as_int(l.rows[0][0]) == 20);
}

TEST_CASE("three-valued logic and null handling") {
    Database db = tiny();
    Table t = eval_plain(*parse_query("SELECT NULL = 1, NULL AND FALSE, NULL OR TRUE"), db);
    CHECK(is_null(t.rows[0][0]));
    CHECK(std::get<bool>(t.rows[0][1]) == false);
    CHECK(std::get<bool>(t.rows[0][2]) == true);
    Table f = eval_plain(*parse_query("SELECT r.a FROM r WHERE NULL"), db);
    CHECK(f.rows.empty());
}

TEST_CASE("division is float, division by zero raises") {
    Database db = tiny();
    Table t = eval_plain(*parse_query("SELECT 7 / 2"), db);
    CHECK(std::get<double>(t.rows[0][0]) == doctest::Approx(3.5));
    CHECK_THROWS_AS(eval_plain(*parse_query("SELECT 1 / 0"), db), SqlError);
}

TEST_CASE("aggregates over empty input follow SQL") {
    Database db = tiny();
    Table t =
        eval_plain(*parse_query("SELECT count(r.a) AS c, sum(r.a) AS s FROM r WHERE r.a > 99"), db);
    REQUIRE(t.rows.size() == 1);
    CHECK(as_int(t.rows[0][0]) == 0);
    CHECK(is_null(t.rows[0][1]));
}

TEST_CASE("window functions: running max with deterministic tiebreak") {
    Database db = tiny();
    auto q =
        parse_query("SELECT r.a, max(r.b) OVER (PARTITION BY r.a ORDER BY r.b) AS m FROM r AS r");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 3);
    CHECK(as_int(t.rows[0][1]) == 10);
    CHECK(as_int(t.rows[1][1]) == 20);
    CHECK(as_int(t.rows[2][1]) == 30);
}

TEST_CASE("rows frames") {
    Database db = tiny();
    auto q = parse_query(
        "SELECT sum(r.b) OVER (ORDER BY r.b ROWS BETWEEN 1 PRECEDING AND CURRENT ROW) AS s "
        "FROM r AS r");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 3);
    CHECK(as_int(t.rows[0][0]) == 10);
    CHECK(as_int(t.rows[1][0]) == 30);
    CHECK(as_int(t.rows[2][0]) == 50);
}

TEST_CASE("left outer join pads with nulls") {
    Database db = groupsum_db();
    auto q = parse_query(
        "SELECT l.a AS la, r2.b AS rb FROM r AS l LEFT OUTER JOIN r AS r2 ON (l.b = r2.a) "
        "ORDER BY l.b");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 5);
    for (const auto& row : t.rows) CHECK(is_null(row[1]));
}

TEST_CASE("recursive CTE generates a series and respects the cap") {
    Database db = tiny();
    auto q = parse_query(
        "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT c.n + 1 FROM c WHERE c.n < 5) "
        "SELECT c.n FROM c ORDER BY c.n");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 5);
    CHECK(as_int(t.rows[4][0]) == 5);

    auto infinite = parse_query(
        "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT c.n + 1 FROM c WHERE c.n > 0) "
        "SELECT c.n FROM c");
    CHECK_THROWS_AS(eval_plain(*infinite, db), SqlError);
}

TEST_CASE("correlated subqueries and EXISTS") {
    Database db = tiny();
    auto q = parse_query(
        "SELECT r.a FROM r WHERE EXISTS (SELECT 1 FROM r AS s WHERE s.a = r.a AND s.b > 20)");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 2);
    auto scalar = parse_query("SELECT (SELECT max(s.b) FROM r AS s WHERE s.a = r.a) AS m FROM r");
    Table u = eval_plain(*scalar, db);
    REQUIRE(u.rows.size() == 3);
    CHECK(as_int(u.rows[0][0]) == 10);
    CHECK(as_int(u.rows[2][0]) == 30);
}

TEST_CASE("generate_series and lateral") {
    Database db = tiny();
    auto q = parse_query(
        "SELECT r.a, g.i FROM r, LATERAL generate_series(1, r.a) AS g(i) "
        "WHERE r.b = 10 OR r.b = 20");
    Table t = eval_plain(*q, db);
    REQUIRE(t.rows.size() == 3);
}

TEST_CASE("distinct and distinct on") {
    Database db = tiny();
    Table t = eval_plain(*parse_query("SELECT DISTINCT r.a FROM r ORDER BY r.a"), db);
    REQUIRE(t.rows.size() == 2);
    Table u = eval_plain(
        *parse_query("SELECT DISTINCT ON (r.a) r.a, r.b FROM r ORDER BY r.a, r.b DESC"), db);
    REQUIRE(u.rows.size() == 2);
    CHECK(as_int(u.rows[1][1]) == 30);
}

TEST_CASE("group by null keys groups nulls together") {
    std::vector<TableDef> defs;
    TableDef r;
    r.name = "r";
    r.columns = {{"a", ColType::Int64}};
    defs.push_back(r);
    std::vector<std::vector<std::vector<Value>>> rows;
    rows.push_back({{Value(std::monostate{})}, {Value(int64_t(1))}, {Value(std::monostate{})}});
    Database db = Database::from_tables(std::move(defs), std::move(rows));
    Table t = eval_plain(*parse_query("SELECT count(1) AS c FROM r GROUP BY r.a"), db);
    REQUIRE(t.rows.size() == 2);
}

TEST_CASE("csv round trip with quoting and nulls") {
    Table t;
    t.schema.columns = {{"x", ColType::Int64}, {"s", ColType::Text}};
    t.rows.push_back({Value(int64_t(1)), Value(std::string("a,\"b\"\nc"))});
    t.rows.push_back({Value(std::monostate{}), Value(std::string(""))});
    std::string csv = table_to_csv(t);
    Table back = table_from_csv(csv, t.schema.columns);
    REQUIRE(back.rows.size() == 2);
    CHECK(std::get<std::string>(back.rows[0][1]) == "a,\"b\"\nc");
    CHECK(is_null(back.rows[1][0]));
    CHECK(std::get<std::string>(back.rows[1][1]).empty());
}

TEST_CASE("an empty table loads with its schema intact") {
    std::vector<TableDef> defs;
    TableDef r;
    r.name = "r";
    r.columns = {{"a", ColType::Int64}, {"b", ColType::Text}};
    defs.push_back(r);
    std::vector<std::vector<std::vector<Value>>> rows;
    rows.push_back({});
    Database db = Database::from_tables(std::move(defs), std::move(rows));
    const Table* t = db.find("r");
    REQUIRE(t != nullptr);
    CHECK(t->rows.empty());
    CHECK(t->schema.columns.size() == 2);
    Table dep = db.dep_variant(0, Granularity::Cell, DepBackend::Array, nullptr);
    CHECK(dep.rows.empty());
    CHECK(dep.schema.columns.size() == 2);
    // queries over it behave
    Table out = eval_plain(*parse_query("SELECT count(r.a) AS c FROM r"), db);
    REQUIRE(out.rows.size() == 1);
    CHECK(std::get<int64_t>(out.rows[0][0]) == 0);
}

TEST_CASE("the rho column name is reserved") {
    std::vector<TableDef> defs;
    TableDef r;
    r.name = "r";
    r.columns = {{"_rho", ColType::Int64}};
    defs.push_back(r);
    std::vector<std::vector<std::vector<Value>>> rows;
    rows.push_back({});
    CHECK_THROWS_AS(Database::from_tables(std::move(defs), std::move(rows)), SqlError);
}
