#include "sqlprov/corpus.hpp"

#include "sqlprov/validate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace sqlprov {

// ---------------------------------------------------------------------------
// terrain

namespace {

/// Smooth value noise on a coarse lattice, bilinear between knots.
double lattice_noise(const std::vector<double>& knots, int knot_w, int x, int y, int step) {
    int kx = x / step, ky = y / step;
    double fx = static_cast<double>(x % step) / step;
    double fy = static_cast<double>(y % step) / step;
    auto at = [&](int i, int j) { return knots[static_cast<size_t>(j) * knot_w + i]; };
    double v00 = at(kx, ky), v10 = at(kx + 1, ky), v01 = at(kx, ky + 1), v11 = at(kx + 1, ky + 1);
    double a = v00 * (1 - fx) + v10 * fx;
    double b = v01 * (1 - fx) + v11 * fx;
    return a * (1 - fy) + b * fy;
}

} // namespace

std::string gen_terrain_csv(int width, int height, uint64_t seed) {
    const int step = 4;
    int knot_w = width / step + 2, knot_h = height / step + 2;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> alt(0.0, 900.0);
    std::vector<double> knots;
    for (int i = 0; i < knot_w * knot_h; ++i) knots.push_back(alt(rng));

    std::ostringstream out;
    out << "x,y,alt\n";
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) {
            double h = lattice_noise(knots, knot_w, x, y, step);
            int quant = static_cast<int>(std::llround(h / 100.0)) * 100;
            quant = std::max(0, std::min(900, quant));
            if (x == 17 && y == 10) quant = 200;
            out << x << ',' << y << ',' << quant << ".0\n";
        }
    }
    return out.str();
}

Database gen_terrain_db(int width, int height, uint64_t seed) {
    std::vector<Column> cols = {
        {"x", ColType::Int64}, {"y", ColType::Int64}, {"alt", ColType::Float64}};
    Table t = table_from_csv(gen_terrain_csv(width, height, seed), cols);
    std::vector<TableDef> defs;
    TableDef map;
    map.name = "map";
    map.columns = cols;
    defs.push_back(std::move(map));
    std::vector<std::vector<std::vector<Value>>> rows;
    rows.push_back(std::move(t.rows));
    return Database::from_tables(std::move(defs), std::move(rows));
}

VisibilityCase visibility_query(int x0, int y0, int width, int height) {
    VisibilityCase out;
    out.prelude = R"SQL(-- Distance between points (x1,y1) and (x2,y2)
CREATE FUNCTION
dist(x1 int, y1 int, x2 int, y2 int) RETURNS float AS
$$
 SELECT sqrt((x2 - x1)^2 + (y2 - y1)^2)
$$ LANGUAGE SQL;

-- Number of steps on the line (x1,y1)-(x2,y2)
CREATE FUNCTION
steps(x1 int, y1 int, x2 int, y2 int) RETURNS int AS
$$
 SELECT greatest(abs(x2 - x1), abs(y2 - y1))
$$ LANGUAGE SQL;

-- Points (x,y) on the line (x1,y1)-(x2,y2)
CREATE FUNCTION
line(x1 int, y1 int, x2 int, y2 int) RETURNS TABLE(x int, y int) AS
$$
 SELECT x1 + round(i * ((x2 - x1) / steps(x1, y1, x2, y2))) AS x,
        y1 + round(i * ((y2 - y1) / steps(x1, y1, x2, y2))) AS y
 FROM   generate_series(0, steps(x1, y1, x2, y2)) AS i
$$ LANGUAGE SQL;
)SQL";
    std::ostringstream q;
    std::string xs = std::to_string(x0), ys = std::to_string(y0);
    std::string xmax = std::to_string(width - 1), ymax = std::to_string(height - 1);
    q << "WITH\n"
      << "-- (1) Rays from the origin to the border\n"
      << "rays(x1, y1, rx, ry) AS (\n"
      << " SELECT m.x AS x1, m.y AS y1, l.x AS rx, l.y AS ry\n"
      << " FROM   map AS m,\n"
      << "        LATERAL line(" << xs << ", " << ys << ", m.x, m.y) AS l(x,y)\n"
      << " WHERE  m.x IN (0," << xmax << ") OR m.y IN (0," << ymax << ")\n"
      << "),\n"
      << "-- (2) Angle between point (x,y) and the origin\n"
      << "angles(x, y, angle) AS (\n"
      << " SELECT m.x, m.y,\n"
      << "        degrees(atan((m.alt - 200) /\n"
      << "               (dist(m.x, m.y, " << xs << ", " << ys << ")))) AS angle\n"
      << " FROM   map AS m\n"
      << " WHERE  ROW(m.x, m.y) <> ROW(" << xs << ", " << ys << ")\n"
      << "),\n"
      << "-- (3) Line of sight along each ray (uses a max scan)\n"
      << "max_scan(x, y, angle, max_angle) AS (\n"
      << " SELECT r.rx AS x, r.ry AS y, a.angle, MAX(a.angle) OVER (\n"
      << "          PARTITION BY r.x1, r.y1\n"
      << "          ORDER BY dist(" << xs << ", " << ys << ", r.rx, r.ry)) AS max_angle\n"
      << " FROM   rays AS r, angles AS a\n"
      << " WHERE  ROW(r.rx, r.ry) = ROW(a.x, a.y)\n"
      << "),\n"
      << "-- (4) Assemble the visibility map from all lines of sight\n"
      << "visible(x, y, \"visible?\") AS (\n"
      << " SELECT s.x, s.y, bool_or(s.angle >= s.max_angle) AS \"visible?\"\n"
      << " FROM   max_scan AS s\n"
      << " GROUP BY s.x, s.y\n"
      << ")\n"
      << "SELECT v.x, v.y, v.\"visible?\"\n"
      << "FROM   visible AS v;\n";
    out.query = q.str();
    return out;
}

LosResult los_oracle(const Database& db, int x0, int y0, int width, int height) {
    const Table* map = db.find("map");
    if (!map) throw SqlError(ErrorKind::Evaluation, "los_oracle needs a map table");
    std::map<std::pair<int64_t, int64_t>, std::pair<double, Rho>> grid;
    for (size_t r = 0; r < map->rows.size(); ++r) {
        int64_t x = std::get<int64_t>(map->rows[r][0]);
        int64_t y = std::get<int64_t>(map->rows[r][1]);
        double alt = std::get<double>(map->rows[r][2]);
        grid[{x, y}] = {alt, map->rhos[r]};
    }

    LosResult out;
    auto angle_of = [&](int64_t px, int64_t py, double alt) {
        // mirrors the inlined query: degrees(atan((alt - 200) / dist))
        double d = std::sqrt(std::pow(static_cast<double>(px - x0), 2.0) +
                             std::pow(static_cast<double>(py - y0), 2.0));
        return std::atan((alt - 200.0) / d) * 180.0 / M_PI;
    };

    for (int bx = 0; bx < width; ++bx) {
        for (int by = 0; by < height; ++by) {
            bool border = bx == 0 || bx == width - 1 || by == 0 || by == height - 1;
            if (!border) continue;
            auto bit = grid.find({bx, by});
            if (bit == grid.end()) continue;
            Rho border_rho = bit->second.second;
            int64_t steps = std::max(std::llabs(static_cast<long long>(bx - x0)),
                                     std::llabs(static_cast<long long>(by - y0)));
            struct Entry {
                int64_t x, y;
                double dist;
                double angle;
                Rho rho;
            };
            std::vector<Entry> entries;
            for (int64_t i = 0; i <= steps; ++i) {
                // the exact stepping of the line() table function
                int64_t px = x0, py = y0;
                if (steps > 0) {
                    px = x0 + std::llround(static_cast<double>(i) *
                                           (static_cast<double>(bx - x0) /
                                            static_cast<double>(steps)));
                    py = y0 + std::llround(static_cast<double>(i) *
                                           (static_cast<double>(by - y0) /
                                            static_cast<double>(steps)));
                }
                if (px == x0 && py == y0) continue; // the origin carries no angle
                auto it = grid.find({px, py});
                if (it == grid.end()) continue;
                Entry e;
                e.x = px;
                e.y = py;
                e.dist = std::sqrt(std::pow(static_cast<double>(px - x0), 2.0) +
                                   std::pow(static_cast<double>(py - y0), 2.0));
                e.angle = angle_of(px, py, it->second.first);
                e.rho = it->second.second;
                entries.push_back(e);
            }
            // ray order: by distance, walk order breaking ties (the engine's
            // deterministic window ordering)
            std::stable_sort(entries.begin(), entries.end(),
                             [](const Entry& a, const Entry& b) { return a.dist < b.dist; });
            double runmax = -1e300;
            std::vector<Rho> prefix;
            for (const auto& e : entries) {
                runmax = std::max(runmax, e.angle);
                prefix.push_back(e.rho);
                bool vis = e.angle >= runmax;
                auto key = std::make_pair(e.x, e.y);
                auto [it2, inserted] = out.visible.emplace(key, vis);
                if (!inserted) it2->second = it2->second || vis;
                auto& sup = out.support[key];
                for (Rho r : prefix) sup.insert(r);
                sup.insert(border_rho);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// random query generation

const std::vector<std::string> kGeneratorProfiles = {
    "join",       "group",     "grand", "window", "case",      "leftjoin", "distinct",
    "orderlimit", "scalarsub", "insub", "exists", "recursive", "tblfun",   "hoist",
    "cte",        "mixed",     "casejoin", "chain", "aggcase",
};

namespace {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(uint64_t seed) : rng(seed) {}

    int pick(int n) { return static_cast<int>(rng() % static_cast<uint64_t>(n)); }
    int small() { return pick(7); }
    bool chance(int pct) { return pick(100) < pct; }

    Database gen_db(int tables) {
        std::vector<TableDef> defs;
        std::vector<std::vector<std::vector<Value>>> data;
        const char* names[] = {"r", "s", "u"};
        for (int t = 0; t < tables; ++t) {
            TableDef def;
            def.name = names[t];
            int ncols = 2 + pick(3);
            const char* cols[] = {"a", "b", "c", "d"};
            for (int c = 0; c < ncols; ++c) {
                ColType ty = ColType::Int64;
                if (c == 3 && chance(40)) ty = ColType::Text;
                def.columns.push_back(Column{cols[c], ty});
            }
            int nrows = 1 + pick(6);
            std::vector<std::vector<Value>> rows;
            for (int r = 0; r < nrows; ++r) {
                std::vector<Value> row;
                for (int c = 0; c < ncols; ++c) {
                    if (def.columns[c].type == ColType::Text) {
                        const char* words[] = {"x", "y", "z"};
                        row.push_back(std::string(words[pick(3)]));
                    } else if (c > 0 && chance(8)) {
                        row.push_back(std::monostate{}); // occasional NULL
                    } else {
                        row.push_back(static_cast<int64_t>(small()));
                    }
                }
                rows.push_back(std::move(row));
            }
            defs.push_back(std::move(def));
            data.push_back(std::move(rows));
        }
        return Database::from_tables(std::move(defs), std::move(data));
    }

    std::string int_col(const TableDef& t, const std::string& alias) {
        std::vector<std::string> ints;
        for (const auto& c : t.columns)
            if (c.type == ColType::Int64) ints.push_back(c.name);
        return alias + "." + ints[static_cast<size_t>(pick(static_cast<int>(ints.size())))];
    }

    std::string scalar_expr(const TableDef& t, const std::string& alias, int depth) {
        if (depth <= 0 || chance(40)) {
            if (chance(25)) return std::to_string(small());
            return int_col(t, alias);
        }
        const char* ops[] = {"+", "-", "*"};
        return "(" + scalar_expr(t, alias, depth - 1) + " " + ops[pick(3)] + " " +
               scalar_expr(t, alias, depth - 1) + ")";
    }

    std::string predicate(const TableDef& t, const std::string& alias, int depth) {
        const char* cmps[] = {"=", "<>", "<", "<=", ">", ">="};
        std::string base = int_col(t, alias) + " " + cmps[pick(6)] + " " + std::to_string(small());
        if (depth > 0 && chance(35)) {
            const char* conn = chance(50) ? " AND " : " OR ";
            return "(" + base + conn + predicate(t, alias, depth - 1) + ")";
        }
        if (chance(12))
            return int_col(t, alias) + " IN (" + std::to_string(small()) + ", " +
                   std::to_string(small()) + ")";
        return base;
    }

    const char* agg() {
        const char* names[] = {"sum", "count", "min", "max", "avg"};
        return names[pick(5)];
    }
};

GeneratedCase build(uint64_t seed, const std::string& profile) {
    Gen g(seed * 0x9e3779b97f4a7c15ULL + 1);
    GeneratedCase out;
    out.profile = profile;

    if (profile == "join") {
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        std::ostringstream q;
        q << "SELECT " << g.int_col(t1, "l") << " AS x, " << g.scalar_expr(t2, "x2", 1)
          << " AS y FROM " << t1.name << " AS l, " << t2.name << " AS x2 WHERE "
          << g.int_col(t1, "l") << " = " << g.int_col(t2, "x2");
        if (g.chance(50)) q << " AND " << g.predicate(t1, "l", 1);
        out.sql = q.str();
    } else if (profile == "group" || profile == "hoist") {
        out.db = g.gen_db(profile == "hoist" ? 2 : 1);
        const auto& t = out.db.defs()[0];
        std::string key = g.int_col(t, "t");
        std::ostringstream q;
        std::string aggarg = g.scalar_expr(t, "t", 1);
        if (profile == "hoist") {
            const auto& t2 = out.db.defs()[1];
            aggarg = "(" + aggarg + " + (SELECT " + std::string(g.agg()) + "(" +
                     g.int_col(t2, "z") + ") FROM " + t2.name + " AS z))";
        }
        q << "SELECT " << key << " AS k, " << g.agg() << "(" << aggarg << ") AS v FROM " << t.name
          << " AS t";
        if (g.chance(40)) q << " WHERE " << g.predicate(t, "t", 1);
        q << " GROUP BY " << key;
        if (g.chance(30)) q << " HAVING count(1) >= 1";
        out.sql = q.str();
        out.keyed = true;
        out.key_columns = {0};
    } else if (profile == "grand") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        q << "SELECT " << g.agg() << "(" << g.scalar_expr(t, "t", 1) << ") AS v FROM " << t.name
          << " AS t";
        if (g.chance(50)) q << " WHERE " << g.predicate(t, "t", 1);
        out.sql = q.str();
    } else if (profile == "window") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        const char* frames[] = {
            "",
            " ROWS BETWEEN 1 PRECEDING AND CURRENT ROW",
            " ROWS BETWEEN UNBOUNDED PRECEDING AND UNBOUNDED FOLLOWING",
            " ROWS BETWEEN 1 PRECEDING AND 1 FOLLOWING",
        };
        int kind = g.pick(3);
        std::string part = g.int_col(t, "t");
        std::string ord = g.int_col(t, "t");
        if (kind == 0) {
            q << "SELECT " << g.int_col(t, "t") << " AS x, " << g.agg() << "(" << g.int_col(t, "t")
              << ") OVER (PARTITION BY " << part << " ORDER BY " << ord << frames[g.pick(4)]
              << ") AS w FROM " << t.name << " AS t";
        } else if (kind == 1) {
            q << "SELECT rank() OVER (PARTITION BY " << part << " ORDER BY " << ord << ") AS rnk, "
              << g.int_col(t, "t") << " AS x FROM " << t.name << " AS t";
        } else {
            q << "SELECT first_value(" << g.int_col(t, "t") << ") OVER (ORDER BY " << ord
              << frames[g.pick(4)] << ") AS fv FROM " << t.name << " AS t";
        }
        out.sql = q.str();
    } else if (profile == "case") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        q << "SELECT CASE WHEN " << g.predicate(t, "t", 0) << " THEN " << g.scalar_expr(t, "t", 1);
        if (g.chance(60)) q << " WHEN " << g.predicate(t, "t", 0) << " THEN " << g.small();
        if (g.chance(70)) q << " ELSE " << g.scalar_expr(t, "t", 0);
        q << " END AS v, " << g.int_col(t, "t") << " AS x FROM " << t.name << " AS t";
        if (g.chance(40)) q << " WHERE " << g.predicate(t, "t", 0);
        out.sql = q.str();
    } else if (profile == "leftjoin") {
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        std::ostringstream q;
        q << "SELECT " << g.int_col(t1, "l") << " AS x, " << g.int_col(t2, "x2") << " AS y FROM "
          << t1.name << " AS l LEFT OUTER JOIN " << t2.name << " AS x2 ON " << g.int_col(t1, "l")
          << " = " << g.int_col(t2, "x2");
        out.sql = q.str();
    } else if (profile == "distinct") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        if (g.chance(50)) {
            q << "SELECT DISTINCT " << g.int_col(t, "t") << " AS x FROM " << t.name << " AS t";
        } else {
            std::string k = g.int_col(t, "t");
            q << "SELECT DISTINCT ON (" << k << ") " << k << " AS x, " << g.int_col(t, "t")
              << " AS y FROM " << t.name << " AS t ORDER BY " << k << ", " << g.int_col(t, "t")
              << " DESC";
        }
        out.sql = q.str();
    } else if (profile == "orderlimit") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        q << "SELECT " << g.scalar_expr(t, "t", 1) << " AS x, " << g.int_col(t, "t")
          << " AS y FROM " << t.name << " AS t";
        if (g.chance(40)) q << " WHERE " << g.predicate(t, "t", 1);
        q << " ORDER BY " << g.int_col(t, "t");
        if (g.chance(50)) q << " DESC";
        if (g.chance(70)) q << " OFFSET " << g.pick(3) << " LIMIT " << (1 + g.pick(4));
        out.sql = q.str();
    } else if (profile == "scalarsub" || profile == "insub" || profile == "exists") {
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        bool correlated = g.chance(60);
        std::string corr =
            correlated ? " WHERE " + g.int_col(t2, "z") + " <= " + g.int_col(t1, "t") : "";
        std::ostringstream q;
        if (profile == "scalarsub") {
            q << "SELECT " << g.int_col(t1, "t") << " AS x, (SELECT " << g.agg() << "("
              << g.int_col(t2, "z") << ") FROM " << t2.name << " AS z" << corr << ") AS m FROM "
              << t1.name << " AS t";
        } else if (profile == "insub") {
            q << "SELECT " << g.int_col(t1, "t") << " AS x FROM " << t1.name << " AS t WHERE "
              << g.int_col(t1, "t") << (g.chance(30) ? " NOT IN (SELECT " : " IN (SELECT ")
              << g.int_col(t2, "z") << " AS c FROM " << t2.name << " AS z" << corr << ")";
        } else {
            q << "SELECT " << g.int_col(t1, "t") << " AS x FROM " << t1.name << " AS t WHERE "
              << (g.chance(30) ? "NOT EXISTS" : "EXISTS") << " (SELECT 1 AS one FROM " << t2.name
              << " AS z" << corr << ")";
        }
        out.sql = q.str();
    } else if (profile == "recursive") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        int cap = 2 + g.pick(4);
        std::ostringstream q;
        q << "WITH RECURSIVE c(n) AS (SELECT 1 UNION ALL SELECT c.n + 1 FROM c WHERE c.n < " << cap
          << ") SELECT c.n AS n, " << g.int_col(t, "t") << " AS x FROM c, " << t.name
          << " AS t WHERE c.n <= " << g.int_col(t, "t");
        out.sql = q.str();
    } else if (profile == "tblfun") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::ostringstream q;
        q << "SELECT " << g.int_col(t, "t") << " AS x, i.i AS i FROM " << t.name
          << " AS t, LATERAL generate_series(1, " << g.int_col(t, "t") << ") AS i";
        if (g.chance(40)) q << " WHERE " << g.predicate(t, "t", 0);
        out.sql = q.str();
    } else if (profile == "cte") {
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        std::ostringstream q;
        q << "WITH base(k, v) AS (SELECT " << g.int_col(t1, "t") << " AS k, "
          << g.scalar_expr(t1, "t", 1) << " AS v FROM " << t1.name << " AS t WHERE "
          << g.predicate(t1, "t", 0) << ") SELECT b.k AS k, " << g.agg()
          << "(b.v) AS s FROM base AS b";
        if (g.chance(50)) q << ", " << t2.name << " AS z WHERE b.k = " << g.int_col(t2, "z");
        q << " GROUP BY b.k";
        out.sql = q.str();
        out.keyed = true;
        out.key_columns = {0};
    } else if (profile == "casejoin") {
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        std::ostringstream q;
        q << "SELECT CASE WHEN " << g.int_col(t1, "l") << " > " << g.int_col(t2, "x2") << " THEN "
          << g.int_col(t1, "l") << " ELSE " << g.int_col(t2, "x2") << " END AS v FROM " << t1.name
          << " AS l, " << t2.name << " AS x2 WHERE " << g.int_col(t1, "l") << " = "
          << g.int_col(t2, "x2");
        out.sql = q.str();
    } else if (profile == "chain") {
        out.db = g.gen_db(3);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        const auto& t3 = out.db.defs()[2];
        std::ostringstream q;
        if (g.chance(50)) {
            q << "SELECT a1." << t1.columns[0].name << " AS q, a3." << t3.columns[0].name
              << " AS e FROM " << t1.name << " AS a1, " << t2.name << " AS a2, " << t3.name
              << " AS a3 WHERE " << g.int_col(t1, "a1") << " = " << g.int_col(t2, "a2")
              << " AND " << g.int_col(t2, "a2") << " = " << g.int_col(t3, "a3");
        } else {
            q << "SELECT a1." << t1.columns[0].name << " AS q, a3." << t3.columns[0].name
              << " AS e FROM " << t1.name << " AS a1, " << t2.name
              << " AS a2 LEFT OUTER JOIN " << t3.name << " AS a3 ON " << g.int_col(t2, "a2")
              << " = " << g.int_col(t3, "a3") << " WHERE " << g.int_col(t1, "a1") << " = "
              << g.int_col(t2, "a2");
        }
        out.sql = q.str();
    } else if (profile == "aggcase") {
        out.db = g.gen_db(1);
        const auto& t = out.db.defs()[0];
        std::string key = g.int_col(t, "t");
        std::ostringstream q;
        q << "SELECT " << key << " AS k, " << g.agg() << "(CASE WHEN " << g.predicate(t, "t", 0)
          << " THEN " << g.int_col(t, "t") << " ELSE " << g.small() << " END) AS v FROM "
          << t.name << " AS t GROUP BY " << key;
        out.sql = q.str();
        out.keyed = true;
        out.key_columns = {0};
    } else { // mixed
        out.db = g.gen_db(2);
        const auto& t1 = out.db.defs()[0];
        const auto& t2 = out.db.defs()[1];
        int kind = g.pick(4);
        std::ostringstream q;
        if (kind == 0) {
            q << "SELECT " << g.int_col(t1, "l") << " AS k, sum(" << g.int_col(t2, "x2")
              << ") AS v FROM " << t1.name << " AS l, " << t2.name << " AS x2 WHERE "
              << g.int_col(t1, "l") << " = " << g.int_col(t2, "x2") << " GROUP BY "
              << g.int_col(t1, "l");
        } else if (kind == 1) {
            q << "SELECT max(" << g.int_col(t1, "t") << ") OVER (ORDER BY " << g.int_col(t1, "t")
              << ") AS m FROM " << t1.name << " AS t WHERE " << g.predicate(t1, "t", 1);
        } else if (kind == 2) {
            q << "SELECT " << g.int_col(t1, "t") << " AS x FROM " << t1.name
              << " AS t UNION ALL SELECT " << g.int_col(t2, "z") << " AS x FROM " << t2.name
              << " AS z";
        } else {
            q << "SELECT CASE WHEN " << g.int_col(t1, "l") << " > " << g.small() << " THEN "
              << g.int_col(t1, "l") << " ELSE 0 END AS v FROM " << t1.name << " AS l, " << t2.name
              << " AS x2 WHERE " << g.int_col(t1, "l") << " = " << g.int_col(t2, "x2")
              << " ORDER BY " << g.int_col(t2, "x2") << " LIMIT " << (1 + g.pick(4));
        }
        out.sql = q.str();
    }

    out.query = parse_query(out.sql);
    Catalog cat = out.db.catalog();
    auto violations = validate(*out.query, cat);
    if (!violations.empty())
        throw SqlError(ErrorKind::Validation, "generated query does not validate: " +
                                                  violations[0].message + " in: " + out.sql);
    return out;
}

} // namespace

GeneratedCase gen_random_query(uint64_t seed, const std::string& profile) {
    return build(seed, profile);
}

GeneratedCase gen_random_query(uint64_t seed) {
    const auto& profile = kGeneratorProfiles[seed % kGeneratorProfiles.size()];
    return build(seed, profile);
}

} // namespace sqlprov
