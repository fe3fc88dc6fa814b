#pragma once

#include "sqlprov/engine.hpp"
#include "sqlprov/parser.hpp"

#include <map>
#include <set>

namespace sqlprov {

/// map(x, y, alt) with deterministic smooth pseudo-random altitudes,
/// quantized to multiples of 100 in [0, 900]; (17, 10) is forced to 200.0
/// when in range. Rows are x-major.
std::string gen_terrain_csv(int width, int height, uint64_t seed);
Database gen_terrain_db(int width, int height, uint64_t seed);

struct VisibilityCase {
    std::string prelude; // dist / steps / line definitions
    std::string query;
};

/// The visibility query over table map, rays shot from (x0, y0) to the
/// border of a width x height grid.
VisibilityCase visibility_query(int x0, int y0, int width = 21, int height = 21);

struct LosResult {
    // keyed by (x, y)
    std::map<std::pair<int64_t, int64_t>, bool> visible;
    // base map rows supporting each spot's visibility: the points scanned on
    // every ray through the spot plus the rays' border targets
    std::map<std::pair<int64_t, int64_t>, std::set<Rho>> support;
};

/// Direct procedural line-of-sight over the loaded map table.
LosResult los_oracle(const Database& db, int x0, int y0, int width, int height);

struct GeneratedCase {
    Database db;
    QueryPtr query; // subject query, not yet normalized
    std::string sql;
    std::string profile;
    bool keyed = false;            // keyed-query subclass
    std::vector<int> key_columns;  // output positions identifying rows
};

extern const std::vector<std::string> kGeneratorProfiles;

/// Deterministic (query, database) pair exercising the named feature set;
/// profile "mixed" composes several. All generated queries validate.
GeneratedCase gen_random_query(uint64_t seed, const std::string& profile);

/// Seed-rotating convenience: seed picks the profile.
GeneratedCase gen_random_query(uint64_t seed);

} // namespace sqlprov
