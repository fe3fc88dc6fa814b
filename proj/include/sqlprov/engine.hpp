#pragma once

#include "sqlprov/ast.hpp"
#include "sqlprov/logstore.hpp"
#include "sqlprov/value.hpp"

#include <optional>

namespace sqlprov {

struct Schema {
    std::vector<Column> columns;

    int index_of(const std::string& name) const;
};

/// Materialized relation. `rhos` runs parallel to `rows` when has_rho; a
/// DepTable is a Table whose cells hold dependency sets.
struct Table {
    Schema schema;
    std::vector<std::vector<Value>> rows;
    std::vector<Rho> rhos;
    bool has_rho = false;
};

using DepTable = Table;

/// Loaded base tables with globally unique row ids assigned in load order,
/// table-major, starting at 1.
class Database {
public:
    static Database load(const std::string& directory);
    static Database from_tables(std::vector<TableDef> defs,
                                std::vector<std::vector<std::vector<Value>>> rows);

    const std::vector<TableDef>& defs() const { return defs_; }
    const Table* find(const std::string& name) const;
    int table_index(const std::string& name) const;
    const Table& table(size_t i) const { return tables_[i]; }
    Rho base_row_count() const { return base_rows_; }

    Catalog catalog() const;

    /// Table holding this base table's singleton dependency sets.
    Table dep_variant(size_t i, Granularity g, DepBackend b, const DepUniverse* u) const;
    DepUniverse build_universe(Granularity g) const;

    /// "table.<rho>N.column" / "table.<rho>N" for reports and goldens.
    std::string cell_name(uint64_t code, Granularity g) const;
    /// Base row id holding the given cell code (the identity at row level).
    Rho cell_row(uint64_t code, Granularity g) const;

    /// Copy with one base row removed (deletion-stability checks).
    Database without_row(Rho rho) const;

private:
    std::vector<TableDef> defs_;
    std::vector<Table> tables_;
    std::vector<Rho> first_rho_; // per table
    Rho base_rows_ = 0;
};

enum class EvalMode { Plain, Phase1, Phase2 };

struct EvalOptions {
    EvalMode mode = EvalMode::Plain;
    Granularity granularity = Granularity::Cell;
    DepBackend backend = DepBackend::Array;
    LogStore* log = nullptr;
    const DepUniverse* universe = nullptr;
    int64_t recursion_cap = 10000;
};

/// One evaluation per instance; instances are independent.
class Engine {
public:
    Engine(const Database& db, EvalOptions opt);
    ~Engine();
    Table eval(const Query& q);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Reference SQL semantics; bag results, top-level ORDER BY respected.
Table eval_plain(const Query& q, const Database& db);

/// Instrumented run: values plus a leading rho column, log writes as side
/// effects. The _rho output column is split into Table::rhos.
Table eval_phase1(const Query& q1, const Database& db, LogStore& log);

/// Interpreter run over dependency-set variants of the base tables,
/// replaying Phase-1 decisions from the (read-only) log.
DepTable eval_phase2(const Query& q2, const Database& db, const LogStore& log, Granularity g,
                     DepBackend b, const DepUniverse* universe = nullptr);

// ---------------------------------------------------------------------------
// value helpers shared with the oracle

bool value_truthy(const Value& v);                       // three-valued: only TRUE passes
bool values_equal_grouping(const Value& a, const Value& b); // NULL equals NULL
int compare_values(const Value& a, const Value& b);      // non-null, comparable
bool values_equal_sql(const Value& a, const Value& b);   // SQL '=', nulls handled by caller
std::string value_to_text(const Value& v);               // CSV rendering

std::string table_to_csv(const Table& t);
Table table_from_csv(const std::string& text, const std::vector<Column>& columns);

} // namespace sqlprov
