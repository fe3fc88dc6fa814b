// sqlprov: normalize, transform, run, and check SQL provenance derivations.
#include "sqlprov/corpus.hpp"
#include "sqlprov/engine.hpp"
#include "sqlprov/normalize.hpp"
#include "sqlprov/oracle.hpp"
#include "sqlprov/parser.hpp"
#include "sqlprov/render.hpp"
#include "sqlprov/transform.hpp"
#include "sqlprov/validate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace sqlprov;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SqlError(ErrorKind::Io, "cannot read " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& content) {
    // atomic-ish: write a sibling then rename
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw SqlError(ErrorKind::Io, "cannot write " + path);
        out << content;
    }
    fs::rename(tmp, target);
}

struct Inputs {
    std::string db_dir;
    std::string query_file;
    std::string prelude_file;
    std::string granularity = "cell";
    bool why = true;
    bool hoist = false;
    std::string backend = "array";
    std::string emit = "sql";
    std::string dump_logs;
    std::string out_dir;
    uint64_t seed = 1;

    TransformOptions transform_options() const {
        TransformOptions opts;
        opts.granularity = granularity == "row" ? Granularity::Row : Granularity::Cell;
        opts.why = why;
        opts.hoist = hoist;
        return opts;
    }
    DepBackend dep_backend() const {
        return backend == "bitset" ? DepBackend::Bitset : DepBackend::Array;
    }
};

struct Prepared {
    Database db;
    Catalog cat;
    QueryPtr normalized;
};

Prepared prepare(const Inputs& in) {
    Prepared p{Database::load(in.db_dir), {}, nullptr};
    p.cat = p.db.catalog();
    if (!in.prelude_file.empty()) p.cat.udfs = parse_prelude(slurp(in.prelude_file));
    auto q = parse_query(slurp(in.query_file));
    auto violations = validate(*q, p.cat);
    if (!violations.empty())
        throw SqlError(ErrorKind::Validation, violations[0].message, violations[0].span);
    p.normalized = normalize(*q, p.cat);
    return p;
}

nlohmann::ordered_json depset_json(const Database& db, const DepSet& d, Granularity g) {
    auto [w, y] = d.canonical();
    nlohmann::ordered_json out;
    out["where"] = nlohmann::ordered_json::array();
    out["why"] = nlohmann::ordered_json::array();
    for (auto code : w) out["where"].push_back(db.cell_name(code, g));
    for (auto code : y) out["why"].push_back(db.cell_name(code, g));
    return out;
}

std::string provenance_json(const Database& db, const Table& values, const DepTable& deps,
                            Granularity g) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (size_t i = 0; i < deps.rows.size(); ++i) {
        nlohmann::ordered_json row;
        row["_rho"] = deps.rhos[i];
        if (i < values.rows.size()) {
            nlohmann::ordered_json vals;
            for (size_t c = 0; c < values.rows[i].size(); ++c)
                vals[values.schema.columns[c].name] = value_to_text(values.rows[i][c]);
            row["values"] = std::move(vals);
        }
        nlohmann::ordered_json cells;
        for (size_t c = 0; c < deps.rows[i].size(); ++c)
            cells[deps.schema.columns[c].name] =
                depset_json(db, std::get<DepSet>(deps.rows[i][c]), g);
        row["provenance"] = std::move(cells);
        rows.push_back(std::move(row));
    }
    return rows.dump(2);
}

// compact structural dump for --emit ast
void dump_ast(const Query& q, std::ostream& out, int depth);

void dump_expr(const Expr& e, std::ostream& out, int depth) {
    std::string pad(static_cast<size_t>(depth) * 2, ' ');
    out << pad << render_sql(e) << "\n";
}

void dump_ast(const Query& q, std::ostream& out, int depth) {
    std::string pad(static_cast<size_t>(depth) * 2, ' ');
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SelectBlock>) {
                out << pad << "select-block\n";
                for (const auto& it : n.items) {
                    out << pad << "  item " << it.alias << ":\n";
                    dump_expr(*it.expr, out, depth + 2);
                }
                for (const auto& s : n.from) {
                    out << pad << "  from"
                        << (s.join == FromStep::Join::Left ? " left" : "")
                        << (s.lateral ? " lateral" : "") << " " << s.item.alias << ":\n";
                    if (s.item.kind == FromItem::Kind::Table)
                        out << pad << "    table " << s.item.table << "\n";
                    else if (s.item.kind == FromItem::Kind::TableFunc)
                        out << pad << "    function " << s.item.func << "\n";
                    else if (s.item.kind == FromItem::Kind::Bind)
                        out << pad << "    bind\n";
                    else dump_ast(*s.item.subquery, out, depth + 2);
                    if (s.on) {
                        out << pad << "    on:\n";
                        dump_expr(*s.on, out, depth + 3);
                    }
                }
                if (n.where) {
                    out << pad << "  where:\n";
                    dump_expr(*n.where, out, depth + 2);
                }
                if (n.group_by) {
                    out << pad << "  group-by (" << n.group_by->size() << " keys)\n";
                    for (const auto& g : *n.group_by) dump_expr(*g, out, depth + 2);
                }
                if (n.having) {
                    out << pad << "  having:\n";
                    dump_expr(*n.having, out, depth + 2);
                }
                for (const auto& w : n.windows) out << pad << "  window " << w.name << "\n";
                if (!n.order_by.empty()) out << pad << "  order-by\n";
                if (n.offset) out << pad << "  offset " << *n.offset << "\n";
                if (n.limit)
                    out << pad << "  limit "
                        << (n.limit->count ? std::to_string(*n.limit->count) : "ALL") << "\n";
            } else if constexpr (std::is_same_v<T, SetOpQuery>) {
                out << pad << "union-all\n";
                for (const auto& a : n.arms) dump_ast(*a, out, depth + 1);
            } else {
                out << pad << "with" << (n.recursive ? " recursive" : "") << "\n";
                for (const auto& b : n.bindings) {
                    out << pad << "  binding " << b.name << ":\n";
                    dump_ast(*b.query, out, depth + 2);
                }
                out << pad << "  body:\n";
                dump_ast(*n.body, out, depth + 2);
            }
        },
        q.node);
}

void write_database(const Database& db, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json schema;
    for (const auto& def : db.defs()) {
        nlohmann::ordered_json cols = nlohmann::ordered_json::array();
        for (const auto& c : def.columns)
            cols.push_back({{"name", c.name}, {"type", col_type_name(c.type)}});
        schema[def.name] = {{"columns", cols}};
    }
    spit(dir + "/schema.json", schema.dump(2) + "\n");
    for (size_t i = 0; i < db.defs().size(); ++i) {
        Table plain;
        plain.schema.columns = db.defs()[i].columns;
        plain.rows = db.table(i).rows;
        spit(dir + "/" + db.defs()[i].name + ".csv", table_to_csv(plain));
    }
}

int cmd_normalize(const Inputs& in) {
    Prepared p = prepare(in);
    std::cout << render_sql(*p.normalized) << "\n";
    return 0;
}

int cmd_transform(const Inputs& in) {
    Prepared p = prepare(in);
    auto tr = derive(*p.normalized, in.transform_options());
    if (in.out_dir.empty()) {
        std::cout << "-- phase 1\n" << render_sql(*tr.phase1) << "\n\n-- phase 2\n"
                  << render_sql(*tr.phase2) << "\n";
        return 0;
    }
    fs::create_directories(in.out_dir);
    if (in.emit == "ast") {
        std::ostringstream a1, a2;
        dump_ast(*tr.phase1, a1, 0);
        dump_ast(*tr.phase2, a2, 0);
        spit(in.out_dir + "/phase1.ast", a1.str());
        spit(in.out_dir + "/phase2.ast", a2.str());
    } else {
        spit(in.out_dir + "/phase1.sql", render_sql(*tr.phase1) + "\n");
        spit(in.out_dir + "/phase2.sql", render_sql(*tr.phase2) + "\n");
    }
    spit(in.out_dir + "/sites.json", sites_to_json(tr.sites) + "\n");
    std::cout << "wrote " << in.out_dir << "/phase1." << (in.emit == "ast" ? "ast" : "sql")
              << ", phase2." << (in.emit == "ast" ? "ast" : "sql") << ", sites.json\n";
    return 0;
}

int cmd_run(const Inputs& in) {
    Prepared p = prepare(in);
    TransformOptions opts = in.transform_options();
    auto tr = derive(*p.normalized, opts);
    LogStore log(p.db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, p.db, log);
    DepTable t2 =
        eval_phase2(*tr.phase2, p.db, log, opts.granularity, in.dep_backend());
    if (!in.dump_logs.empty()) spit(in.dump_logs, log.to_json() + "\n");
    if (!in.out_dir.empty()) {
        fs::create_directories(in.out_dir);
        spit(in.out_dir + "/result.csv", table_to_csv(t1));
        spit(in.out_dir + "/provenance.json",
             provenance_json(p.db, t1, t2, opts.granularity) + "\n");
        std::cout << "wrote " << in.out_dir << "/result.csv, provenance.json\n";
    } else {
        std::cout << table_to_csv(t1) << "\n"
                  << provenance_json(p.db, t1, t2, opts.granularity) << "\n";
    }
    std::cout << "rows: " << t1.rows.size() << ", log records: " << log.record_count() << "\n";
    return 0;
}

int cmd_oracle(const Inputs& in) {
    Prepared p = prepare(in);
    TransformOptions opts = in.transform_options();
    DepTable dep = annotated_eval(*p.normalized, p.db, opts, in.dep_backend());
    // rows are identified by their ids; plain values would not line up with
    // the oracle's row order, so the report carries provenance only
    Table values;
    std::string json = provenance_json(p.db, values, dep, opts.granularity);
    if (!in.out_dir.empty()) {
        fs::create_directories(in.out_dir);
        spit(in.out_dir + "/oracle.json", json + "\n");
        std::cout << "wrote " << in.out_dir << "/oracle.json\n";
    } else {
        std::cout << json << "\n";
    }
    return 0;
}

int cmd_check(const Inputs& in) {
    Prepared p = prepare(in);
    TransformOptions opts = in.transform_options();
    auto tr = derive(*p.normalized, opts);
    LogStore log(p.db.base_row_count() + 1);
    Table t1 = eval_phase1(*tr.phase1, p.db, log);
    DepTable pipe = eval_phase2(*tr.phase2, p.db, log, opts.granularity, in.dep_backend());
    DepTable oracle = annotated_eval(*p.normalized, p.db, opts, in.dep_backend());

    int diffs = 0;
    if (pipe.rows.size() != oracle.rows.size()) {
        std::cerr << "row count differs: pipeline " << pipe.rows.size() << ", oracle "
                  << oracle.rows.size() << "\n";
        ++diffs;
    } else {
        std::multimap<Rho, size_t> oracle_rows;
        for (size_t i = 0; i < oracle.rhos.size(); ++i) oracle_rows.emplace(oracle.rhos[i], i);
        for (size_t i = 0; i < pipe.rows.size(); ++i) {
            auto it = oracle_rows.find(pipe.rhos[i]);
            if (it == oracle_rows.end()) {
                std::cerr << "row ρ" << pipe.rhos[i] << " missing from the oracle\n";
                ++diffs;
                continue;
            }
            for (size_t c = 0; c < pipe.rows[i].size(); ++c) {
                const auto& a = std::get<DepSet>(pipe.rows[i][c]);
                const auto& b = std::get<DepSet>(oracle.rows[it->second][c]);
                if (!a.equal(b)) {
                    std::cerr << "cell ρ" << pipe.rhos[i] << "."
                              << pipe.schema.columns[c].name << " differs\n";
                    ++diffs;
                }
            }
        }
    }
    (void)t1;
    if (diffs == 0) {
        std::cout << "pipeline and oracle agree on " << pipe.rows.size() << " rows\n";
        return 0;
    }
    std::cerr << diffs << " differences\n";
    return 1;
}

int cmd_gen_terrain(const Inputs& in, int width, int height) {
    if (in.out_dir.empty()) throw SqlError(ErrorKind::Io, "--out is required");
    Database db = gen_terrain_db(width, height, in.seed);
    write_database(db, in.out_dir);
    VisibilityCase vis = visibility_query(17, 10, width, height);
    spit(in.out_dir + "/prelude.sql", vis.prelude);
    spit(in.out_dir + "/query.sql", vis.query);
    std::cout << "wrote " << in.out_dir << "/{schema.json, map.csv, prelude.sql, query.sql}\n";
    return 0;
}

int cmd_gen_corpus(const Inputs& in, int count) {
    if (in.out_dir.empty()) throw SqlError(ErrorKind::Io, "--out is required");
    for (int i = 0; i < count; ++i) {
        uint64_t seed = in.seed + static_cast<uint64_t>(i);
        GeneratedCase c = gen_random_query(seed);
        std::string dir = in.out_dir + "/case_" + std::to_string(seed) + "_" + c.profile;
        write_database(c.db, dir);
        spit(dir + "/query.sql", c.sql + ";\n");
    }
    std::cout << "wrote " << count << " cases under " << in.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SQL provenance toolkit: two-phase where/why derivation"};
    app.require_subcommand(1);

    Inputs in;
    int width = 21, height = 21, count = 10;

    auto add_common = [&](CLI::App* cmd, bool needs_query) {
        cmd->add_option("--db", in.db_dir, "database directory (schema.json + CSVs)");
        if (needs_query) {
            cmd->add_option("--query", in.query_file, "query file")->required();
            cmd->add_option("--prelude", in.prelude_file, "UDF prelude file");
        }
        cmd->add_option("--granularity", in.granularity, "cell | row")
            ->check(CLI::IsMember({"cell", "row"}));
        cmd->add_flag("--why,!--no-why", in.why, "derive why-provenance (default on)");
        cmd->add_flag("--hoist,!--no-hoist", in.hoist, "apply the set-aggregate hoisting rewrite");
        cmd->add_option("--backend", in.backend, "array | bitset")
            ->check(CLI::IsMember({"array", "bitset"}));
        cmd->add_option("--out", in.out_dir, "output directory");
    };

    auto* c_norm = app.add_subcommand("normalize", "print the normalized query");
    add_common(c_norm, true);
    auto* c_tx = app.add_subcommand("transform", "emit phase1/phase2 queries and the site table");
    add_common(c_tx, true);
    c_tx->add_option("--emit", in.emit, "sql | ast")->check(CLI::IsMember({"sql", "ast"}));
    auto* c_run = app.add_subcommand("run", "run both phases and emit results plus provenance");
    add_common(c_run, true);
    c_run->add_option("--dump-logs", in.dump_logs, "write the log store as JSON");
    auto* c_oracle = app.add_subcommand("oracle", "run the annotated-evaluation oracle");
    add_common(c_oracle, true);
    auto* c_check = app.add_subcommand("check", "compare the pipeline against the oracle");
    add_common(c_check, true);
    auto* c_terrain = app.add_subcommand("gen-terrain", "generate a terrain database");
    c_terrain->add_option("--out", in.out_dir, "output directory")->required();
    c_terrain->add_option("--seed", in.seed, "generator seed");
    c_terrain->add_option("--width", width, "grid width");
    c_terrain->add_option("--height", height, "grid height");
    auto* c_corpus = app.add_subcommand("gen-corpus", "generate random corpus cases");
    c_corpus->add_option("--out", in.out_dir, "output directory")->required();
    c_corpus->add_option("--seed", in.seed, "first seed");
    c_corpus->add_option("--count", count, "number of cases");

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_norm->parsed()) return cmd_normalize(in);
        if (c_tx->parsed()) return cmd_transform(in);
        if (c_run->parsed()) return cmd_run(in);
        if (c_oracle->parsed()) return cmd_oracle(in);
        if (c_check->parsed()) return cmd_check(in);
        if (c_terrain->parsed()) return cmd_gen_terrain(in, width, height);
        if (c_corpus->parsed()) return cmd_gen_corpus(in, count);
    } catch (const SqlError& e) {
        std::cerr << "error: " << e.what();
        if (e.span.end > e.span.begin)
            std::cerr << " (at bytes " << e.span.begin << ".." << e.span.end << ")";
        std::cerr << "\n";
        switch (e.kind) {
            case ErrorKind::Syntax:
            case ErrorKind::Unsupported:
            case ErrorKind::Validation:
            case ErrorKind::Io: return 2;
            default: return 3;
        }
    }
    return 2;
}
