#pragma once

#include "sqlprov/depset.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sqlprov {

enum class LogKind : uint8_t { Join, Grp, Win, Case, Left, Filter, Tblf };

const char* log_kind_name(LogKind k);

/// Kind-specific key. JOIN: the ordered rho tuple; GRP: the ascending
/// member list; WIN/CASE/FILTER: a single rho; LEFT: (left, right-or-null);
/// TBLF: the emission ordinal. NULL components are encoded as -1.
using LogKey = std::vector<int64_t>;

constexpr int64_t kNullRho = -1;

/// Kind-specific entry payload.
struct LogEntry {
    Rho rho = 0;       // JOIN/GRP/FILTER/TBLF: fresh id; LEFT: pair id
    Rho part = 0;      // WIN: partition representative
    int64_t rank = 0;  // WIN: in-partition position
    int64_t branch = 0; // CASE

    bool operator==(const LogEntry&) const = default;
};

struct WinPlacement {
    Rho part;
    int64_t rank;
};

/// Write-once log store shared by Phase 1 (writer) and Phase 2 (reader).
/// Also owns the row id sequence: ids above the base-table range are
/// handed out here and only here.
class LogStore {
public:
    explicit LogStore(Rho first_fresh_id = 1) : next_id_(first_fresh_id) {}

    Rho fresh_row_id() { return next_id_++; }
    Rho next_id_preview() const { return next_id_; }

    /// Inserts iff (kind, site, key) is absent; returns the stored entry
    /// (the prior one when the put was a duplicate).
    const LogEntry& log_put(LogKind kind, int site, const LogKey& key, const LogEntry& entry);
    /// All entries under (kind, site, key); empty when none. For GRP the
    /// lookup key is a single member rho.
    std::vector<LogEntry> log_get(LogKind kind, int site, const LogKey& key) const;

    // logwrite_* / logread_* wrappers with the per-kind schemas.
    Rho write_join(int site, const std::vector<int64_t>& rhos);
    std::optional<Rho> read_join(int site, const std::vector<int64_t>& rhos) const;

    Rho write_grp(int site, std::vector<Rho> members); // members need not be sorted
    std::optional<Rho> read_grp_by_member(int site, Rho member) const;
    /// Exact member-set lookup; grand-total groups replay through it.
    std::optional<Rho> read_grp_by_key(int site, std::vector<Rho> members) const;

    Rho write_win(int site, Rho rho, Rho part, int64_t rank);
    std::optional<WinPlacement> read_win(int site, Rho rho) const;

    int64_t write_case(int site, Rho rho, int64_t branch);
    std::optional<int64_t> read_case(int site, Rho rho) const;

    Rho write_left(int site, Rho left, std::optional<Rho> right);
    /// (pair id, right-or-null) for every logged partner of `left`,
    /// ordered by right rho ascending (nulls first).
    std::vector<std::pair<Rho, std::optional<Rho>>> read_left(int site, Rho left) const;

    Rho write_filter(int site, Rho rho);
    std::optional<Rho> read_filter(int site, Rho rho) const;

    Rho write_tblf(int site);
    std::vector<Rho> read_tblf(int site) const; // emission order

    size_t record_count() const;
    size_t record_count(LogKind kind) const;

    struct Record {
        LogKind kind;
        int site;
        LogKey key;
        LogEntry entry;
    };
    std::vector<Record> all_records() const; // deterministic order

    /// JSON text mirroring the per-kind log tables (site, key, entry).
    std::string to_json() const;

    void save_snapshot(const std::string& path) const;
    static LogStore load_snapshot(const std::string& path);

private:
    struct SiteLog {
        LogKind kind;
        std::map<LogKey, LogEntry> records;
    };
    std::map<int, SiteLog> sites_;
    std::map<int, std::map<Rho, Rho>> grp_member_index_; // site -> member -> group
    std::map<int, int64_t> tblf_ordinal_;                 // site -> next ordinal
    Rho next_id_;

    SiteLog& site_log(LogKind kind, int site);
    const SiteLog* find_site(LogKind kind, int site) const;
};

} // namespace sqlprov
