#include "sqlprov/logstore.hpp"

#include "sqlprov/span.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>

namespace sqlprov {

const char* log_kind_name(LogKind k) {
    switch (k) {
        case LogKind::Join: return "JOIN";
        case LogKind::Grp: return "GRP";
        case LogKind::Win: return "WIN";
        case LogKind::Case: return "CASE";
        case LogKind::Left: return "LEFT";
        case LogKind::Filter: return "FILTER";
        case LogKind::Tblf: return "TBLF";
    }
    return "?";
}

LogStore::SiteLog& LogStore::site_log(LogKind kind, int site) {
    auto it = sites_.find(site);
    if (it == sites_.end()) {
        it = sites_.emplace(site, SiteLog{kind, {}}).first;
    } else if (it->second.kind != kind) {
        throw SqlError(ErrorKind::Evaluation, "log site used with two different kinds");
    }
    return it->second;
}

const LogStore::SiteLog* LogStore::find_site(LogKind kind, int site) const {
    auto it = sites_.find(site);
    if (it == sites_.end() || it->second.kind != kind) return nullptr;
    return &it->second;
}

const LogEntry& LogStore::log_put(LogKind kind, int site, const LogKey& key, const LogEntry& entry) {
    auto& log = site_log(kind, site);
    auto [it, inserted] = log.records.emplace(key, entry);
    if (inserted && kind == LogKind::Grp) {
        for (int64_t m : key)
            grp_member_index_[site][static_cast<Rho>(m)] = entry.rho;
    }
    return it->second;
}

std::vector<LogEntry> LogStore::log_get(LogKind kind, int site, const LogKey& key) const {
    std::vector<LogEntry> out;
    if (kind == LogKind::Grp && key.size() == 1) {
        // member lookup
        auto sit = grp_member_index_.find(site);
        if (sit != grp_member_index_.end()) {
            auto mit = sit->second.find(static_cast<Rho>(key[0]));
            if (mit != sit->second.end()) out.push_back(LogEntry{mit->second, 0, 0, 0});
        }
        return out;
    }
    const SiteLog* log = find_site(kind, site);
    if (!log) return out;
    auto it = log->records.find(key);
    if (it != log->records.end()) out.push_back(it->second);
    return out;
}

Rho LogStore::write_join(int site, const std::vector<int64_t>& rhos) {
    auto& log = site_log(LogKind::Join, site);
    auto it = log.records.find(rhos);
    if (it != log.records.end()) return it->second.rho;
    LogEntry e;
    e.rho = fresh_row_id();
    log.records.emplace(rhos, e);
    return e.rho;
}

std::optional<Rho> LogStore::read_join(int site, const std::vector<int64_t>& rhos) const {
    const SiteLog* log = find_site(LogKind::Join, site);
    if (!log) return std::nullopt;
    auto it = log->records.find(rhos);
    if (it == log->records.end()) return std::nullopt;
    return it->second.rho;
}

Rho LogStore::write_grp(int site, std::vector<Rho> members) {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    LogKey key(members.begin(), members.end());
    auto& log = site_log(LogKind::Grp, site);
    auto it = log.records.find(key);
    if (it != log.records.end()) return it->second.rho;
    LogEntry e;
    e.rho = fresh_row_id();
    log.records.emplace(key, e);
    for (Rho m : members) grp_member_index_[site][m] = e.rho;
    return e.rho;
}

std::optional<Rho> LogStore::read_grp_by_member(int site, Rho member) const {
    auto sit = grp_member_index_.find(site);
    if (sit == grp_member_index_.end()) return std::nullopt;
    auto mit = sit->second.find(member);
    if (mit == sit->second.end()) return std::nullopt;
    return mit->second;
}

std::optional<Rho> LogStore::read_grp_by_key(int site, std::vector<Rho> members) const {
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    const SiteLog* log = find_site(LogKind::Grp, site);
    if (!log) return std::nullopt;
    LogKey key(members.begin(), members.end());
    auto it = log->records.find(key);
    if (it == log->records.end()) return std::nullopt;
    return it->second.rho;
}

Rho LogStore::write_win(int site, Rho rho, Rho part, int64_t rank) {
    auto& log = site_log(LogKind::Win, site);
    LogKey key{static_cast<int64_t>(rho)};
    auto it = log.records.find(key);
    if (it == log.records.end()) {
        LogEntry e;
        e.part = part;
        e.rank = rank;
        log.records.emplace(key, e);
    }
    return rho;
}

std::optional<WinPlacement> LogStore::read_win(int site, Rho rho) const {
    const SiteLog* log = find_site(LogKind::Win, site);
    if (!log) return std::nullopt;
    auto it = log->records.find(LogKey{static_cast<int64_t>(rho)});
    if (it == log->records.end()) return std::nullopt;
    return WinPlacement{it->second.part, it->second.rank};
}

int64_t LogStore::write_case(int site, Rho rho, int64_t branch) {
    auto& log = site_log(LogKind::Case, site);
    LogKey key{static_cast<int64_t>(rho)};
    auto it = log.records.find(key);
    if (it != log.records.end()) return it->second.branch;
    LogEntry e;
    e.branch = branch;
    log.records.emplace(key, e);
    return branch;
}

std::optional<int64_t> LogStore::read_case(int site, Rho rho) const {
    const SiteLog* log = find_site(LogKind::Case, site);
    if (!log) return std::nullopt;
    auto it = log->records.find(LogKey{static_cast<int64_t>(rho)});
    if (it == log->records.end()) return std::nullopt;
    return it->second.branch;
}

Rho LogStore::write_left(int site, Rho left, std::optional<Rho> right) {
    auto& log = site_log(LogKind::Left, site);
    LogKey key{static_cast<int64_t>(left), right ? static_cast<int64_t>(*right) : kNullRho};
    auto it = log.records.find(key);
    if (it != log.records.end()) return it->second.rho;
    LogEntry e;
    e.rho = fresh_row_id();
    log.records.emplace(key, e);
    return e.rho;
}

std::vector<std::pair<Rho, std::optional<Rho>>> LogStore::read_left(int site, Rho left) const {
    std::vector<std::pair<Rho, std::optional<Rho>>> out;
    const SiteLog* log = find_site(LogKind::Left, site);
    if (!log) return out;
    LogKey lo{static_cast<int64_t>(left), std::numeric_limits<int64_t>::min()};
    for (auto it = log->records.lower_bound(lo); it != log->records.end(); ++it) {
        if (it->first[0] != static_cast<int64_t>(left)) break;
        std::optional<Rho> right;
        if (it->first[1] != kNullRho) right = static_cast<Rho>(it->first[1]);
        out.emplace_back(it->second.rho, right);
    }
    return out;
}

Rho LogStore::write_filter(int site, Rho rho) {
    auto& log = site_log(LogKind::Filter, site);
    LogKey key{static_cast<int64_t>(rho)};
    auto it = log.records.find(key);
    if (it != log.records.end()) return it->second.rho;
    LogEntry e;
    e.rho = fresh_row_id();
    log.records.emplace(key, e);
    return e.rho;
}

std::optional<Rho> LogStore::read_filter(int site, Rho rho) const {
    const SiteLog* log = find_site(LogKind::Filter, site);
    if (!log) return std::nullopt;
    auto it = log->records.find(LogKey{static_cast<int64_t>(rho)});
    if (it == log->records.end()) return std::nullopt;
    return it->second.rho;
}

Rho LogStore::write_tblf(int site) {
    int64_t ordinal = tblf_ordinal_[site]++;
    auto& log = site_log(LogKind::Tblf, site);
    LogKey key{ordinal};
    auto it = log.records.find(key);
    if (it != log.records.end()) return it->second.rho;
    LogEntry e;
    e.rho = fresh_row_id();
    log.records.emplace(key, e);
    return e.rho;
}

std::vector<Rho> LogStore::read_tblf(int site) const {
    std::vector<Rho> out;
    const SiteLog* log = find_site(LogKind::Tblf, site);
    if (!log) return out;
    for (const auto& [key, e] : log->records) out.push_back(e.rho);
    return out;
}

size_t LogStore::record_count() const {
    size_t n = 0;
    for (const auto& [site, log] : sites_) n += log.records.size();
    return n;
}

size_t LogStore::record_count(LogKind kind) const {
    size_t n = 0;
    for (const auto& [site, log] : sites_)
        if (log.kind == kind) n += log.records.size();
    return n;
}

std::vector<LogStore::Record> LogStore::all_records() const {
    std::vector<Record> out;
    for (const auto& [site, log] : sites_)
        for (const auto& [key, entry] : log.records)
            out.push_back(Record{log.kind, site, key, entry});
    return out;
}

std::string LogStore::to_json() const {
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    for (const auto& [site, log] : sites_) {
        nlohmann::ordered_json recs = nlohmann::ordered_json::array();
        for (const auto& [key, e] : log.records) {
            nlohmann::ordered_json r;
            r["site"] = site;
            r["key"] = key;
            switch (log.kind) {
                case LogKind::Win:
                    r["entry"] = {{"part", e.part}, {"rank", e.rank}};
                    break;
                case LogKind::Case:
                    r["entry"] = e.branch;
                    break;
                default:
                    r["entry"] = e.rho;
                    break;
            }
            recs.push_back(std::move(r));
        }
        std::string name = std::string("log_") + log_kind_name(log.kind);
        if (!root.contains(name)) root[name] = nlohmann::ordered_json::array();
        for (auto& r : recs) root[name].push_back(std::move(r));
    }
    return root.dump(2);
}

void LogStore::save_snapshot(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SqlError(ErrorKind::Io, "cannot write snapshot: " + path);
    auto put64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put64(next_id_);
    put64(sites_.size());
    for (const auto& [site, log] : sites_) {
        put64(static_cast<uint64_t>(site));
        put64(static_cast<uint64_t>(log.kind));
        put64(log.records.size());
        for (const auto& [key, e] : log.records) {
            put64(key.size());
            for (int64_t k : key) put64(static_cast<uint64_t>(k));
            put64(e.rho);
            put64(e.part);
            put64(static_cast<uint64_t>(e.rank));
            put64(static_cast<uint64_t>(e.branch));
        }
    }
}

LogStore LogStore::load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SqlError(ErrorKind::Io, "cannot read snapshot: " + path);
    auto get64 = [&]() {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        if (!in) throw SqlError(ErrorKind::Io, "truncated snapshot: " + path);
        return v;
    };
    LogStore store(get64());
    uint64_t nsites = get64();
    for (uint64_t s = 0; s < nsites; ++s) {
        int site = static_cast<int>(get64());
        LogKind kind = static_cast<LogKind>(get64());
        uint64_t nrec = get64();
        for (uint64_t i = 0; i < nrec; ++i) {
            LogKey key(get64());
            for (auto& k : key) k = static_cast<int64_t>(get64());
            LogEntry e;
            e.rho = get64();
            e.part = get64();
            e.rank = static_cast<int64_t>(get64());
            e.branch = static_cast<int64_t>(get64());
            store.log_put(kind, site, key, e);
        }
    }
    return store;
}

} // namespace sqlprov
