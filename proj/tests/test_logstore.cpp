#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/logstore.hpp"

#include <filesystem>
#include <random>

using namespace sqlprov;

TEST_CASE("fresh ids start above the base range and increase") {
    LogStore log(6); // five base rows loaded
    Rho a = log.fresh_row_id();
    Rho b = log.fresh_row_id();
    CHECK(a == 6);
    CHECK(b == 7);
    CHECK(a < b);
}

TEST_CASE("write-once join: duplicate writes return the original pair id") {
    LogStore log(8);
    Rho pair = log.write_join(1, {1, 6});
    CHECK(log.write_join(1, {1, 6}) == pair);
    CHECK(log.record_count() == 1);
    CHECK(log.read_join(1, {1, 6}) == pair);
    CHECK(!log.read_join(1, {2, 6}).has_value());
}

TEST_CASE("1000 random puts over 100 distinct keys store exactly 100 records") {
    LogStore log(1000);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        int64_t k = static_cast<int64_t>(rng() % 100);
        log.log_put(LogKind::Filter, 1, LogKey{k}, LogEntry{static_cast<Rho>(k), 0, 0, 0});
    }
    CHECK(log.record_count() == 100);
}

TEST_CASE("group log: member lookup finds the containing group") {
    LogStore log(8);
    Rho g1 = log.write_grp(1, {5, 1, 3});
    Rho g2 = log.write_grp(1, {2, 4});
    CHECK(g1 != g2);
    CHECK(log.read_grp_by_member(1, 3) == g1);
    CHECK(log.read_grp_by_member(1, 4) == g2);
    CHECK(!log.read_grp_by_member(1, 9).has_value());
    CHECK(log.write_grp(1, {1, 3, 5}) == g1); // canonical member order
    CHECK(log.record_count(LogKind::Grp) == 2);
    // singleton group
    Rho g3 = log.write_grp(2, {7});
    CHECK(log.read_grp_by_member(2, 7) == g3);
}

TEST_CASE("window log stores placement once and reads it back") {
    LogStore log(6);
    CHECK(log.write_win(4, 3, 1, 2) == 3);
    CHECK(log.write_win(4, 3, 9, 9) == 3); // absorbed
    auto p = log.read_win(4, 3);
    REQUIRE(p.has_value());
    CHECK(p->part == 1);
    CHECK(p->rank == 2);
    CHECK(!log.read_win(4, 5).has_value());
}

TEST_CASE("case, left, filter, tblf wrappers") {
    LogStore log(10);
    CHECK(log.write_case(2, 1, 2) == 2);
    CHECK(log.write_case(2, 1, 7) == 2); // absorbed, original branch returned
    CHECK(log.read_case(2, 1) == 2);

    Rho p1 = log.write_left(3, 1, 6);
    Rho p2 = log.write_left(3, 1, 7);
    Rho p3 = log.write_left(3, 2, std::nullopt);
    auto partners = log.read_left(3, 1);
    REQUIRE(partners.size() == 2);
    CHECK(partners[0].first == p1);
    CHECK(partners[0].second == 6);
    CHECK(partners[1].first == p2);
    auto nulls = log.read_left(3, 2);
    REQUIRE(nulls.size() == 1);
    CHECK(nulls[0].first == p3);
    CHECK(!nulls[0].second.has_value());

    Rho f = log.write_filter(4, 9);
    CHECK(log.write_filter(4, 9) == f);
    CHECK(log.read_filter(4, 9) == f);

    Rho t1 = log.write_tblf(5);
    Rho t2 = log.write_tblf(5);
    CHECK(t1 != t2);
    auto emitted = log.read_tblf(5);
    CHECK(emitted == std::vector<Rho>{t1, t2});
}

TEST_CASE("uniqueness invariant across a mixed store") {
    LogStore log(100);
    log.write_join(1, {1, 2});
    log.write_join(1, {1, 2});
    log.write_join(1, {2, 2});
    log.write_grp(2, {1, 2});
    log.write_grp(2, {2, 1});
    auto records = log.all_records();
    std::set<std::tuple<int, int, LogKey>> seen;
    for (const auto& r : records)
        CHECK(seen.insert({static_cast<int>(r.kind), r.site, r.key}).second);
}

TEST_CASE("snapshot round trip") {
    LogStore log(50);
    log.write_join(1, {1, 6});
    log.write_grp(2, {1, 3, 5});
    log.write_win(3, 3, 1, 2);
    log.write_case(4, 2, 0);
    log.write_left(5, 1, std::nullopt);
    log.write_filter(6, 4);
    log.write_tblf(7);
    auto path = std::filesystem::temp_directory_path() / "sqlprov_log_snapshot.bin";
    log.save_snapshot(path.string());
    LogStore loaded = LogStore::load_snapshot(path.string());
    CHECK(loaded.record_count() == log.record_count());
    CHECK(loaded.read_join(1, {1, 6}) == log.read_join(1, {1, 6}));
    CHECK(loaded.read_grp_by_member(2, 3) == log.read_grp_by_member(2, 3));
    auto p = loaded.read_win(3, 3);
    REQUIRE(p.has_value());
    CHECK(p->rank == 2);
    CHECK(loaded.next_id_preview() == log.next_id_preview());
    std::filesystem::remove(path);
}

TEST_CASE("groups partition their site's member set") {
    LogStore log(20);
    log.write_grp(1, {1, 2, 3});
    log.write_grp(1, {4, 5});
    log.write_grp(2, {1, 4}); // another site may regroup the same rows
    std::map<int, std::set<Rho>> seen;
    for (const auto& rec : log.all_records()) {
        if (rec.kind != LogKind::Grp) continue;
        for (int64_t m : rec.key)
            CHECK(seen[rec.site].insert(static_cast<Rho>(m)).second);
    }
}
