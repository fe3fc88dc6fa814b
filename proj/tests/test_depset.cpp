#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sqlprov/depset.hpp"

#include <random>

using namespace sqlprov;

namespace {

DepUniverse make_universe(uint64_t n) {
    DepUniverse u;
    for (uint64_t i = 1; i <= n; ++i) u.add(i);
    u.finalize();
    return u;
}

DepSet from_codes(DepBackend b, const DepUniverse* u, const std::vector<uint64_t>& where,
                  const std::vector<uint64_t>& why) {
    DepSet d = b == DepBackend::Array ? DepSet::empty_array() : DepSet::empty_bitset(u);
    for (uint64_t c : where) d = d.union_with(DepSet::singleton(b, u, c));
    for (uint64_t c : why) d = d.union_with(DepSet::singleton(b, u, c).mark_why());
    return d;
}

} // namespace

TEST_CASE("empty set and union identity") {
    auto e = DepSet::empty_array();
    CHECK(e.parts_empty());
    auto d = from_codes(DepBackend::Array, nullptr, {3, 1}, {});
    CHECK(d.union_with(e).equal(d));
    CHECK(e.union_with(d).equal(d));
}

TEST_CASE("union is part-wise and canonical form is sorted unique") {
    auto a = from_codes(DepBackend::Array, nullptr, {1}, {});
    auto b = from_codes(DepBackend::Array, nullptr, {2}, {});
    auto u = a.union_with(b);
    auto [w, y] = u.canonical();
    CHECK(w == std::vector<uint64_t>{1, 2});
    CHECK(y.empty());
    auto dup = a.union_with(a);
    auto [w2, y2] = dup.canonical();
    CHECK(w2 == std::vector<uint64_t>{1});
    (void)y2;
}

TEST_CASE("mark_why moves the where part and is idempotent") {
    auto d = from_codes(DepBackend::Array, nullptr, {5}, {7});
    auto y = d.mark_why();
    auto [w, why] = y.canonical();
    CHECK(w.empty());
    CHECK(why == std::vector<uint64_t>{5, 7});
    CHECK(y.mark_why().equal(y));
}

TEST_CASE("mark_why distributes over union") {
    std::mt19937_64 rng(7);
    auto u = make_universe(64);
    for (int round = 0; round < 50; ++round) {
        std::vector<uint64_t> aw, ay, bw, by;
        for (int i = 0; i < 6; ++i) {
            aw.push_back(rng() % 64 + 1);
            ay.push_back(rng() % 64 + 1);
            bw.push_back(rng() % 64 + 1);
            by.push_back(rng() % 64 + 1);
        }
        auto a = from_codes(DepBackend::Array, nullptr, aw, ay);
        auto b = from_codes(DepBackend::Array, nullptr, bw, by);
        CHECK(a.union_with(b).mark_why().equal(a.mark_why().union_with(b.mark_why())));
    }
}

TEST_CASE("monoid laws: associativity, commutativity, idempotence") {
    std::mt19937_64 rng(11);
    auto mk = [&]() {
        std::vector<uint64_t> w, y;
        for (int i = 0; i < 5; ++i) {
            w.push_back(rng() % 40 + 1);
            y.push_back(rng() % 40 + 1);
        }
        return from_codes(DepBackend::Array, nullptr, w, y);
    };
    for (int round = 0; round < 50; ++round) {
        auto a = mk(), b = mk(), c = mk();
        CHECK(a.union_with(b).union_with(c).equal(a.union_with(b.union_with(c))));
        CHECK(a.union_with(b).equal(b.union_with(a)));
        CHECK(a.union_with(a).equal(a));
        CHECK(a.subset_of(a.union_with(b)));
        CHECK(b.subset_of(a.union_with(b)));
    }
}

TEST_CASE("array and bitset backends agree on random expression trees") {
    auto u = make_universe(200);
    std::mt19937_64 rng(23);
    for (int round = 0; round < 100; ++round) {
        auto build = [&](DepBackend backend, auto&& self, int depth) -> DepSet {
            std::mt19937_64 local(round * 97 + depth); // same choices per backend
            (void)local;
            if (depth == 0 || rng() % 3 == 0) {
                uint64_t code = rng() % 200 + 1;
                auto d = DepSet::singleton(backend, &u, code);
                return rng() % 2 ? d.mark_why() : d;
            }
            auto l = self(backend, self, depth - 1);
            auto r = self(backend, self, depth - 1);
            return l.union_with(r);
        };
        // replay the same random choices for each backend
        auto seed = rng();
        std::mt19937_64 save(seed);
        rng.seed(seed);
        auto a = build(DepBackend::Array, build, 4);
        rng.seed(seed);
        auto b = build(DepBackend::Bitset, build, 4);
        CHECK(a.equal(b));
        rng = save;
        rng.discard(64);
    }
}

TEST_CASE("cell id codes order by (rho, column)") {
    CellId a{1, 0}, b{1, 2}, c{2, 0};
    CHECK(a.code() < b.code());
    CHECK(b.code() < c.code());
    CHECK(CellId::from_code(b.code()).rho == 1);
    CHECK(CellId::from_code(b.code()).column == 2);
}
