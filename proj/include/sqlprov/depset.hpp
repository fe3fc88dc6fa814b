#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace sqlprov {

using Rho = uint64_t;

/// Identity of one base-table cell. `rho` already pins down the table and
/// row, the column ordinal picks the cell. Codes order lexicographically
/// on (rho, column).
struct CellId {
    Rho rho = 0;
    uint32_t column = 0;

    uint64_t code() const { return (rho << 8) | column; }
    static CellId from_code(uint64_t c) { return CellId{c >> 8, static_cast<uint32_t>(c & 0xff)}; }

    auto operator<=>(const CellId&) const = default;
};

enum class DepBackend { Array, Bitset };
enum class Granularity { Cell, Row };

/// Fixed id universe for the bitset backend: every cell id (or row id) of
/// the loaded database, enumerated once at load time.
class DepUniverse {
public:
    void add(uint64_t code);
    void finalize();

    size_t size() const { return codes_.size(); }
    uint64_t code_at(size_t idx) const { return codes_[idx]; }
    size_t index_of(uint64_t code) const;

private:
    std::vector<uint64_t> codes_;
    std::unordered_map<uint64_t, uint32_t> index_;
    bool finalized_ = false;
};

/// Dependency set: a where-part and a why-part of cell ids (row ids at row
/// granularity). Immutable after construction.
class DepSet {
public:
    DepSet() = default;

    static DepSet empty_array();
    static DepSet empty_bitset(const DepUniverse* u);
    static DepSet singleton(DepBackend b, const DepUniverse* u, uint64_t code);

    DepSet union_with(const DepSet& other) const;
    DepSet mark_why() const;

    bool is_array() const { return rep_.index() == 0; }

    /// Canonical form: sorted duplicate-free (where, why) code lists.
    std::pair<std::vector<uint64_t>, std::vector<uint64_t>> canonical() const;
    bool equal(const DepSet& other) const;
    bool subset_of(const DepSet& other) const;
    bool parts_empty() const;
    size_t cardinality() const;

private:
    struct ArrayRep {
        std::vector<uint64_t> where; // sorted, unique
        std::vector<uint64_t> why;
    };
    struct BitsetRep {
        const DepUniverse* universe = nullptr;
        std::vector<uint64_t> where; // one bit per universe index
        std::vector<uint64_t> why;
    };
    std::variant<ArrayRep, BitsetRep> rep_;
};

} // namespace sqlprov
