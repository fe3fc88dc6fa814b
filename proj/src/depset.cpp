#include "sqlprov/depset.hpp"

#include "sqlprov/span.hpp"

#include <algorithm>

namespace sqlprov {

void DepUniverse::add(uint64_t code) {
    codes_.push_back(code);
}

void DepUniverse::finalize() {
    std::sort(codes_.begin(), codes_.end());
    codes_.erase(std::unique(codes_.begin(), codes_.end()), codes_.end());
    index_.reserve(codes_.size());
    for (size_t i = 0; i < codes_.size(); ++i)
        index_[codes_[i]] = static_cast<uint32_t>(i);
    finalized_ = true;
}

size_t DepUniverse::index_of(uint64_t code) const {
    auto it = index_.find(code);
    if (it == index_.end())
        throw SqlError(ErrorKind::Evaluation, "cell id outside the dependency universe");
    return it->second;
}

namespace {

std::vector<uint64_t> merge_sorted(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
    std::vector<uint64_t> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

std::vector<uint64_t> or_words(const std::vector<uint64_t>& a, const std::vector<uint64_t>& b) {
    std::vector<uint64_t> out(std::max(a.size(), b.size()), 0);
    for (size_t i = 0; i < out.size(); ++i) {
        uint64_t w = 0;
        if (i < a.size()) w |= a[i];
        if (i < b.size()) w |= b[i];
        out[i] = w;
    }
    return out;
}

std::vector<uint64_t> words_to_codes(const DepUniverse* u, const std::vector<uint64_t>& words) {
    std::vector<uint64_t> out;
    for (size_t w = 0; w < words.size(); ++w) {
        uint64_t word = words[w];
        while (word) {
            unsigned bit = static_cast<unsigned>(__builtin_ctzll(word));
            out.push_back(u->code_at(w * 64 + bit));
            word &= word - 1;
        }
    }
    return out;
}

void set_bit(std::vector<uint64_t>& words, size_t idx) {
    size_t w = idx / 64;
    if (w >= words.size()) words.resize(w + 1, 0);
    words[w] |= uint64_t(1) << (idx % 64);
}

} // namespace

DepSet DepSet::empty_array() {
    DepSet d;
    d.rep_ = ArrayRep{};
    return d;
}

DepSet DepSet::empty_bitset(const DepUniverse* u) {
    DepSet d;
    d.rep_ = BitsetRep{u, {}, {}};
    return d;
}

DepSet DepSet::singleton(DepBackend b, const DepUniverse* u, uint64_t code) {
    DepSet d;
    if (b == DepBackend::Array) {
        ArrayRep r;
        r.where.push_back(code);
        d.rep_ = std::move(r);
    } else {
        BitsetRep r;
        r.universe = u;
        set_bit(r.where, u->index_of(code));
        d.rep_ = std::move(r);
    }
    return d;
}

DepSet DepSet::union_with(const DepSet& other) const {
    if (rep_.index() != other.rep_.index())
        throw SqlError(ErrorKind::Evaluation, "dependency set backend mismatch in union");
    DepSet out;
    if (is_array()) {
        const auto& a = std::get<ArrayRep>(rep_);
        const auto& b = std::get<ArrayRep>(other.rep_);
        out.rep_ = ArrayRep{merge_sorted(a.where, b.where), merge_sorted(a.why, b.why)};
    } else {
        const auto& a = std::get<BitsetRep>(rep_);
        const auto& b = std::get<BitsetRep>(other.rep_);
        out.rep_ = BitsetRep{a.universe ? a.universe : b.universe,
                             or_words(a.where, b.where), or_words(a.why, b.why)};
    }
    return out;
}

DepSet DepSet::mark_why() const {
    DepSet out;
    if (is_array()) {
        const auto& a = std::get<ArrayRep>(rep_);
        out.rep_ = ArrayRep{{}, merge_sorted(a.where, a.why)};
    } else {
        const auto& a = std::get<BitsetRep>(rep_);
        out.rep_ = BitsetRep{a.universe, {}, or_words(a.where, a.why)};
    }
    return out;
}

std::pair<std::vector<uint64_t>, std::vector<uint64_t>> DepSet::canonical() const {
    if (is_array()) {
        const auto& a = std::get<ArrayRep>(rep_);
        return {a.where, a.why};
    }
    const auto& a = std::get<BitsetRep>(rep_);
    return {words_to_codes(a.universe, a.where), words_to_codes(a.universe, a.why)};
}

bool DepSet::equal(const DepSet& other) const {
    return canonical() == other.canonical();
}

bool DepSet::subset_of(const DepSet& other) const {
    auto [w1, y1] = canonical();
    auto [w2, y2] = other.canonical();
    return std::includes(w2.begin(), w2.end(), w1.begin(), w1.end()) &&
           std::includes(y2.begin(), y2.end(), y1.begin(), y1.end());
}

bool DepSet::parts_empty() const {
    auto [w, y] = canonical();
    return w.empty() && y.empty();
}

size_t DepSet::cardinality() const {
    auto [w, y] = canonical();
    return w.size() + y.size();
}

} // namespace sqlprov
