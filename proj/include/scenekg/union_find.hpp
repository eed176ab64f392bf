#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace scenekg {

/// Disjoint sets over 0..n-1 with path halving and union by size. The root
/// of a merged set is always the smaller of the two roots, so group
/// representatives do not depend on union order.
class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }

    std::size_t find(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }

    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (b < a) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

    std::size_t size() const { return parent_.size(); }

    /// Groups in ascending order of their smallest member; members ascending.
    std::vector<std::vector<std::size_t>> groups() {
        std::vector<std::vector<std::size_t>> by_root(parent_.size());
        for (std::size_t i = 0; i < parent_.size(); ++i) by_root[find(i)].push_back(i);
        std::vector<std::vector<std::size_t>> out;
        for (auto& g : by_root)
            if (!g.empty()) out.push_back(std::move(g));
        return out;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> size_;
};

}  // namespace scenekg
