#pragma once

// Partial-order constraints between gating values: e_i >= e_j (component-wise)
// implies g_i <= g_j.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "cgmoe/error.hpp"

namespace cgmoe {

using ErrorPair = std::array<double, 2>;

/// Edge (i, j) reads g_i <= g_j. Equalities (i, j) read g_i == g_j.
struct OrderDag
{
    using Edge = std::pair<std::uint32_t, std::uint32_t>;

    std::size_t node_count = 0;
    std::vector<Edge> edges;
    std::vector<Edge> equalities;
};

inline bool dominates(const ErrorPair &a, const ErrorPair &b) { return a[0] >= b[0] && a[1] >= b[1]; }

/// Order DAG of the error pairs. Nodes with identical error pairs are tied to
/// the lowest-index member of their group by an equality; order edges are only
/// emitted between group representatives, which keeps the graph acyclic.
inline OrderDag build_order_dag(std::span<const ErrorPair> errors)
{
    const std::size_t n = errors.size();
    for (const auto &e : errors)
        require(e[0] >= 0.0 && e[1] >= 0.0, "invalid_argument", "error pairs must be non-negative");

    OrderDag dag;
    dag.node_count = n;

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (errors[a] != errors[b])
            return errors[a] < errors[b];
        return a < b;
    });
    std::vector<std::uint32_t> reps;
    for (std::size_t k = 0; k < n; k++)
    {
        const std::uint32_t i = order[k];
        if (k > 0 && errors[order[k - 1]] == errors[i])
            dag.equalities.emplace_back(i, reps.back());
        else
            reps.push_back(i);
    }
    std::sort(reps.begin(), reps.end());
    std::sort(dag.equalities.begin(), dag.equalities.end());

    for (const std::uint32_t i : reps)
        for (const std::uint32_t j : reps)
            if (i != j && dominates(errors[i], errors[j]))
                dag.edges.emplace_back(i, j);
    return dag;
}

/// Topological order of the order edges; throws on a cycle.
inline std::vector<std::uint32_t> topological_order(const OrderDag &dag)
{
    const std::size_t n = dag.node_count;
    std::vector<std::vector<std::uint32_t>> succ(n);
    std::vector<std::size_t> indegree(n, 0);
    for (const auto &[u, v] : dag.edges)
    {
        require(u < n && v < n, "invalid_dag", "edge endpoint out of range");
        require(u != v, "invalid_dag", "self edge");
        succ[u].push_back(v);
        indegree[v]++;
    }
    std::vector<std::uint32_t> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; i++)
        if (indegree[i] == 0)
            out.push_back(i);
    for (std::size_t head = 0; head < out.size(); head++)
        for (const std::uint32_t v : succ[out[head]])
            if (--indegree[v] == 0)
                out.push_back(v);
    require(out.size() == n, "cyclic_dag", "order constraints contain a cycle");
    return out;
}

/// Minimal edge set with the same reachability. Equalities are kept as-is.
inline OrderDag transitive_reduction(const OrderDag &dag)
{
    const std::size_t n = dag.node_count;
    const std::vector<std::uint32_t> topo = topological_order(dag);
    std::vector<std::uint32_t> pos(n);
    for (std::uint32_t k = 0; k < n; k++)
        pos[topo[k]] = k;

    std::vector<std::vector<std::uint32_t>> succ(n);
    for (const auto &[u, v] : dag.edges)
        succ[u].push_back(v);

    const std::size_t words = (n + 63) / 64;
    std::vector<std::uint64_t> reach(n * words, 0);
    OrderDag out;
    out.node_count = n;
    out.equalities = dag.equalities;
    for (std::size_t k = n; k-- > 0;)
    {
        const std::uint32_t u = topo[k];
        auto &s = succ[u];
        std::sort(s.begin(), s.end(), [&](std::uint32_t a, std::uint32_t b) { return pos[a] < pos[b]; });
        s.erase(std::unique(s.begin(), s.end()), s.end());
        std::uint64_t *ru = reach.data() + u * words;
        for (const std::uint32_t v : s)
        {
            if (ru[v / 64] >> (v % 64) & 1u)
                continue;
            out.edges.emplace_back(u, v);
            const std::uint64_t *rv = reach.data() + v * words;
            for (std::size_t w = 0; w < words; w++)
                ru[w] |= rv[w];
            ru[v / 64] |= std::uint64_t{1} << (v % 64);
        }
    }
    std::sort(out.edges.begin(), out.edges.end());
    return out;
}

} // namespace cgmoe
