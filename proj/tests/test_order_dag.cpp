#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "cgmoe/order_dag.hpp"

using namespace cgmoe;

namespace {

using Reach = std::vector<std::vector<bool>>;

Reach closure(std::size_t n, const std::vector<OrderDag::Edge> &edges)
{
    Reach r(n, std::vector<bool>(n, false));
    for (const auto &[u, v] : edges)
        r[u][v] = true;
    for (std::size_t k = 0; k < n; k++)
        for (std::size_t i = 0; i < n; i++)
            if (r[i][k])
                for (std::size_t j = 0; j < n; j++)
                    if (r[k][j])
                        r[i][j] = true;
    return r;
}

OrderDag random_dag(std::mt19937_64 &rng, std::size_t n, double density)
{
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::bernoulli_distribution keep(density);
    OrderDag dag;
    dag.node_count = n;
    for (std::size_t i = 0; i < n; i++)
        for (std::size_t j = i + 1; j < n; j++)
            if (keep(rng))
                dag.edges.emplace_back(perm[i], perm[j]);
    return dag;
}

} // namespace

TEST(BuildOrderDag, Chain)
{
    const std::vector<ErrorPair> e{{2, 2}, {1, 1}, {0, 0}};
    const auto dag = build_order_dag(e);
    const std::set<OrderDag::Edge> got(dag.edges.begin(), dag.edges.end());
    const std::set<OrderDag::Edge> want{{0, 1}, {1, 2}, {0, 2}};
    EXPECT_EQ(got, want);
    EXPECT_TRUE(dag.equalities.empty());
}

TEST(BuildOrderDag, Incomparable)
{
    const std::vector<ErrorPair> e{{1, 0}, {0, 1}};
    const auto dag = build_order_dag(e);
    EXPECT_TRUE(dag.edges.empty());
}

TEST(BuildOrderDag, MatchesBruteForce)
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int trial = 0; trial < 20; trial++)
    {
        std::vector<ErrorPair> e(20);
        for (auto &p : e)
            p = {u(rng), u(rng)};
        const auto dag = build_order_dag(e);
        std::set<OrderDag::Edge> want;
        for (std::uint32_t i = 0; i < 20; i++)
            for (std::uint32_t j = 0; j < 20; j++)
                if (i != j && e[i][0] >= e[j][0] && e[i][1] >= e[j][1])
                    want.emplace(i, j);
        const std::set<OrderDag::Edge> got(dag.edges.begin(), dag.edges.end());
        EXPECT_EQ(got, want);
    }
}

TEST(BuildOrderDag, TiesBecomeEqualities)
{
    const std::vector<ErrorPair> e{{1, 1}, {3, 2}, {1, 1}, {0, 0}};
    const auto dag = build_order_dag(e);
    ASSERT_EQ(dag.equalities.size(), 1u);
    EXPECT_EQ(dag.equalities[0], (OrderDag::Edge{2, 0}));
    // Order edges only touch representatives; the implied constraints survive.
    for (const auto &[u, v] : dag.edges)
        EXPECT_TRUE(u != 2 && v != 2);
    const auto r = closure(4, dag.edges);
    EXPECT_TRUE(r[1][0]);
    EXPECT_TRUE(r[0][3]);
    EXPECT_TRUE(r[1][3]);
}

TEST(TransitiveReduction, Shortcut)
{
    OrderDag dag;
    dag.node_count = 3;
    dag.edges = {{0, 1}, {1, 2}, {0, 2}};
    const auto red = transitive_reduction(dag);
    const std::set<OrderDag::Edge> got(red.edges.begin(), red.edges.end());
    EXPECT_EQ(got, (std::set<OrderDag::Edge>{{0, 1}, {1, 2}}));
}

TEST(TransitiveReduction, Edgeless)
{
    OrderDag dag;
    dag.node_count = 7;
    EXPECT_TRUE(transitive_reduction(dag).edges.empty());
}

TEST(TransitiveReduction, CycleRejected)
{
    OrderDag dag;
    dag.node_count = 3;
    dag.edges = {{0, 1}, {1, 2}, {2, 0}};
    EXPECT_THROW(transitive_reduction(dag), Error);
}

TEST(TransitiveReduction, RandomDagsPreserveReachabilityMinimally)
{
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 40; trial++)
    {
        const std::size_t n = 2 + trial % 49;
        const auto dag = random_dag(rng, n, trial % 2 ? 0.3 : 0.08);
        const auto red = transitive_reduction(dag);
        const auto want = closure(n, dag.edges);
        EXPECT_EQ(closure(n, red.edges), want);
        for (std::size_t k = 0; k < red.edges.size(); k++)
        {
            auto fewer = red.edges;
            fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(k));
            EXPECT_NE(closure(n, fewer), want);
        }
    }
}
