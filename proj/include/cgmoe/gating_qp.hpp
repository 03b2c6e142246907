#pragma once

// Gating subproblem: a convex QP in g with a diagonal quadratic,
//
//   minimize   ||c - f_p - Diag(f_l - f_p) g||^2 + linear_coeff * 1'g
//   subject to lower <= g <= upper,  g_i <= g_j for every DAG edge (i, j),
//              g_i == g_j for every DAG equality.
//
// Equalities are eliminated by merging nodes into classes. The reduced problem
// is solved by ADMM operator splitting (x-update through a sparse LDL' factor
// of P + sigma I + A'RA, clipping for the box, one multiplier per order edge)
// followed by a polishing pass that recomputes every block of tied variables
// in closed form.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "cgmoe/error.hpp"
#include "cgmoe/kernel.hpp"
#include "cgmoe/order_dag.hpp"

namespace cgmoe {

struct GatingQpSettings
{
    int max_iterations = 50000;
    double tolerance = 1e-6;
    double rho = 0.1;
    double sigma = 1e-6;
    double relaxation = 1.6;
    int check_interval = 10;
    int adapt_interval = 50;
    bool polish = true;
};

struct GatingQpProblem
{
    Vector f_l;
    Vector f_p;
    Vector c;
    double linear_coeff = 0.0;
    OrderDag dag;
    Vector lower;  // empty: all zeros
    Vector upper;  // empty: all ones
};

struct GatingQpResult
{
    Vector g;
    double objective = 0.0;
    int iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    bool polished = false;
    Vector dual;  // multipliers of the merged problem, unscaled
    double rho = 0.0;
};

/// Iterate to resume from. The dual is only reused when the DAG is unchanged.
struct GatingQpWarmStart
{
    Vector g;
    Vector dual;
    double rho = 0.0;
};

inline double gating_objective(const Vector &f_l, const Vector &f_p, const Vector &c, double linear_coeff,
        const Vector &g)
{
    const Vector r = c - f_p - (f_l - f_p).cwiseProduct(g);
    return r.squaredNorm() + linear_coeff * g.sum();
}

namespace detail {

struct DisjointSets
{
    std::vector<std::uint32_t> parent;

    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
    std::uint32_t find(std::uint32_t x)
    {
        while (parent[x] != x)
        {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::uint32_t a, std::uint32_t b)
    {
        a = find(a);
        b = find(b);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
};

/// Separable QP over classes: sum_c quad_c x_c^2 + lin_c x_c.
struct ClassProblem
{
    Vector quad;
    Vector lin;
    Vector lower;
    Vector upper;
    std::vector<OrderDag::Edge> edges;

    Eigen::Index size() const { return quad.size(); }
    double objective(const Vector &x) const { return (quad.array() * x.array().square() + lin.array() * x.array()).sum(); }
};

/// Closed-form value of a block of variables forced equal.
inline double block_value(double quad, double lin, double lo, double hi, double fallback)
{
    double v;
    if (quad > 0.0)
        v = -lin / (2.0 * quad);
    else if (lin > 0.0)
        v = lo;
    else if (lin < 0.0)
        v = hi;
    else
        v = fallback;
    return std::clamp(v, lo, hi);
}

class AdmmSolver
{
public:
    AdmmSolver(const ClassProblem &prob, const GatingQpSettings &settings) :
            m_prob(prob),
            m_settings(settings)
    {
        const Eigen::Index n = prob.size();
        const double scale = std::max({1e-12, (2.0 * prob.quad).cwiseAbs().maxCoeff(), prob.lin.cwiseAbs().maxCoeff()});
        m_cost_scale = 1.0 / scale;
        m_p = 2.0 * prob.quad * m_cost_scale;
        m_q = prob.lin * m_cost_scale;
        m_rows = n + static_cast<Eigen::Index>(prob.edges.size());
        m_row_lower.resize(m_rows);
        m_row_upper.resize(m_rows);
        m_row_lower.head(n) = prob.lower;
        m_row_upper.head(n) = prob.upper;
        m_row_lower.tail(m_rows - n).setConstant(-std::numeric_limits<double>::infinity());
        m_row_upper.tail(m_rows - n).setZero();
        m_is_equality.resize(m_rows);
        for (Eigen::Index i = 0; i < m_rows; i++)
            m_is_equality[i] = i < n && prob.lower[i] == prob.upper[i];
    }

    GatingQpResult solve(const Vector &x0, const Vector *y0 = nullptr, double rho0 = 0.0)
    {
        Vector x = x0.cwiseMax(m_prob.lower).cwiseMin(m_prob.upper);
        Vector y = Vector::Zero(m_rows);
        if (y0 && y0->size() == m_rows)
            y = *y0 * m_cost_scale;
        Vector z = apply_a(x);
        set_rho(rho0 > 0.0 ? rho0 : m_settings.rho);

        GatingQpResult res;
        double eps = m_settings.tolerance * 0.1;
        bool converged = false;
        int it = 0;
        // A converged iterate is polished and the polished point certified by
        // its duality gap; failing that, iterate on with a tighter tolerance.
        for (int round = 0; round < 4 && it < m_settings.max_iterations; round++, eps *= 0.01)
        {
            bool round_converged = false;
            for (; it < m_settings.max_iterations; it++)
            {
                step(x, z, y);
                const bool check = (it + 1) % m_settings.check_interval == 0 || it + 1 == m_settings.max_iterations;
                if (!check)
                    continue;
                const Vector ax = apply_a(x);
                const Vector aty = apply_at(y);
                const Vector px = m_p.cwiseProduct(x);
                const double r_prim = (ax - z).cwiseAbs().maxCoeff();
                const double r_dual = (px + m_q + aty).cwiseAbs().maxCoeff();
                const double prim_scale = std::max(ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff());
                const double dual_scale = std::max({px.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(),
                                                    m_q.cwiseAbs().maxCoeff()});
                res.primal_residual = r_prim;
                res.dual_residual = r_dual;
                if (r_prim <= eps * (1.0 + prim_scale) && r_dual <= eps * (1.0 + dual_scale))
                {
                    round_converged = true;
                    it++;
                    break;
                }
                if ((it + 1) % m_settings.adapt_interval == 0)
                {
                    const double ratio = std::sqrt((r_prim / std::max(prim_scale, 1e-30))
                                                   / std::max(r_dual / std::max(dual_scale, 1e-30), 1e-30));
                    const double new_rho = std::clamp(m_rho * ratio, 1e-6, 1e6);
                    if (new_rho > 5.0 * m_rho || new_rho < 0.2 * m_rho)
                        set_rho(new_rho);
                }
            }
            converged = converged || round_converged;
            if (!round_converged)
                break;
            if (!m_settings.polish)
                break;
            if (auto polished = polish(x, y))
            {
                const double obj = m_prob.objective(*polished);
                if (obj - dual_bound(y) <= 1e-10 * (1.0 + std::abs(obj)))
                {
                    res.g = *polished;
                    res.objective = obj;
                    res.polished = true;
                    break;
                }
            }
        }
        res.iterations = it;
        res.dual = y / m_cost_scale;
        res.rho = m_rho;
        if (!res.polished)
        {
            res.g = x.cwiseMax(m_prob.lower).cwiseMin(m_prob.upper);
            res.objective = m_prob.objective(res.g);
        }
        if (!converged && !res.polished)
        {
            std::ostringstream os;
            os << "gating QP did not converge in " << it << " iterations (primal residual " << res.primal_residual
               << ", dual residual " << res.dual_residual << ")";
            throw Error("qp_not_converged", os.str());
        }
        return res;
    }

    /// Lagrangian lower bound on the optimum for the edge multipliers in `y`
    /// (negative parts dropped); the box is kept as a hard constraint, which
    /// makes the inner minimization separable.
    double dual_bound(const Vector &y) const
    {
        const Eigen::Index n = m_prob.size();
        Vector lin = m_prob.lin;
        for (std::size_t e = 0; e < m_prob.edges.size(); e++)
        {
            const double mu = std::max(0.0, y[n + static_cast<Eigen::Index>(e)]) / m_cost_scale;
            lin[m_prob.edges[e].first] += mu;
            lin[m_prob.edges[e].second] -= mu;
        }
        double bound = 0.0;
        for (Eigen::Index i = 0; i < n; i++)
        {
            const double v = block_value(m_prob.quad[i], lin[i], m_prob.lower[i], m_prob.upper[i], m_prob.lower[i]);
            bound += m_prob.quad[i] * v * v + lin[i] * v;
        }
        return bound;
    }

private:
    void step(Vector &x, Vector &z, Vector &y) const
    {
        const Vector rhs = m_settings.sigma * x - m_q + apply_at(m_rho_vec.cwiseProduct(z) - y);
        const Vector x_tilde = m_ldlt.solve(rhs);
        const Vector z_tilde = apply_a(x_tilde);
        x = m_settings.relaxation * x_tilde + (1.0 - m_settings.relaxation) * x;
        const Vector z_hat = m_settings.relaxation * z_tilde + (1.0 - m_settings.relaxation) * z;
        z = (z_hat + y.cwiseQuotient(m_rho_vec)).cwiseMax(m_row_lower).cwiseMin(m_row_upper);
        y += m_rho_vec.cwiseProduct(z_hat - z);
    }

    Vector apply_a(const Vector &x) const
    {
        const Eigen::Index n = m_prob.size();
        Vector out(m_rows);
        out.head(n) = x;
        for (std::size_t e = 0; e < m_prob.edges.size(); e++)
            out[n + static_cast<Eigen::Index>(e)] = x[m_prob.edges[e].first] - x[m_prob.edges[e].second];
        return out;
    }

    Vector apply_at(const Vector &v) const
    {
        const Eigen::Index n = m_prob.size();
        Vector out = v.head(n);
        for (std::size_t e = 0; e < m_prob.edges.size(); e++)
        {
            const double w = v[n + static_cast<Eigen::Index>(e)];
            out[m_prob.edges[e].first] += w;
            out[m_prob.edges[e].second] -= w;
        }
        return out;
    }

    void set_rho(double rho)
    {
        const Eigen::Index n = m_prob.size();
        m_rho = rho;
        m_rho_vec.resize(m_rows);
        for (Eigen::Index i = 0; i < m_rows; i++)
            m_rho_vec[i] = m_is_equality[i] ? 1e3 * rho : rho;

        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(n + 4 * m_prob.edges.size());
        for (Eigen::Index i = 0; i < n; i++)
            trip.emplace_back(i, i, m_p[i] + m_settings.sigma + m_rho_vec[i]);
        for (const auto &[u, v] : m_prob.edges)
        {
            trip.emplace_back(u, u, rho);
            trip.emplace_back(v, v, rho);
            trip.emplace_back(u, v, -rho);
            trip.emplace_back(v, u, -rho);
        }
        Eigen::SparseMatrix<double> kkt(n, n);
        kkt.setFromTriplets(trip.begin(), trip.end());
        if (!m_analyzed)
        {
            m_ldlt.analyzePattern(kkt);
            m_analyzed = true;
        }
        m_ldlt.factorize(kkt);
        require(m_ldlt.info() == Eigen::Success, "qp_factorization", "gating QP factorization failed");
    }

    /// Merge variables joined by active order constraints and solve each block
    /// exactly; blocks that end up out of order are merged and re-solved.
    std::optional<Vector> polish(const Vector &x, const Vector &y) const
    {
        const Eigen::Index n = m_prob.size();
        DisjointSets sets(n);
        const double tight = 1e-7;
        for (std::size_t e = 0; e < m_prob.edges.size(); e++)
        {
            const auto [u, v] = m_prob.edges[e];
            const double slack = x[v] - x[u];
            if (y[n + static_cast<Eigen::Index>(e)] > slack || slack <= tight)
                sets.unite(u, v);
        }
        Vector out(n);
        for (Eigen::Index round = 0; round <= n; round++)
        {
            Vector quad = Vector::Zero(n), lin = Vector::Zero(n), sum_x = Vector::Zero(n), count = Vector::Zero(n);
            Vector lo = Vector::Constant(n, -std::numeric_limits<double>::infinity());
            Vector hi = Vector::Constant(n, std::numeric_limits<double>::infinity());
            for (Eigen::Index i = 0; i < n; i++)
            {
                const auto r = sets.find(static_cast<std::uint32_t>(i));
                quad[r] += m_prob.quad[i];
                lin[r] += m_prob.lin[i];
                sum_x[r] += x[i];
                count[r] += 1.0;
                lo[r] = std::max(lo[r], m_prob.lower[i]);
                hi[r] = std::min(hi[r], m_prob.upper[i]);
            }
            for (Eigen::Index i = 0; i < n; i++)
            {
                const auto r = sets.find(static_cast<std::uint32_t>(i));
                if (lo[r] > hi[r])
                    return std::nullopt;
                out[i] = block_value(quad[r], lin[r], lo[r], hi[r], sum_x[r] / count[r]);
            }
            bool violated = false;
            for (const auto &[u, v] : m_prob.edges)
                if (out[u] > out[v])
                {
                    sets.unite(u, v);
                    violated = true;
                }
            if (!violated)
                return out;
        }
        return std::nullopt;
    }

    const ClassProblem &m_prob;
    GatingQpSettings m_settings;
    double m_cost_scale = 1.0;
    Vector m_p;
    Vector m_q;
    Eigen::Index m_rows = 0;
    Vector m_row_lower;
    Vector m_row_upper;
    std::vector<bool> m_is_equality;
    double m_rho = 0.1;
    Vector m_rho_vec;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> m_ldlt;
    bool m_analyzed = false;
};

} // namespace detail

/// Solves the gating QP, optionally resuming ADMM from `warm`.
inline GatingQpResult solve_gating_qp_detailed(const GatingQpProblem &problem, const GatingQpSettings &settings = {},
        const GatingQpWarmStart *warm = nullptr)
{
    const Eigen::Index n = problem.c.size();
    require(problem.f_l.size() == n && problem.f_p.size() == n, "dimension_mismatch", "gating QP vectors differ in size");
    require(problem.dag.node_count == static_cast<std::size_t>(n), "dimension_mismatch",
            "order DAG does not match the number of samples");
    const Vector lower = problem.lower.size() ? problem.lower : Vector::Zero(n);
    const Vector upper = problem.upper.size() ? problem.upper : Vector::Ones(n);
    require(lower.size() == n && upper.size() == n, "dimension_mismatch", "bound vectors differ in size");

    GatingQpResult out;
    if (n == 0)
    {
        out.g = Vector(0);
        return out;
    }

    // Classes of variables forced equal.
    detail::DisjointSets sets(n);
    for (const auto &[u, v] : problem.dag.equalities)
    {
        require(u < n && v < n, "invalid_dag", "equality endpoint out of range");
        sets.unite(u, v);
    }
    std::vector<std::uint32_t> class_of(n);
    std::vector<std::uint32_t> root_to_class(n, ~0u);
    Eigen::Index classes = 0;
    for (Eigen::Index i = 0; i < n; i++)
    {
        const auto r = sets.find(static_cast<std::uint32_t>(i));
        if (root_to_class[r] == ~0u)
            root_to_class[r] = static_cast<std::uint32_t>(classes++);
        class_of[i] = root_to_class[r];
    }

    detail::ClassProblem prob;
    prob.quad = Vector::Zero(classes);
    prob.lin = Vector::Zero(classes);
    prob.lower = Vector::Constant(classes, -std::numeric_limits<double>::infinity());
    prob.upper = Vector::Constant(classes, std::numeric_limits<double>::infinity());
    const Vector a = problem.c - problem.f_p;
    const Vector b = problem.f_l - problem.f_p;
    for (Eigen::Index i = 0; i < n; i++)
    {
        const auto k = class_of[i];
        prob.quad[k] += b[i] * b[i];
        prob.lin[k] += -2.0 * a[i] * b[i] + problem.linear_coeff;
        prob.lower[k] = std::max(prob.lower[k], lower[i]);
        prob.upper[k] = std::min(prob.upper[k], upper[i]);
    }
    for (Eigen::Index k = 0; k < classes; k++)
        require(prob.lower[k] <= prob.upper[k], "infeasible_qp", "contradictory bounds on tied gating values");

    for (const auto &[u, v] : problem.dag.edges)
    {
        require(u < n && v < n, "invalid_dag", "edge endpoint out of range");
        const auto cu = class_of[u];
        const auto cv = class_of[v];
        if (cu != cv)
            prob.edges.emplace_back(cu, cv);
    }
    std::sort(prob.edges.begin(), prob.edges.end());
    prob.edges.erase(std::unique(prob.edges.begin(), prob.edges.end()), prob.edges.end());

    // Feasibility: push lower bounds along the order (g_u <= g_v lifts lower_v).
    OrderDag class_dag;
    class_dag.node_count = static_cast<std::size_t>(classes);
    class_dag.edges = prob.edges;
    const auto topo = topological_order(class_dag);
    {
        std::vector<std::vector<std::uint32_t>> succ(classes);
        for (const auto &[u, v] : prob.edges)
            succ[u].push_back(v);
        Vector lifted = prob.lower;
        for (const auto u : topo)
            for (const auto v : succ[u])
                lifted[v] = std::max(lifted[v], lifted[u]);
        for (Eigen::Index k = 0; k < classes; k++)
            require(lifted[k] <= prob.upper[k], "infeasible_qp", "order constraints conflict with the bounds");
    }

    Vector x0(classes);
    const Vector *warm_start = warm ? &warm->g : nullptr;
    if (warm_start && warm_start->size() == n)
    {
        Vector cnt = Vector::Zero(classes);
        x0.setZero();
        for (Eigen::Index i = 0; i < n; i++)
        {
            x0[class_of[i]] += (*warm_start)[i];
            cnt[class_of[i]] += 1.0;
        }
        x0 = x0.cwiseQuotient(cnt);
    } else
        x0.setConstant(0.5);

    detail::AdmmSolver solver(prob, settings);
    GatingQpResult cls = warm ? solver.solve(x0, &warm->dual, warm->rho) : solver.solve(x0);

    out.g.resize(n);
    for (Eigen::Index i = 0; i < n; i++)
        out.g[i] = cls.g[class_of[i]];
    out.iterations = cls.iterations;
    out.primal_residual = cls.primal_residual;
    out.dual_residual = cls.dual_residual;
    out.polished = cls.polished;
    out.dual = std::move(cls.dual);
    out.rho = cls.rho;
    out.objective = gating_objective(problem.f_l, problem.f_p, problem.c, problem.linear_coeff, out.g);
    return out;
}

inline Vector solve_gating_qp(const Vector &f_l, const Vector &f_p, const Vector &c, double linear_coeff,
        const OrderDag &dag, const GatingQpSettings &settings = {})
{
    GatingQpProblem p{f_l, f_p, c, linear_coeff, dag, {}, {}};
    return solve_gating_qp_detailed(p, settings).g;
}

} // namespace cgmoe
