#pragma once

// RBF kernels over paired inputs, kernel ridge regression, and the closed-form
// joint solve for the two kernel experts of the mixture.

#include <cmath>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "cgmoe/error.hpp"

namespace cgmoe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kernel_jitter = 1e-10;

struct ExpertHyperparams
{
    double ridge = 1e-3;  // lambda
    double width = 1.0;   // sigma

    void validate() const
    {
        require(ridge > 0.0 && std::isfinite(ridge), "invalid_hyperparams", "ridge weight must be positive");
        require(width > 0.0 && std::isfinite(width), "invalid_hyperparams", "kernel width must be positive");
    }
};

enum class ExpertKind
{
    locb,  // input [x_t; x_r]
    locf   // input [phi_t; phi_r]
};

inline const char* to_string(ExpertKind k) { return k == ExpertKind::locb ? "locb" : "locf"; }

/// Kernel expansion f(z) = sum_n alpha_n k(z, z_n). Rows of `inputs` are the z_n.
struct KernelExpert
{
    ExpertKind kind = ExpertKind::locb;
    Matrix inputs;
    Vector coefficients;
    ExpertHyperparams hyperparams;

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index dimension() const { return inputs.cols(); }
};

inline double squared_distance(std::span<const double> u, std::span<const double> v)
{
    double d2 = 0.0;
    for (std::size_t i = 0; i < u.size(); i++)
    {
        const double d = u[i] - v[i];
        d2 += d * d;
    }
    return d2;
}

inline double rbf_kernel(std::span<const double> u, std::span<const double> v, double width)
{
    require(u.size() == v.size(), "dimension_mismatch", "kernel arguments differ in dimension");
    require(width > 0.0, "invalid_argument", "kernel width must be positive");
    return std::exp(-squared_distance(u, v) / (2.0 * width * width));
}

namespace detail {

inline std::span<const double> row_span(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> &m,
        Eigen::Index i)
{
    return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

} // namespace detail

/// Gram matrix of the rows of `inputs`. Exactly symmetric with unit diagonal.
inline Matrix kernel_matrix(const Matrix &inputs, double width)
{
    require(inputs.rows() > 0, "invalid_argument", "kernel matrix needs at least one input");
    require(width > 0.0, "invalid_argument", "kernel width must be positive");
    const detail::RowMajor z = inputs;
    const Eigen::Index n = z.rows();
    const double scale = -1.0 / (2.0 * width * width);
    Matrix k(n, n);
    for (Eigen::Index j = 0; j < n; j++)
    {
        k(j, j) = 1.0;
        const auto zj = detail::row_span(z, j);
        for (Eigen::Index i = j + 1; i < n; i++)
        {
            const double v = std::exp(scale * squared_distance(detail::row_span(z, i), zj));
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

/// Cross kernel: result(i, j) = k(queries_i, inputs_j).
inline Matrix cross_kernel(const Matrix &queries, const Matrix &inputs, double width)
{
    require(queries.cols() == inputs.cols(), "dimension_mismatch", "query and input dimensions differ");
    const detail::RowMajor q = queries;
    const detail::RowMajor z = inputs;
    const double scale = -1.0 / (2.0 * width * width);
    Matrix k(q.rows(), z.rows());
    for (Eigen::Index j = 0; j < z.rows(); j++)
    {
        const auto zj = detail::row_span(z, j);
        for (Eigen::Index i = 0; i < q.rows(); i++)
            k(i, j) = std::exp(scale * squared_distance(detail::row_span(q, i), zj));
    }
    return k;
}

/// alpha = (K + ridge I)^-1 y, the minimizer of ||y - K alpha||^2 + ridge alpha' K alpha.
inline Vector krr_fit(const Matrix &k, const Vector &y, double ridge)
{
    require(ridge > 0.0, "invalid_argument", "ridge must be positive");
    require(k.rows() == k.cols() && k.rows() == y.size(), "dimension_mismatch", "kernel matrix and targets differ");
    Matrix a = k;
    a.diagonal().array() += ridge + kernel_jitter;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success)
        return llt.solve(y);
    Eigen::LDLT<Matrix> ldlt(a);
    require(ldlt.info() == Eigen::Success && ldlt.isPositive(), "singular_system",
            "kernel ridge system is not positive definite");
    return ldlt.solve(y);
}

/// RKHS norm alpha' K alpha.
inline double rkhs_norm_sq(const Matrix &k, const Vector &alpha) { return alpha.dot(k * alpha); }

inline double expert_predict(const KernelExpert &expert, std::span<const double> query)
{
    require(static_cast<Eigen::Index>(query.size()) == expert.dimension(), "dimension_mismatch",
            "query dimension does not match the expert inputs");
    require(expert.coefficients.size() == expert.size(), "invalid_model", "expert coefficient count mismatch");
    const double scale = -1.0 / (2.0 * expert.hyperparams.width * expert.hyperparams.width);
    double sum = 0.0;
    for (Eigen::Index n = 0; n < expert.size(); n++)
    {
        const double a = expert.coefficients[n];
        if (a == 0.0)
            continue;
        double d2 = 0.0;
        for (Eigen::Index i = 0; i < expert.dimension(); i++)
        {
            const double d = query[i] - expert.inputs(n, i);
            d2 += d * d;
        }
        sum += a * std::exp(scale * d2);
    }
    return sum;
}

struct JointCoefficients
{
    Vector locb;  // alpha_l
    Vector locf;  // alpha_p
};

/// Joint minimizer over (alpha_l, alpha_p), for fixed g, of
///
///   ||c - g.(K_l a_l) - (1-g).(K_p a_p)||^2
///     + lambda_l 1'g a_l'K_l a_l + lambda_p 1'(1-g) a_p'K_p a_p.
///
/// The 2N stationarity system is reduced through the residual
/// r = c - D K_l a_l - (I-D) K_p a_p: its rows give a_l = D r / (lambda_l 1'g)
/// and a_p = (I-D) r / (lambda_p 1'(1-g)), so r solves the N x N SPD system
///
///   (I + D K_l D / (lambda_l 1'g) + (I-D) K_p (I-D) / (lambda_p 1'(1-g))) r = c.
///
/// If 1'g = 0 (or 1'(1-g) = 0) the corresponding coefficients are zero.
inline JointCoefficients joint_expert_solve(const Matrix &k_l, const Matrix &k_p, const Vector &g, const Vector &c,
        double lambda_l, double lambda_p)
{
    const Eigen::Index n = c.size();
    require(k_l.rows() == n && k_l.cols() == n && k_p.rows() == n && k_p.cols() == n && g.size() == n,
            "dimension_mismatch", "joint solve inputs differ in size");
    require(lambda_l > 0.0 && lambda_p > 0.0, "invalid_argument", "ridge weights must be positive");
    require((g.array() >= 0.0).all() && (g.array() <= 1.0).all(), "invalid_argument", "g must lie in [0, 1]");

    const Vector h = Vector::Ones(n) - g;
    const double s_l = g.sum();
    const double s_p = h.sum();
    const bool use_l = s_l > 0.0;
    const bool use_p = s_p > 0.0;
    // Same diagonal jitter as krr_fit, so g = 1 or g = 0 reproduces it exactly.
    const double w_l = use_l ? 1.0 / (lambda_l * s_l + kernel_jitter) : 0.0;
    const double w_p = use_p ? 1.0 / (lambda_p * s_p + kernel_jitter) : 0.0;

    // Only the lower triangle is filled; LLT reads nothing else.
    Matrix m(n, n);
    const Vector gw = w_l * g;
    const Vector hw = w_p * h;
    for (Eigen::Index j = 0; j < n; j++)
    {
        const Eigen::Index len = n - j;
        m.col(j).tail(len) = gw[j] * g.tail(len).cwiseProduct(k_l.col(j).tail(len))
                + hw[j] * h.tail(len).cwiseProduct(k_p.col(j).tail(len));
        m(j, j) += 1.0;
    }

    Vector r;
    Eigen::LLT<Matrix, Eigen::Lower> llt(m);
    if (llt.info() == Eigen::Success)
        r = llt.solve(c);
    else
    {
        m.triangularView<Eigen::StrictlyUpper>() = Matrix(m.transpose());
        Eigen::FullPivLU<Matrix> lu(m);
        std::ostringstream os;
        os << "joint expert system is singular (rcond estimate " << lu.rcond() << ")";
        require(lu.isInvertible(), "singular_system", os.str());
        r = lu.solve(c);
    }
    JointCoefficients out;
    out.locb = use_l ? Vector((w_l * g.array() * r.array()).matrix()) : Vector::Zero(n);
    out.locf = use_p ? Vector((w_p * h.array() * r.array()).matrix()) : Vector::Zero(n);
    return out;
}

/// Same solution through the unreduced 2N x 2N block system, by LU with partial
/// pivoting. O(8 N^3); kept as a cross-check of the reduced path.
inline JointCoefficients joint_expert_solve_block(const Matrix &k_l, const Matrix &k_p, const Vector &g,
        const Vector &c, double lambda_l, double lambda_p)
{
    const Eigen::Index n = c.size();
    require(k_l.rows() == n && k_p.rows() == n && g.size() == n, "dimension_mismatch",
            "joint solve inputs differ in size");
    const Vector h = Vector::Ones(n) - g;
    const double s_l = g.sum();
    const double s_p = h.sum();
    JointCoefficients out{Vector::Zero(n), Vector::Zero(n)};
    if (!(s_p > 0.0))
    {
        out.locb = krr_fit(k_l, c, lambda_l * s_l);
        return out;
    }
    if (!(s_l > 0.0))
    {
        out.locf = krr_fit(k_p, c, lambda_p * s_p);
        return out;
    }
    const auto d = g.asDiagonal();
    const auto e = h.asDiagonal();
    Matrix a(2 * n, 2 * n);
    a.topLeftCorner(n, n) = e * (e * k_p);
    a.topLeftCorner(n, n).diagonal().array() += lambda_p * s_p;
    a.topRightCorner(n, n) = e * (d * k_l);
    a.bottomLeftCorner(n, n) = d * (e * k_p);
    a.bottomRightCorner(n, n) = d * (d * k_l);
    a.bottomRightCorner(n, n).diagonal().array() += lambda_l * s_l;
    Vector rhs(2 * n);
    rhs << e * c, d * c;
    Eigen::PartialPivLU<Matrix> lu(a);
    const Vector x = lu.solve(rhs);
    out.locf = x.head(n);
    out.locb = x.tail(n);
    return out;
}

/// Alternating per-expert KRR solves (LocB then LocF) repeated until the
/// coefficients stop moving. Each step is the exact minimizer of the joint
/// objective in one block.
inline JointCoefficients alternating_expert_solve(const Matrix &k_l, const Matrix &k_p, const Vector &g,
        const Vector &c, double lambda_l, double lambda_p, int max_iterations = 100000, double tolerance = 1e-12)
{
    const Eigen::Index n = c.size();
    const Vector h = Vector::Ones(n) - g;
    const double s_l = g.sum();
    const double s_p = h.sum();
    const auto d = g.asDiagonal();
    const auto e = h.asDiagonal();

    Matrix a_l = d * (d * k_l);
    a_l.diagonal().array() += lambda_l * s_l;
    Matrix a_p = e * (e * k_p);
    a_p.diagonal().array() += lambda_p * s_p;
    const Eigen::PartialPivLU<Matrix> lu_l(a_l);
    const Eigen::PartialPivLU<Matrix> lu_p(a_p);

    JointCoefficients x{Vector::Zero(n), Vector::Zero(n)};
    for (int it = 0; it < max_iterations; it++)
    {
        const Vector prev_l = x.locb;
        const Vector prev_p = x.locf;
        x.locb = lu_l.solve(Vector(d * (c - e * (k_p * x.locf))));
        x.locf = lu_p.solve(Vector(e * (c - d * (k_l * x.locb))));
        const double change = (x.locb - prev_l).norm() + (x.locf - prev_p).norm();
        const double scale = x.locb.norm() + x.locf.norm();
        if (change <= tolerance * std::max(1.0, scale))
            break;
    }
    return x;
}

} // namespace cgmoe
