#pragma once

// Hyperparameter selection and mixture-of-experts training.
//
// Training alternates two exact block minimizations of
//
//   J(f_l, f_p, g) = ||c - g.f_l - (1-g).f_p||^2
//                    + lambda_l 1'g O(f_l) + lambda_p 1'(1-g) O(f_p)
//
// (O = RKHS norm): the joint kernel-expert solve for fixed g, then the gating
// QP for fixed experts. Samples are the symmetric augmentation of the pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "cgmoe/error.hpp"
#include "cgmoe/features.hpp"
#include "cgmoe/gating.hpp"
#include "cgmoe/gating_qp.hpp"
#include "cgmoe/kernel.hpp"
#include "cgmoe/order_dag.hpp"
#include "cgmoe/rng.hpp"

namespace cgmoe {

inline std::vector<double> log_spaced(double lo, double hi, int count)
{
    std::vector<double> out(count);
    for (int i = 0; i < count; i++)
        out[i] = count == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
    return out;
}

struct CvConfig
{
    std::size_t fold_count = 5;
    std::vector<double> lambda_grid = log_spaced(1e-6, 1e1, 8);
    /// Kernel widths as multiples of the median pairwise input distance.
    std::vector<double> sigma_factors = log_spaced(1.0 / 32.0, 4.0, 8);
    /// Absolute widths; overrides sigma_factors when non-empty.
    std::vector<double> sigma_grid;
    std::uint64_t seed = 0;

    void validate() const
    {
        require(fold_count >= 2, "invalid_config", "fold_count must be at least 2");
        require(!lambda_grid.empty(), "invalid_config", "lambda grid is empty");
        require(!sigma_grid.empty() || !sigma_factors.empty(), "invalid_config", "sigma grid is empty");
        for (double v : lambda_grid)
            require(v > 0.0, "invalid_config", "lambda grid values must be positive");
        for (double v : sigma_grid)
            require(v > 0.0, "invalid_config", "sigma grid values must be positive");
        for (double v : sigma_factors)
            require(v > 0.0, "invalid_config", "sigma factors must be positive");
    }
};

struct MoEHyperparams
{
    ExpertHyperparams locb;  // (lambda_l, sigma_l)
    ExpertHyperparams locf;  // (lambda_p, sigma_p)
};

struct TrainOptions
{
    int max_sweeps = 200;
    double tolerance = 1e-6;
    int knn_k = default_knn_k;
    /// Holds every free gating value at this constant instead of solving for it.
    std::optional<double> frozen_gating;
    GatingQpSettings qp;
    double monotone_slack = 1e-9;
};

struct MoEModel
{
    KernelExpert locb;
    KernelExpert locf;
    GatingSolution gating;
    MoEHyperparams hyperparams;
    std::vector<double> objective_trace;
    int sweeps = 0;
    bool converged = false;
    int rejected_gating_steps = 0;
    std::string environment_fingerprint;
};

// ---------------------------------------------------------------------------
// Inputs

inline bool has_locb_input(const SensorRecord &a, const SensorRecord &b) { return a.has_location() && b.has_location(); }
inline bool has_locf_input(const SensorRecord &a, const SensorRecord &b)
{
    return a.has_complete_features() && b.has_complete_features();
}

inline std::vector<double> locb_input(const SensorRecord &t, const SensorRecord &r)
{
    return {t.location_estimate->x, t.location_estimate->y, r.location_estimate->x, r.location_estimate->y};
}

inline std::vector<double> locf_input(const SensorRecord &t, const SensorRecord &r)
{
    std::vector<double> z(t.features);
    z.insert(z.end(), r.features.begin(), r.features.end());
    return z;
}

inline std::vector<double> expert_input(ExpertKind kind, const SensorRecord &t, const SensorRecord &r)
{
    return kind == ExpertKind::locb ? locb_input(t, r) : locf_input(t, r);
}

inline bool has_expert_input(ExpertKind kind, const SensorRecord &t, const SensorRecord &r)
{
    return kind == ExpertKind::locb ? has_locb_input(t, r) : has_locf_input(t, r);
}

/// Each sample followed by its tx/rx-swapped counterpart.
inline std::vector<PairSample> augment_symmetric(const std::vector<PairSample> &pairs)
{
    std::vector<PairSample> out;
    out.reserve(2 * pairs.size());
    for (const auto &p : pairs)
    {
        out.push_back(p);
        PairSample q = p;
        std::swap(q.tx, q.rx);
        q.error_pair = {p.error_pair[1], p.error_pair[0]};
        out.push_back(q);
    }
    return out;
}

namespace detail {

inline void check_pairs(const std::vector<SensorRecord> &records, const std::vector<PairSample> &pairs)
{
    for (const auto &p : pairs)
        require(p.tx < records.size() && p.rx < records.size(), "invalid_dataset", "pair index out of range");
}

/// Input rows and targets of the pairs usable by an expert of `kind`.
inline std::pair<Matrix, Vector> expert_training_set(const std::vector<SensorRecord> &records,
        const std::vector<PairSample> &pairs, ExpertKind kind)
{
    check_pairs(records, pairs);
    std::vector<const PairSample *> usable;
    for (const auto &p : pairs)
        if (has_expert_input(kind, records[p.tx], records[p.rx]))
            usable.push_back(&p);
    require(!usable.empty(), "insufficient_data", std::string("no pairs usable by the ") + to_string(kind) + " expert");
    const auto first = expert_input(kind, records[usable[0]->tx], records[usable[0]->rx]);
    Matrix x(static_cast<Eigen::Index>(usable.size()), static_cast<Eigen::Index>(first.size()));
    Vector y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); i++)
    {
        const auto z = expert_input(kind, records[usable[i]->tx], records[usable[i]->rx]);
        for (Eigen::Index d = 0; d < x.cols(); d++)
            x(i, d) = z[d];
        y[i] = usable[i]->observed_gain;
    }
    return {x, y};
}

} // namespace detail

/// Median Euclidean distance between distinct rows (at most 1500 rows, evenly strided).
inline double median_pairwise_distance(const Matrix &x)
{
    const Eigen::Index n = x.rows();
    require(n >= 2, "insufficient_data", "need at least two inputs for a distance heuristic");
    const Eigen::Index stride = std::max<Eigen::Index>(1, n / 1500);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; i += stride)
        rows.push_back(i);
    std::vector<double> d;
    d.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t a = 0; a < rows.size(); a++)
        for (std::size_t b = a + 1; b < rows.size(); b++)
            d.push_back((x.row(rows[a]) - x.row(rows[b])).norm());
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    require(*mid > 0.0, "insufficient_data", "median pairwise distance is zero");
    return *mid;
}

struct CvResult
{
    ExpertHyperparams best;
    std::vector<double> lambdas;
    std::vector<double> sigmas;
    Matrix errors;  // (lambda index, sigma index) -> mean held-out squared error
};

/// K-fold grid search for a standalone KRR expert minimizing
/// (1/N)||y - K a||^2 + lambda a'K a. Ties go to larger lambda, then larger sigma.
inline CvResult select_hyperparams(const Matrix &x, const Vector &y, const std::vector<double> &lambdas,
        const std::vector<double> &sigmas, std::size_t folds, std::uint64_t seed)
{
    const Eigen::Index n = x.rows();
    require(folds >= 2, "invalid_config", "fold_count must be at least 2");
    require(n >= static_cast<Eigen::Index>(folds), "insufficient_data", "fewer samples than CV folds");
    require(!lambdas.empty() && !sigmas.empty(), "invalid_config", "empty hyperparameter grid");

    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, {stream::cv_folds}));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<Eigen::Index>> train(folds), test(folds);
    std::vector<std::size_t> fold_of(n);
    for (Eigen::Index i = 0; i < n; i++)
        fold_of[perm[i]] = static_cast<std::size_t>(i) % folds;
    for (Eigen::Index i = 0; i < n; i++)
        for (std::size_t f = 0; f < folds; f++)
            (fold_of[i] == f ? test[f] : train[f]).push_back(i);

    CvResult res;
    res.lambdas = lambdas;
    res.sigmas = sigmas;
    res.errors = Matrix::Constant(static_cast<Eigen::Index>(lambdas.size()), static_cast<Eigen::Index>(sigmas.size()),
            std::numeric_limits<double>::infinity());
    for (std::size_t si = 0; si < sigmas.size(); si++)
    {
        const Matrix k = kernel_matrix(x, sigmas[si]);
        std::vector<double> sse(lambdas.size(), 0.0);
        std::vector<bool> failed(lambdas.size(), false);
        for (std::size_t f = 0; f < folds; f++)
        {
            const Matrix k_tr = k(train[f], train[f]);
            const Matrix k_te = k(test[f], train[f]);
            const Vector y_tr = y(train[f]);
            const Vector y_te = y(test[f]);
            for (std::size_t li = 0; li < lambdas.size(); li++)
            {
                if (failed[li])
                    continue;
                try
                {
                    const Vector a = krr_fit(k_tr, y_tr, lambdas[li] * static_cast<double>(train[f].size()));
                    const double e = (k_te * a - y_te).squaredNorm();
                    if (!std::isfinite(e))
                        failed[li] = true;
                    sse[li] += e;
                } catch (const Error &)
                {
                    failed[li] = true;
                }
            }
        }
        for (std::size_t li = 0; li < lambdas.size(); li++)
            if (!failed[li])
                res.errors(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(si)) = sse[li] / static_cast<double>(n);
    }

    // Visit larger lambda first, then larger sigma; strict improvement wins.
    std::vector<std::size_t> li_order(lambdas.size()), si_order(sigmas.size());
    std::iota(li_order.begin(), li_order.end(), 0);
    std::iota(si_order.begin(), si_order.end(), 0);
    std::stable_sort(li_order.begin(), li_order.end(), [&](auto a, auto b) { return lambdas[a] > lambdas[b]; });
    std::stable_sort(si_order.begin(), si_order.end(), [&](auto a, auto b) { return sigmas[a] > sigmas[b]; });
    double best = std::numeric_limits<double>::infinity();
    for (const auto li : li_order)
        for (const auto si : si_order)
        {
            const double e = res.errors(static_cast<Eigen::Index>(li), static_cast<Eigen::Index>(si));
            if (e < best)
            {
                best = e;
                res.best = {lambdas[li], sigmas[si]};
            }
        }
    require(std::isfinite(best), "cv_failed", "every cross-validation fold was degenerate");
    return res;
}

inline std::vector<double> sigma_grid_for(const Matrix &x, const CvConfig &cfg)
{
    if (!cfg.sigma_grid.empty())
        return cfg.sigma_grid;
    const double median = median_pairwise_distance(x);
    std::vector<double> out;
    for (const double f : cfg.sigma_factors)
        out.push_back(f * median);
    return out;
}

/// CV grid search over (lambda, sigma) for a standalone expert of `kind`,
/// on the raw (non-augmented) pairs usable by that expert.
inline CvResult cv_grid_search_detailed(const std::vector<SensorRecord> &records, const std::vector<PairSample> &pairs,
        ExpertKind kind, const CvConfig &cfg)
{
    cfg.validate();
    const auto [x, y] = detail::expert_training_set(records, pairs, kind);
    return select_hyperparams(x, y, cfg.lambda_grid, sigma_grid_for(x, cfg), cfg.fold_count, cfg.seed);
}

inline ExpertHyperparams cv_grid_search(const std::vector<SensorRecord> &records, const std::vector<PairSample> &pairs,
        ExpertKind kind, const CvConfig &cfg)
{
    return cv_grid_search_detailed(records, pairs, kind, cfg).best;
}

/// Standalone KRR expert on the symmetric augmentation of the usable pairs,
/// with ridge lambda * N as in the per-sample-normalized objective.
inline KernelExpert train_standalone_expert(const std::vector<SensorRecord> &records,
        const std::vector<PairSample> &pairs, ExpertKind kind, const ExpertHyperparams &hp)
{
    hp.validate();
    const auto [x, y] = detail::expert_training_set(records, augment_symmetric(pairs), kind);
    KernelExpert e;
    e.kind = kind;
    e.hyperparams = hp;
    e.inputs = x;
    e.coefficients = krr_fit(kernel_matrix(x, hp.width), y, hp.ridge * static_cast<double>(x.rows()));
    return e;
}

/// J(f_l, f_p, g) with O_l, O_p the RKHS norms of the two experts.
inline double eval_objective(const Vector &c, const Vector &f_l, const Vector &f_p, const Vector &g, double lambda_l,
        double lambda_p, double omega_l, double omega_p)
{
    require(f_l.size() == c.size() && f_p.size() == c.size() && g.size() == c.size(), "dimension_mismatch",
            "objective vectors differ in size");
    const Vector fit = c - g.cwiseProduct(f_l) - (Vector::Ones(c.size()) - g).cwiseProduct(f_p);
    return fit.squaredNorm() + lambda_l * g.sum() * omega_l
            + lambda_p * (static_cast<double>(c.size()) - g.sum()) * omega_p;
}

/// Block-coordinate training of the mixture for fixed hyperparameters.
inline MoEModel train_moe(const std::vector<SensorRecord> &records, const std::vector<PairSample> &pairs,
        const MoEHyperparams &hp, const TrainOptions &opt = {})
{
    hp.locb.validate();
    hp.locf.validate();
    detail::check_pairs(records, pairs);
    require(opt.knn_k >= 1, "invalid_config", "knn_k must be positive");
    require(!opt.frozen_gating || (*opt.frozen_gating >= 0.0 && *opt.frozen_gating <= 1.0), "invalid_config",
            "frozen gating value must lie in [0, 1]");

    // Samples with only one modality get a fixed gate (1: LocB only, 0: LocF only).
    std::vector<PairSample> samples;
    for (const auto &p : augment_symmetric(pairs))
        if (has_locb_input(records[p.tx], records[p.rx]) || has_locf_input(records[p.tx], records[p.rx]))
            samples.push_back(p);
    const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
    require(n > 0, "insufficient_data", "no trainable pairs");

    const std::size_t m = records.front().features.size();
    Matrix x_l = Matrix::Zero(n, 4);
    Matrix x_p = Matrix::Zero(n, static_cast<Eigen::Index>(2 * m));
    Vector c(n), g(n);
    std::vector<bool> has_l(n), has_p(n);
    std::vector<Eigen::Index> free;
    std::vector<ErrorPair> free_errors;
    for (Eigen::Index i = 0; i < n; i++)
    {
        const auto &t = records[samples[i].tx];
        const auto &r = records[samples[i].rx];
        has_l[i] = has_locb_input(t, r);
        has_p[i] = has_locf_input(t, r);
        c[i] = samples[i].observed_gain;
        if (has_l[i])
        {
            const auto z = locb_input(t, r);
            for (int d = 0; d < 4; d++)
                x_l(i, d) = z[d];
        }
        if (has_p[i])
        {
            const auto z = locf_input(t, r);
            require(z.size() == 2 * m, "invalid_dataset", "records disagree on feature count");
            for (std::size_t d = 0; d < z.size(); d++)
                x_p(i, static_cast<Eigen::Index>(d)) = z[d];
        }
        if (has_l[i] && has_p[i])
        {
            free.push_back(i);
            free_errors.push_back(canonical_error(samples[i].error_pair));
            g[i] = opt.frozen_gating.value_or(0.5);
        } else
            g[i] = has_l[i] ? 1.0 : 0.0;
    }
    require(!free.empty(), "insufficient_data", "no pairs carry both location estimates and complete features");

    const Matrix k_l = kernel_matrix(x_l, hp.locb.width);
    const Matrix k_p = kernel_matrix(x_p, hp.locf.width);
    const double lambda_l = hp.locb.ridge;
    const double lambda_p = hp.locf.ridge;

    const OrderDag dag = transitive_reduction(build_order_dag(free_errors));
    const Eigen::Index nf = static_cast<Eigen::Index>(free.size());

    MoEModel model;
    model.hyperparams = hp;
    auto push = [&](double value) {
        if (!model.objective_trace.empty())
        {
            const double prev = model.objective_trace.back();
            if (value > prev * (1.0 + opt.monotone_slack) + 1e-12)
            {
                std::ostringstream os;
                os.precision(17);
                os << "objective increased from " << prev << " to " << value;
                throw Error("invariant_breach", os.str());
            }
        }
        model.objective_trace.push_back(value);
    };
    push(c.squaredNorm());

    JointCoefficients alpha;
    Vector f_l, f_p;
    double omega_l = 0.0, omega_p = 0.0;
    double sweep_start = model.objective_trace.back();
    GatingQpWarmStart qp_warm;
    for (int sweep = 1; sweep <= opt.max_sweeps; sweep++)
    {
        model.sweeps = sweep;
        alpha = joint_expert_solve(k_l, k_p, g, c, lambda_l, lambda_p);
        f_l = k_l * alpha.locb;
        f_p = k_p * alpha.locf;
        omega_l = rkhs_norm_sq(k_l, alpha.locb);
        omega_p = rkhs_norm_sq(k_p, alpha.locf);
        const double after_experts = eval_objective(c, f_l, f_p, g, lambda_l, lambda_p, omega_l, omega_p);
        push(after_experts);

        if (!opt.frozen_gating)
        {
            GatingQpProblem qp;
            qp.f_l = f_l(free);
            qp.f_p = f_p(free);
            qp.c = c(free);
            qp.linear_coeff = lambda_l * omega_l - lambda_p * omega_p;
            qp.dag = dag;
            qp_warm.g = g(free);
            const GatingQpResult sol = solve_gating_qp_detailed(qp, opt.qp, &qp_warm);
            qp_warm.dual = sol.dual;
            qp_warm.rho = sol.rho;
            Vector g_new = g;
            for (Eigen::Index k = 0; k < nf; k++)
                g_new[free[k]] = sol.g[k];
            const double after_gating = eval_objective(c, f_l, f_p, g_new, lambda_l, lambda_p, omega_l, omega_p);
            // An inexact QP answer that is worse than the current gate is discarded.
            if (after_gating <= after_experts + 1e-12 * std::abs(after_experts))
            {
                g = g_new;
                push(after_gating);
            } else
            {
                model.rejected_gating_steps++;
                push(after_experts);
            }
        }

        const double now = model.objective_trace.back();
        if (std::abs(sweep_start - now) <= opt.tolerance * std::abs(sweep_start))
        {
            model.converged = true;
            break;
        }
        sweep_start = now;
    }

    auto build_expert = [&](ExpertKind kind, const Matrix &x, const Vector &a, const std::vector<bool> &has,
                                const ExpertHyperparams &ehp) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; i++)
            if (has[i] && a[i] != 0.0)
                rows.push_back(i);
        KernelExpert e;
        e.kind = kind;
        e.hyperparams = ehp;
        e.inputs = x(rows, Eigen::all);
        e.coefficients = a(rows);
        return e;
    };
    model.locb = build_expert(ExpertKind::locb, x_l, alpha.locb, has_l, hp.locb);
    model.locf = build_expert(ExpertKind::locf, x_p, alpha.locf, has_p, hp.locf);

    std::vector<double> g_free(nf);
    for (Eigen::Index k = 0; k < nf; k++)
        g_free[k] = g[free[k]];
    model.gating = make_gating_solution(std::move(g_free), free_errors, opt.knn_k);
    return model;
}

struct MoEPrediction
{
    double value = 0.0;
    std::optional<double> locb;  // f_l
    std::optional<double> locf;  // f_p
    double gate = 0.0;           // weight on f_l
};

inline MoEPrediction predict_cg_detailed(const MoEModel &model, const SensorRecord &t, const SensorRecord &r)
{
    const bool loc = has_locb_input(t, r);
    const bool feat = has_locf_input(t, r);
    require(loc || feat, "unestimable_query", "unestimable query: neither location estimates nor features are complete");
    MoEPrediction p;
    if (loc)
        p.locb = expert_predict(model.locb, locb_input(t, r));
    if (feat)
        p.locf = expert_predict(model.locf, locf_input(t, r));
    if (!feat)
    {
        p.gate = 1.0;
        p.value = *p.locb;
    } else if (!loc)
    {
        p.gate = 0.0;
        p.value = *p.locf;
    } else
    {
        p.gate = gating_interpolate(model.gating, {*t.uncertainty, *r.uncertainty});
        p.value = p.gate * *p.locb + (1.0 - p.gate) * *p.locf;
    }
    return p;
}

inline double predict_cg(const MoEModel &model, const SensorRecord &t, const SensorRecord &r)
{
    return predict_cg_detailed(model, t, r).value;
}

/// Standalone expert prediction for a terminal pair.
inline double predict_expert(const KernelExpert &expert, const SensorRecord &t, const SensorRecord &r)
{
    require(has_expert_input(expert.kind, t, r), "unestimable_query",
            std::string("unestimable query for the ") + to_string(expert.kind) + " expert");
    return expert_predict(expert, expert_input(expert.kind, t, r));
}

} // namespace cgmoe
