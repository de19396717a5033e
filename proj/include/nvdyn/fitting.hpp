#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nvdyn/common.hpp"
#include "nvdyn/detail/linalg.hpp"

namespace nvdyn::fitting {

enum class ModelId {
    compressed_exp,        // y0 + A*(1 - exp(-(x/tau)^beta)), x >= 0
    exp_decay,             // y0 + A*exp(-x/tau)
    double_exp,            // y0 + A1*exp(-x/tau1) + A2*exp(-x/tau2), tau1 < tau2
    hyperbolic,            // tau0 + c/x, x > 0
    lorentzian_dip,        // y0*(1 - C*(G/2)^2 / ((x-f0)^2 + (G/2)^2))
    saturation_empirical,  // i_sat*x/(x+p_sat) + b*x
};

struct ModelSpec {
    ModelId id;
    std::string name;
    std::vector<std::string> param_names;
    bool analytic_jacobian;
};

inline const std::vector<ModelSpec>& all_models() {
    static const std::vector<ModelSpec> specs = {
        {ModelId::compressed_exp, "compressed_exp", {"y0", "A", "tau", "beta"}, true},
        {ModelId::exp_decay, "exp_decay", {"y0", "A", "tau"}, true},
        {ModelId::double_exp, "double_exp", {"y0", "A1", "tau1", "A2", "tau2"}, true},
        {ModelId::hyperbolic, "hyperbolic", {"tau0", "c"}, true},
        {ModelId::lorentzian_dip, "lorentzian_dip", {"y0", "contrast", "f0", "fwhm"}, true},
        {ModelId::saturation_empirical, "saturation_empirical", {"i_sat", "p_sat", "b"}, true},
    };
    return specs;
}

inline const ModelSpec& model_spec(ModelId id) {
    for (const auto& s : all_models())
        if (s.id == id) return s;
    throw DomainError("unknown model id");
}

inline const ModelSpec& model_spec(const std::string& name) {
    for (const auto& s : all_models())
        if (s.name == name) return s;
    throw DomainError("unknown model '" + name + "'");
}

inline std::size_t n_params(ModelId id) { return model_spec(id).param_names.size(); }

inline void check_params(ModelId id, const std::vector<double>& p) {
    if (p.size() != n_params(id)) throw DomainError("wrong parameter count for model");
    for (double v : p)
        if (!std::isfinite(v)) throw DomainError("non-finite model parameter");
    switch (id) {
        case ModelId::compressed_exp:
            if (p[2] <= 0.0) throw DomainError("compressed_exp: tau must be > 0");
            if (p[3] <= 0.0) throw DomainError("compressed_exp: beta must be > 0");
            break;
        case ModelId::exp_decay:
            if (p[2] <= 0.0) throw DomainError("exp_decay: tau must be > 0");
            break;
        case ModelId::double_exp:
            if (p[2] <= 0.0 || p[4] <= 0.0) throw DomainError("double_exp: taus must be > 0");
            break;
        case ModelId::hyperbolic:
            break;
        case ModelId::lorentzian_dip:
            if (p[3] <= 0.0) throw DomainError("lorentzian_dip: fwhm must be > 0");
            break;
        case ModelId::saturation_empirical:
            if (p[1] <= 0.0) throw DomainError("saturation_empirical: p_sat must be > 0");
            break;
    }
}

inline void check_x(ModelId id, double x) {
    switch (id) {
        case ModelId::compressed_exp:
            if (x < 0.0) throw DomainError("compressed_exp: x must be >= 0");
            break;
        case ModelId::hyperbolic:
            if (x <= 0.0) throw DomainError("hyperbolic: x must be > 0");
            break;
        default:
            break;
    }
    if (!std::isfinite(x)) throw DomainError("non-finite x");
}

inline double eval_model(ModelId id, const std::vector<double>& p, double x) {
    check_x(id, x);
    switch (id) {
        case ModelId::compressed_exp: {
            const double u = (x == 0.0) ? 0.0 : std::pow(x / p[2], p[3]);
            return p[0] + p[1] * (1.0 - std::exp(-u));
        }
        case ModelId::exp_decay:
            return p[0] + p[1] * std::exp(-x / p[2]);
        case ModelId::double_exp:
            return p[0] + p[1] * std::exp(-x / p[2]) + p[3] * std::exp(-x / p[4]);
        case ModelId::hyperbolic:
            return p[0] + p[1] / x;
        case ModelId::lorentzian_dip: {
            const double hw = 0.5 * p[3];
            const double d = (x - p[2]) * (x - p[2]) + hw * hw;
            return p[0] * (1.0 - p[1] * hw * hw / d);
        }
        case ModelId::saturation_empirical:
            return p[0] * x / (x + p[1]) + p[2] * x;
    }
    throw DomainError("unknown model id");
}

// One Jacobian row: dy/dp_k evaluated at x. out must have n_params entries.
inline void eval_jacobian_row(ModelId id, const std::vector<double>& p, double x, double* out) {
    check_x(id, x);
    switch (id) {
        case ModelId::compressed_exp: {
            const double u = (x == 0.0) ? 0.0 : std::pow(x / p[2], p[3]);
            const double e = std::exp(-u);
            out[0] = 1.0;
            out[1] = 1.0 - e;
            out[2] = (x == 0.0) ? 0.0 : -p[1] * e * u * p[3] / p[2];
            out[3] = (x == 0.0) ? 0.0 : p[1] * e * u * std::log(x / p[2]);
            return;
        }
        case ModelId::exp_decay: {
            const double e = std::exp(-x / p[2]);
            out[0] = 1.0;
            out[1] = e;
            out[2] = p[1] * e * x / (p[2] * p[2]);
            return;
        }
        case ModelId::double_exp: {
            const double e1 = std::exp(-x / p[2]);
            const double e2 = std::exp(-x / p[4]);
            out[0] = 1.0;
            out[1] = e1;
            out[2] = p[1] * e1 * x / (p[2] * p[2]);
            out[3] = e2;
            out[4] = p[3] * e2 * x / (p[4] * p[4]);
            return;
        }
        case ModelId::hyperbolic:
            out[0] = 1.0;
            out[1] = 1.0 / x;
            return;
        case ModelId::lorentzian_dip: {
            const double hw = 0.5 * p[3];
            const double dx = x - p[2];
            const double d = dx * dx + hw * hw;
            const double l = hw * hw / d;
            out[0] = 1.0 - p[1] * l;
            out[1] = -p[0] * l;
            out[2] = -p[0] * p[1] * 2.0 * hw * hw * dx / (d * d);
            out[3] = -p[0] * p[1] * hw * dx * dx / (d * d);
            return;
        }
        case ModelId::saturation_empirical: {
            const double s = x / (x + p[1]);
            out[0] = s;
            out[1] = -p[0] * x / ((x + p[1]) * (x + p[1]));
            out[2] = x;
            return;
        }
    }
    throw DomainError("unknown model id");
}

struct Dataset {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> sigma;  // empty = unweighted

    void validate(std::size_t min_points) const {
        if (x.size() != y.size()) throw DomainError("dataset: x/y length mismatch");
        if (!sigma.empty() && sigma.size() != x.size())
            throw DomainError("dataset: sigma length mismatch");
        if (x.size() < min_points) throw DomainError("dataset: too few points");
        for (double v : x)
            if (!std::isfinite(v)) throw DomainError("dataset: non-finite x");
        for (double v : y)
            if (!std::isfinite(v)) throw DomainError("dataset: non-finite y");
        for (double s : sigma)
            if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("dataset: sigma must be > 0");
    }
};

struct Bounds {
    std::vector<double> lo;  // empty = -inf
    std::vector<double> hi;  // empty = +inf
};

struct FitOptions {
    int max_iter = 200;
    double ftol = 1e-12;      // relative cost decrease
    double xtol = 1e-12;      // relative step size
    double lambda0 = 1e-3;    // initial damping
    bool numeric_jacobian = false;
};

struct FitResult {
    ModelId model;
    std::vector<std::string> param_names;
    std::vector<double> params;
    std::vector<double> std_errors;             // 0 for frozen parameters
    std::vector<std::vector<double>> covariance;  // n_params x n_params, frozen rows/cols zero
    double chi2 = 0.0;
    int dof = 0;
    bool converged = false;
    int n_iter = 0;
};

namespace detail_fit {

// Default box constraints keeping each model inside its domain.
inline Bounds domain_bounds(ModelId id) {
    const double inf = std::numeric_limits<double>::infinity();
    const double tiny = 1e-300;
    auto n = n_params(id);
    Bounds b;
    b.lo.assign(n, -inf);
    b.hi.assign(n, inf);
    switch (id) {
        case ModelId::compressed_exp: b.lo[2] = tiny; b.lo[3] = tiny; break;
        case ModelId::exp_decay: b.lo[2] = tiny; break;
        case ModelId::double_exp: b.lo[2] = tiny; b.lo[4] = tiny; break;
        case ModelId::lorentzian_dip: b.lo[3] = tiny; break;
        case ModelId::saturation_empirical: b.lo[1] = tiny; break;
        case ModelId::hyperbolic: break;
    }
    return b;
}

inline void numeric_jacobian_row(ModelId id, const std::vector<double>& p, double x,
                                 const Bounds& bounds, double* out) {
    std::vector<double> q = p;
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double h = 6e-6 * std::max(std::abs(p[k]), 1e-3);
        double hi = p[k] + h, lo = p[k] - h;
        hi = std::min(hi, bounds.hi[k]);
        lo = std::max(lo, bounds.lo[k]);
        q[k] = hi;
        const double f1 = eval_model(id, q, x);
        q[k] = lo;
        const double f0 = eval_model(id, q, x);
        q[k] = p[k];
        out[k] = (hi > lo) ? (f1 - f0) / (hi - lo) : 0.0;
    }
}

}  // namespace detail_fit

// The bounds lm_fit applies when none are given: the model's domain limits.
inline Bounds default_bounds(ModelId id) { return detail_fit::domain_bounds(id); }

// Bounded Levenberg-Marquardt least squares. Parameters with lo == hi are
// frozen at that value and excluded from the normal equations and dof.
// MaxIterReached is reported via converged = false, not an exception.
inline FitResult lm_fit(ModelId id, const Dataset& data, std::vector<double> init,
                        Bounds bounds = {}, const FitOptions& opts = {}) {
    const std::size_t np = n_params(id);
    const std::size_t n = data.x.size();
    check_params(id, init);

    Bounds dom = detail_fit::domain_bounds(id);
    if (bounds.lo.empty()) bounds.lo = dom.lo;
    if (bounds.hi.empty()) bounds.hi = dom.hi;
    if (bounds.lo.size() != np || bounds.hi.size() != np)
        throw DomainError("bounds length mismatch");
    for (std::size_t k = 0; k < np; ++k) {
        bounds.lo[k] = std::max(bounds.lo[k], dom.lo[k]);
        bounds.hi[k] = std::min(bounds.hi[k], dom.hi[k]);
        if (bounds.lo[k] > bounds.hi[k]) throw DomainError("bounds: lo > hi");
        init[k] = std::clamp(init[k], bounds.lo[k], bounds.hi[k]);
    }

    std::vector<std::size_t> free_idx;
    for (std::size_t k = 0; k < np; ++k)
        if (bounds.lo[k] < bounds.hi[k]) free_idx.push_back(k);
    const std::size_t nf = free_idx.size();

    data.validate(nf + 1);

    auto weight = [&](std::size_t i) {
        return data.sigma.empty() ? 1.0 : 1.0 / (data.sigma[i] * data.sigma[i]);
    };

    auto cost_of = [&](const std::vector<double>& p) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = data.y[i] - eval_model(id, p, data.x[i]);
            c += weight(i) * r * r;
        }
        return c;
    };

    std::vector<double> p = init;
    double cost = cost_of(p);

    std::vector<double> jrow(np);
    detail::Matrix a(nf * nf);
    std::vector<double> g(nf), delta(nf);

    auto build_normal = [&](const std::vector<double>& pt) {
        std::fill(a.begin(), a.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (opts.numeric_jacobian)
                detail_fit::numeric_jacobian_row(id, pt, data.x[i], bounds, jrow.data());
            else
                eval_jacobian_row(id, pt, data.x[i], jrow.data());
            const double w = weight(i);
            const double r = data.y[i] - eval_model(id, pt, data.x[i]);
            for (std::size_t aa = 0; aa < nf; ++aa) {
                const double ja = jrow[free_idx[aa]];
                g[aa] += w * ja * r;
                for (std::size_t bb = 0; bb <= aa; ++bb)
                    detail::at(a, nf, aa, bb) += w * ja * jrow[free_idx[bb]];
            }
        }
        for (std::size_t aa = 0; aa < nf; ++aa)
            for (std::size_t bb = aa + 1; bb < nf; ++bb)
                detail::at(a, nf, aa, bb) = detail::at(a, nf, bb, aa);
    };

    double lambda = opts.lambda0;
    bool converged = false;
    int iter = 0;

    if (nf == 0) converged = true;  // everything frozen: nothing to optimize

    while (!converged && iter < opts.max_iter) {
        ++iter;
        build_normal(p);

        // Structurally zero columns mean unidentifiable parameters.
        for (std::size_t aa = 0; aa < nf; ++aa)
            if (detail::at(a, nf, aa, aa) == 0.0 && g[aa] == 0.0)
                throw SingularJacobian("zero Jacobian column for parameter '" +
                                       model_spec(id).param_names[free_idx[aa]] + "'");

        // Jacobi scaling gives the damped system a unit diagonal, so the
        // pivot tolerance is meaningful even when parameter magnitudes span
        // many decades (tau in seconds next to counts-per-second amplitudes).
        std::vector<double> s(nf);
        for (std::size_t aa = 0; aa < nf; ++aa)
            s[aa] = std::sqrt(detail::at(a, nf, aa, aa));

        bool stepped = false;
        while (!stepped) {
            detail::Matrix damped(nf * nf);
            for (std::size_t aa = 0; aa < nf; ++aa)
                for (std::size_t bb = 0; bb < nf; ++bb)
                    detail::at(damped, nf, aa, bb) =
                        detail::at(a, nf, aa, bb) / (s[aa] * s[bb]);
            for (std::size_t aa = 0; aa < nf; ++aa)
                detail::at(damped, nf, aa, aa) = 1.0 + lambda;
            for (std::size_t aa = 0; aa < nf; ++aa) delta[aa] = g[aa] / s[aa];
            detail::Matrix fac = damped;
            if (!detail::cholesky(fac, nf)) {
                lambda *= 10.0;
                if (lambda > 1e14) throw SingularJacobian("normal equations singular");
                continue;
            }
            detail::cholesky_solve(fac, nf, delta);
            for (std::size_t aa = 0; aa < nf; ++aa) delta[aa] /= s[aa];

            std::vector<double> trial = p;
            double max_rel_step = 0.0;
            for (std::size_t aa = 0; aa < nf; ++aa) {
                const std::size_t k = free_idx[aa];
                trial[k] = std::clamp(p[k] + delta[aa], bounds.lo[k], bounds.hi[k]);
                max_rel_step = std::max(max_rel_step,
                                        std::abs(trial[k] - p[k]) / (std::abs(p[k]) + opts.xtol));
            }

            double trial_cost;
            try {
                trial_cost = cost_of(trial);
            } catch (const DomainError&) {
                trial_cost = std::numeric_limits<double>::infinity();
            }

            if (std::isfinite(trial_cost) && trial_cost <= cost) {
                // Accepted steps must never increase the cost; anything else is
                // an engine bug, not a data property.
                if (trial_cost > cost * (1.0 + 1e-12))
                    throw std::logic_error("lm_fit: accepted step increased cost");
                const double drop = cost - trial_cost;
                p = trial;
                const bool fsmall = drop <= opts.ftol * std::max(cost, 1e-300);
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (fsmall || max_rel_step < opts.xtol) converged = true;
            } else {
                lambda *= 4.0;
                if (lambda > 1e14) {
                    // Cannot improve in any direction: accept current point.
                    converged = true;
                    stepped = true;
                }
            }
        }
    }

    // Canonical ordering for double_exp: tau1 <= tau2.
    if (id == ModelId::double_exp && p[2] > p[4]) {
        std::swap(p[1], p[3]);
        std::swap(p[2], p[4]);
    }

    FitResult res;
    res.model = id;
    res.param_names = model_spec(id).param_names;
    res.params = p;
    res.n_iter = iter;
    res.converged = converged;
    res.chi2 = cost_of(p);
    res.dof = static_cast<int>(n) - static_cast<int>(nf);

    // Covariance from the unscaled normal equations at the solution. Without
    // per-point sigmas the covariance is scaled by chi2/dof (noise estimated
    // from the residuals).
    res.std_errors.assign(np, 0.0);
    res.covariance.assign(np, std::vector<double>(np, 0.0));
    if (nf > 0) {
        build_normal(p);
        std::vector<double> s(nf, 1.0);
        detail::Matrix fac(nf * nf, 0.0);
        for (std::size_t aa = 0; aa < nf; ++aa) {
            const double d = detail::at(a, nf, aa, aa);
            s[aa] = d > 0.0 ? std::sqrt(d) : 1.0;
        }
        for (std::size_t aa = 0; aa < nf; ++aa)
            for (std::size_t bb = 0; bb < nf; ++bb)
                detail::at(fac, nf, aa, bb) = detail::at(a, nf, aa, bb) / (s[aa] * s[bb]);
        if (detail::cholesky(fac, nf)) {
            detail::Matrix cov = detail::cholesky_inverse(fac, nf);
            double scale = 1.0;
            if (data.sigma.empty() && res.dof > 0) scale = res.chi2 / res.dof;
            for (std::size_t aa = 0; aa < nf; ++aa)
                for (std::size_t bb = 0; bb < nf; ++bb)
                    res.covariance[free_idx[aa]][free_idx[bb]] =
                        scale * detail::at(cov, nf, aa, bb) / (s[aa] * s[bb]);
            for (std::size_t aa = 0; aa < nf; ++aa) {
                const double v = res.covariance[free_idx[aa]][free_idx[aa]];
                res.std_errors[free_idx[aa]] = v > 0.0 ? std::sqrt(v) : 0.0;
            }
        }
    }
    return res;
}

// Max relative deviation between the analytic Jacobian and central finite
// differences over the given x grid, normalized per row by its largest entry.
// Returns 0 for models without an analytic Jacobian (nothing to compare).
inline double jacobian_check(ModelId id, const std::vector<double>& params,
                             const std::vector<double>& xs) {
    check_params(id, params);
    if (!model_spec(id).analytic_jacobian) return 0.0;
    const std::size_t np = n_params(id);
    std::vector<double> ja(np), jn(np);
    Bounds dom = detail_fit::domain_bounds(id);
    double worst = 0.0;
    for (double x : xs) {
        eval_jacobian_row(id, params, x, ja.data());
        detail_fit::numeric_jacobian_row(id, params, x, dom, jn.data());
        double scale = 0.0;
        for (std::size_t k = 0; k < np; ++k)
            scale = std::max({scale, std::abs(ja[k]), std::abs(jn[k])});
        if (scale == 0.0) continue;
        for (std::size_t k = 0; k < np; ++k)
            worst = std::max(worst, std::abs(ja[k] - jn[k]) / scale);
    }
    return worst;
}

}  // namespace nvdyn::fitting
