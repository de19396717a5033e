#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "nvdyn/common.hpp"
#include "nvdyn/trace_sim.hpp"

namespace nvdyn::inference {

using trace_sim::PhotonTrace;

struct PoissonHmm {
    std::array<double, 2> initial_prob{0.5, 0.5};
    std::array<std::array<double, 2>, 2> transition{{{1.0, 0.0}, {0.0, 1.0}}};
    std::array<double, 2> lambda{0.0, 1.0};  // counts per bin, dark then bright

    void validate() const {
        for (int i = 0; i < 2; ++i) {
            double row = 0.0;
            for (int j = 0; j < 2; ++j) {
                if (!(transition[i][j] >= 0.0)) throw DomainError("transition entries must be >= 0");
                row += transition[i][j];
            }
            if (std::abs(row - 1.0) > 1e-12) throw DomainError("transition rows must sum to 1");
        }
        if (!(initial_prob[0] >= 0.0) || !(initial_prob[1] >= 0.0) ||
            std::abs(initial_prob[0] + initial_prob[1] - 1.0) > 1e-12)
            throw DomainError("initial_prob must be a distribution");
        if (!(lambda[0] >= 0.0) || !(lambda[0] < lambda[1]))
            throw DomainError("need 0 <= lambda_dark < lambda_bright");
    }
};

struct PosteriorResult {
    std::vector<std::array<double, 2>> gamma;
    double log_likelihood = 0.0;
};

struct ViterbiResult {
    std::vector<int> path;
    double log_prob = 0.0;
};

struct BaumWelchResult {
    PoissonHmm hmm;
    std::vector<double> ll_history;
    bool converged = false;
    // Set when the fitted emission levels collapse onto each other; the
    // two-state labels mean nothing in that case.
    bool degenerate_lambdas = false;
};

struct MixtureFit {
    double lambda_dark = 0.0;
    double lambda_bright = 0.0;
    double weight_bright = 0.0;
    double log_likelihood = 0.0;
    // Bhattacharyya coefficient of the two Poisson components; 1 means
    // indistinguishable peaks, 0 means fully separated.
    double overlap = 0.0;
};

struct OccupancySeries {
    double window = 0.0;            // s (effective: an integer number of bins)
    std::vector<double> times;      // window centers, s
    std::vector<double> p_bright;
};

namespace detail_inf {

inline double log_poisson_pmf(long k, double lambda) {
    if (lambda <= 0.0) return k == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
    const double kk = static_cast<double>(k);
    return kk * std::log(lambda) - lambda - std::lgamma(kk + 1.0);
}

// exp-normalized emission likelihoods for one bin, scaled so the max is 1.
inline std::array<double, 2> emission_row(long k, const std::array<double, 2>& lambda,
                                          double& log_scale) {
    const double l0 = log_poisson_pmf(k, lambda[0]);
    const double l1 = log_poisson_pmf(k, lambda[1]);
    const double m = std::max(l0, l1);
    if (!std::isfinite(m)) throw NumericalUnderflow("emission probability vanished in both states");
    log_scale = m;
    return {std::exp(l0 - m), std::exp(l1 - m)};
}

}  // namespace detail_inf

// Scaled forward-backward. Per-bin scaling keeps everything in [0,1], so
// traces of any length stay finite; the log-likelihood accumulates the
// scale factors.
inline PosteriorResult forward_backward(const PoissonHmm& hmm, const PhotonTrace& trace) {
    hmm.validate();
    trace.validate();
    const std::size_t n = trace.counts.size();
    if (n == 0) throw DomainError("empty trace");

    std::vector<std::array<double, 2>> alpha(n), beta(n);
    std::vector<double> scale(n);
    double ll = 0.0;

    for (std::size_t t = 0; t < n; ++t) {
        double log_em_scale = 0.0;
        const auto em = detail_inf::emission_row(trace.counts[t], hmm.lambda, log_em_scale);
        std::array<double, 2> a{};
        if (t == 0) {
            for (int s = 0; s < 2; ++s) a[s] = hmm.initial_prob[s] * em[s];
        } else {
            for (int s = 0; s < 2; ++s)
                a[s] = (alpha[t - 1][0] * hmm.transition[0][s] +
                        alpha[t - 1][1] * hmm.transition[1][s]) *
                       em[s];
        }
        const double c = a[0] + a[1];
        if (!(c > 0.0)) throw NumericalUnderflow("forward pass scale hit zero");
        alpha[t] = {a[0] / c, a[1] / c};
        scale[t] = c;
        ll += std::log(c) + log_em_scale;
    }

    beta[n - 1] = {1.0, 1.0};
    for (std::size_t t = n - 1; t-- > 0;) {
        double log_em_scale = 0.0;
        const auto em = detail_inf::emission_row(trace.counts[t + 1], hmm.lambda, log_em_scale);
        for (int s = 0; s < 2; ++s)
            beta[t][s] = (hmm.transition[s][0] * em[0] * beta[t + 1][0] +
                          hmm.transition[s][1] * em[1] * beta[t + 1][1]) /
                         scale[t + 1];
    }

    PosteriorResult out;
    out.log_likelihood = ll;
    out.gamma.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        const double g0 = alpha[t][0] * beta[t][0];
        const double g1 = alpha[t][1] * beta[t][1];
        const double z = g0 + g1;
        if (!(z > 0.0)) throw NumericalUnderflow("posterior normalization hit zero");
        out.gamma[t] = {g0 / z, g1 / z};
    }
    return out;
}

// Max-product decoding in log space. Ties resolve to state 0 at every
// comparison, so equal-probability paths decode deterministically dark.
inline ViterbiResult viterbi(const PoissonHmm& hmm, const PhotonTrace& trace) {
    hmm.validate();
    trace.validate();
    const std::size_t n = trace.counts.size();
    if (n == 0) throw DomainError("empty trace");

    const double neg_inf = -std::numeric_limits<double>::infinity();
    auto safe_log = [&](double p) { return p > 0.0 ? std::log(p) : neg_inf; };

    std::vector<std::array<double, 2>> delta(n);
    std::vector<std::array<int, 2>> psi(n);
    for (int s = 0; s < 2; ++s)
        delta[0][s] = safe_log(hmm.initial_prob[s]) +
                      detail_inf::log_poisson_pmf(trace.counts[0], hmm.lambda[s]);

    for (std::size_t t = 1; t < n; ++t) {
        for (int s = 0; s < 2; ++s) {
            const double from0 = delta[t - 1][0] + safe_log(hmm.transition[0][s]);
            const double from1 = delta[t - 1][1] + safe_log(hmm.transition[1][s]);
            psi[t][s] = from1 > from0 ? 1 : 0;
            delta[t][s] = std::max(from0, from1) +
                          detail_inf::log_poisson_pmf(trace.counts[t], hmm.lambda[s]);
        }
    }

    ViterbiResult out;
    out.path.resize(n);
    out.path[n - 1] = delta[n - 1][1] > delta[n - 1][0] ? 1 : 0;
    out.log_prob = delta[n - 1][out.path[n - 1]];
    if (!std::isfinite(out.log_prob)) throw NumericalUnderflow("all state paths have zero probability");
    for (std::size_t t = n - 1; t-- > 0;) out.path[t] = psi[t + 1][out.path[t + 1]];
    return out;
}

// Quantile-split starting point: lambdas at the 25th/75th count percentiles,
// mild symmetric transition prior. See baum_welch.
inline PoissonHmm quantile_init(const std::vector<long>& counts, double switch_prob = 0.05) {
    if (counts.size() < 2) throw DomainError("need >= 2 counts for quantile init");
    std::vector<long> sorted(counts);
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double f) {
        return static_cast<double>(sorted[static_cast<std::size_t>(
            f * static_cast<double>(sorted.size() - 1))]);
    };
    double lo = q(0.25), hi = q(0.75);
    if (!(hi > lo)) {  // flat quartiles; split around the mean instead
        const double m = std::max(q(0.5), 1.0);
        lo = 0.7 * m;
        hi = 1.3 * m;
    }
    PoissonHmm hmm;
    hmm.initial_prob = {0.5, 0.5};
    hmm.transition = {{{1.0 - switch_prob, switch_prob}, {switch_prob, 1.0 - switch_prob}}};
    hmm.lambda = {lo, hi};
    return hmm;
}

inline BaumWelchResult baum_welch(const PhotonTrace& trace, const PoissonHmm& init,
                                  int max_iter = 100, double tol = 1e-6) {
    init.validate();
    trace.validate();
    const std::size_t n = trace.counts.size();
    if (n < 2) throw DomainError("need >= 2 bins");

    BaumWelchResult out;
    out.hmm = init;
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < max_iter; ++iter) {
        const PoissonHmm& h = out.hmm;

        // Forward-backward with the quantities the M step needs.
        std::vector<std::array<double, 2>> alpha(n), beta(n);
        std::vector<double> scale(n);
        std::vector<std::array<double, 2>> em(n);
        double ll = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            double ls = 0.0;
            em[t] = detail_inf::emission_row(trace.counts[t], h.lambda, ls);
            std::array<double, 2> a{};
            if (t == 0)
                for (int s = 0; s < 2; ++s) a[s] = h.initial_prob[s] * em[t][s];
            else
                for (int s = 0; s < 2; ++s)
                    a[s] = (alpha[t - 1][0] * h.transition[0][s] +
                            alpha[t - 1][1] * h.transition[1][s]) *
                           em[t][s];
            const double c = a[0] + a[1];
            if (!(c > 0.0)) throw NumericalUnderflow("forward pass scale hit zero");
            alpha[t] = {a[0] / c, a[1] / c};
            scale[t] = c;
            ll += std::log(c) + ls;
        }
        beta[n - 1] = {1.0, 1.0};
        for (std::size_t t = n - 1; t-- > 0;)
            for (int s = 0; s < 2; ++s)
                beta[t][s] = (h.transition[s][0] * em[t + 1][0] * beta[t + 1][0] +
                              h.transition[s][1] * em[t + 1][1] * beta[t + 1][1]) /
                             scale[t + 1];

        out.ll_history.push_back(ll);

        std::array<double, 2> occ{0.0, 0.0};          // sum of gamma over all bins
        std::array<double, 2> occ_trans{0.0, 0.0};    // over bins 0..n-2
        std::array<double, 2> weighted_counts{0.0, 0.0};
        std::array<std::array<double, 2>, 2> xi_sum{{{0.0, 0.0}, {0.0, 0.0}}};
        std::array<double, 2> gamma0{0.0, 0.0};

        for (std::size_t t = 0; t < n; ++t) {
            const double g0 = alpha[t][0] * beta[t][0];
            const double g1 = alpha[t][1] * beta[t][1];
            const double z = g0 + g1;
            const std::array<double, 2> g{g0 / z, g1 / z};
            if (t == 0) gamma0 = g;
            for (int s = 0; s < 2; ++s) {
                occ[s] += g[s];
                weighted_counts[s] += g[s] * static_cast<double>(trace.counts[t]);
                if (t + 1 < n) occ_trans[s] += g[s];
            }
            if (t + 1 < n)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j)
                        xi_sum[i][j] += alpha[t][i] * h.transition[i][j] * em[t + 1][j] *
                                        beta[t + 1][j] / scale[t + 1];
        }

        for (int s = 0; s < 2; ++s)
            if (occ[s] / static_cast<double>(n) < 1e-6)
                throw DegenerateFit("state " + std::to_string(s) +
                                    " occupancy below 1e-6; data look single-state");

        PoissonHmm next;
        next.initial_prob = gamma0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) next.transition[i][j] = xi_sum[i][j] / occ_trans[i];
        for (int s = 0; s < 2; ++s) next.lambda[s] = weighted_counts[s] / occ[s];

        if (next.lambda[0] > next.lambda[1]) {  // relabel to keep dark < bright
            std::swap(next.lambda[0], next.lambda[1]);
            std::swap(next.initial_prob[0], next.initial_prob[1]);
            std::swap(next.transition[0][1], next.transition[1][0]);
            std::swap(next.transition[0][0], next.transition[1][1]);
        }
        const double gap = next.lambda[1] - next.lambda[0];
        if (gap < 0.01 * std::max(next.lambda[1], 1e-12)) {
            out.degenerate_lambdas = true;
            // keep lambdas strictly ordered so the model stays valid
            next.lambda[1] = next.lambda[0] + std::max(1e-9, 1e-6 * (next.lambda[0] + 1.0));
        }
        // guard against exactly-0/1 transition probabilities freezing EM
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j)
                next.transition[i][j] = std::clamp(next.transition[i][j], 1e-12, 1.0);
            const double row = next.transition[i][0] + next.transition[i][1];
            next.transition[i][0] /= row;
            next.transition[i][1] /= row;
        }
        const double iz = next.initial_prob[0] + next.initial_prob[1];
        next.initial_prob[0] /= iz;
        next.initial_prob[1] /= iz;

        out.hmm = next;
        if (iter > 0 && std::abs(ll - prev_ll) < tol) {
            out.converged = true;
            break;
        }
        prev_ll = ll;
    }
    return out;
}

inline MixtureFit poisson_mixture_em(const std::vector<long>& counts, int max_iter = 500,
                                     double tol = 1e-9) {
    if (counts.size() < 100) throw DomainError("need >= 100 samples");
    for (long c : counts)
        if (c < 0) throw DomainError("counts must be >= 0");

    const std::size_t n = counts.size();
    const PoissonHmm seed = quantile_init(counts);
    std::array<double, 2> lambda = seed.lambda;
    std::array<double, 2> w{0.5, 0.5};

    double ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        double new_ll = 0.0;
        double s0 = 0.0, s1 = 0.0, n1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l0 = std::log(w[0]) + detail_inf::log_poisson_pmf(counts[i], lambda[0]);
            const double l1 = std::log(w[1]) + detail_inf::log_poisson_pmf(counts[i], lambda[1]);
            const double m = std::max(l0, l1);
            const double z = std::exp(l0 - m) + std::exp(l1 - m);
            const double r1 = std::exp(l1 - m) / z;
            new_ll += m + std::log(z);
            n1 += r1;
            s1 += r1 * static_cast<double>(counts[i]);
            s0 += (1.0 - r1) * static_cast<double>(counts[i]);
        }
        const double n0 = static_cast<double>(n) - n1;
        if (n0 < 1e-12 || n1 < 1e-12) throw DegenerateFit("one mixture component vanished");
        w = {n0 / static_cast<double>(n), n1 / static_cast<double>(n)};
        lambda = {s0 / n0, s1 / n1};
        if (lambda[0] > lambda[1]) {
            std::swap(lambda[0], lambda[1]);
            std::swap(w[0], w[1]);
        }
        const bool done = iter > 0 && std::abs(new_ll - ll) < tol;
        ll = new_ll;
        if (done) break;
    }

    if (std::min(w[0], w[1]) < 1e-4)
        throw DegenerateFit("mixture weight below 1e-4; data look single-component");
    if (lambda[1] - lambda[0] < 0.01 * std::max(lambda[1], 1e-12))
        throw DegenerateFit("mixture lambdas indistinguishable; data look single-component");

    MixtureFit fit;
    fit.lambda_dark = lambda[0];
    fit.lambda_bright = lambda[1];
    fit.weight_bright = w[1];
    fit.log_likelihood = ll;
    const double d = std::sqrt(lambda[1]) - std::sqrt(lambda[0]);
    fit.overlap = std::exp(-0.5 * d * d);
    return fit;
}

// Windowed mean of a per-bin bright probability. Windows are aligned to the
// trace start and span an integer number of bins; a trailing partial window
// is dropped.
inline OccupancySeries occupancy_timeseries(const std::vector<double>& p_bright_per_bin,
                                            const PhotonTrace& trace, double window) {
    trace.validate();
    if (p_bright_per_bin.size() != trace.counts.size())
        throw DomainError("per-bin probabilities must match trace length");
    if (!(window >= trace.bin_width)) throw DomainError("window must be >= bin_width");

    const std::size_t n_per =
        static_cast<std::size_t>(std::floor(window / trace.bin_width + 1e-9));
    const std::size_t n_win = trace.counts.size() / n_per;

    OccupancySeries out;
    out.window = static_cast<double>(n_per) * trace.bin_width;
    for (std::size_t wgt = 0; wgt < n_win; ++wgt) {
        double sum = 0.0;
        for (std::size_t i = wgt * n_per; i < (wgt + 1) * n_per; ++i) sum += p_bright_per_bin[i];
        out.times.push_back(trace.meta.start_time_s +
                            (static_cast<double>(wgt) + 0.5) * out.window);
        out.p_bright.push_back(sum / static_cast<double>(n_per));
    }
    return out;
}

inline OccupancySeries occupancy_timeseries(const PosteriorResult& post, const PhotonTrace& trace,
                                            double window) {
    std::vector<double> p(post.gamma.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = post.gamma[i][1];
    return occupancy_timeseries(p, trace, window);
}

inline OccupancySeries occupancy_timeseries(const std::vector<int>& path, const PhotonTrace& trace,
                                            double window) {
    std::vector<double> p(path.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = path[i] == 1 ? 1.0 : 0.0;
    return occupancy_timeseries(p, trace, window);
}

}  // namespace nvdyn::inference
