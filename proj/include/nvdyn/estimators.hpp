#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "nvdyn/common.hpp"
#include "nvdyn/fitting.hpp"
#include "nvdyn/trace_sim.hpp"

namespace nvdyn::estimators {

struct CorrelationHistogram {
    std::vector<double> tau_bins;  // bin centers, symmetric about 0, s
    std::vector<double> g2;
    std::vector<long> counts;      // raw coincidences per bin
    double bin_width = 0.0;        // s
    double g2_zero = 0.0;
    double g2_zero_err = 0.0;
};

// All-pairs autocorrelation of one timestamp stream (no start-stop bias),
// normalized against the coincidence density of a Poisson stream with the
// same mean rate and duration. The (T - |tau|) factor corrects the finite
// record edges exactly, so the long-delay plateau sits at 1 without any
// empirical rescaling.
inline CorrelationHistogram g2_histogram(const trace_sim::TimestampStream& stream, double bin,
                                         double max_tau) {
    stream.validate();
    if (stream.t.size() < 1000) throw TooFewPhotons("need >= 1000 photons");
    if (!(bin > 0.0) || !(max_tau >= 10.0 * bin)) throw DomainError("need max_tau >= 10*bin > 0");

    const long k_max = static_cast<long>(std::floor(max_tau / bin + 0.5));
    const std::size_t n_bins = static_cast<std::size_t>(2 * k_max + 1);
    CorrelationHistogram h;
    h.bin_width = bin;
    h.tau_bins.resize(n_bins);
    h.counts.assign(n_bins, 0);
    for (long k = -k_max; k <= k_max; ++k)
        h.tau_bins[static_cast<std::size_t>(k + k_max)] = static_cast<double>(k) * bin;

    const auto& t = stream.t;
    const double reach = (static_cast<double>(k_max) + 0.5) * bin;
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = i + 1; j < t.size(); ++j) {
            const double dt = t[j] - t[i];
            if (dt >= reach) break;
            const long k = static_cast<long>(std::floor(dt / bin + 0.5));
            // each unordered pair enters once at +dt and once at -dt
            h.counts[static_cast<std::size_t>(k_max + k)] += 1;
            h.counts[static_cast<std::size_t>(k_max - k)] += 1;
        }
    }

    const double n_ph = static_cast<double>(t.size());
    const double rate2 = n_ph * n_ph / (stream.duration * stream.duration);
    h.g2.resize(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        const double abs_tau = std::abs(h.tau_bins[b]);
        // expected ordered-pair coincidences in this bin for Poisson light
        const double edge = b == static_cast<std::size_t>(k_max)
                                ? stream.duration - 0.25 * bin
                                : stream.duration - abs_tau;
        const double expected = rate2 * bin * edge;
        h.g2[b] = static_cast<double>(h.counts[b]) / expected;
        if (b == static_cast<std::size_t>(k_max)) {
            h.g2_zero = h.g2[b];
            h.g2_zero_err =
                std::sqrt(std::max(1.0, static_cast<double>(h.counts[b]))) / expected;
        }
    }
    return h;
}

struct AntibunchingFit {
    double g0 = 0.0;
    double g0_err = 0.0;
    double tau_a = 0.0;  // s; 0 when the histogram shows no dip to fit
    fitting::FitResult fit;
};

// Fits g2(tau) = 1 - (1-g0) exp(-|tau|/tau_a) by folding the histogram onto
// |tau| and fitting a plain exponential; g0 is the fitted value at tau = 0.
inline AntibunchingFit antibunching_fit(const CorrelationHistogram& h) {
    if (h.tau_bins.size() < 7 || h.tau_bins.size() % 2 == 0)
        throw DomainError("histogram must be symmetric with >= 7 bins");
    const std::size_t k_max = h.tau_bins.size() / 2;

    fitting::Dataset data;
    for (std::size_t k = 0; k <= k_max; ++k) {
        const double y = k == 0 ? h.g2[k_max]
                                : 0.5 * (h.g2[k_max + k] + h.g2[k_max - k]);
        const long c = k == 0 ? h.counts[k_max] : h.counts[k_max + k] + h.counts[k_max - k];
        data.x.push_back(static_cast<double>(k) * h.bin_width);
        data.y.push_back(y);
        // Poisson error of the (possibly pooled) coincidence count
        const double rel = 1.0 / std::sqrt(std::max(1.0, static_cast<double>(c)));
        data.sigma.push_back(std::max(y * rel, 1e-6));
    }

    AntibunchingFit out;
    const double a0 = data.y.front() - 1.0;
    if (std::abs(a0) < 1e-3) {  // flat histogram, nothing to fit
        out.g0 = std::clamp(data.y.front(), 0.0, 1.2);
        out.g0_err = data.sigma.front();
        out.tau_a = 0.0;
        return out;
    }

    // crude dip-width init: first bin where the dip has relaxed to 1/e
    double tau_init = 5.0 * h.bin_width;
    for (std::size_t k = 1; k <= k_max; ++k) {
        if (std::abs(data.y[k] - 1.0) < std::abs(a0) / std::exp(1.0)) {
            tau_init = std::max(static_cast<double>(k) * h.bin_width, h.bin_width);
            break;
        }
    }

    out.fit = fitting::lm_fit(fitting::ModelId::exp_decay, data, {1.0, a0, tau_init});
    const double y0 = out.fit.params[0], amp = out.fit.params[1];
    out.tau_a = out.fit.params[2];
    out.g0 = std::clamp(y0 + amp, 0.0, 1.2);
    const auto& cov = out.fit.covariance;
    out.g0_err = std::sqrt(std::max(0.0, cov[0][0] + cov[1][1] + 2.0 * cov[0][1]));  // var(y0+A)
    return out;
}

struct DepletionInput {
    double voltage_v = 0.0;
    double depletion_width_m = 0.0;
    double epsilon_r = 5.7;  // diamond

    void validate() const {
        if (!(voltage_v >= 0.0) || !(depletion_width_m > 0.0) || !(epsilon_r > 0.0))
            throw DomainError("need voltage >= 0, width > 0, epsilon_r > 0");
    }
};

// One-sided abrupt-junction estimate N_A = 2 eps0 epsr V / (q W^2), in cm^-3.
// No built-in-potential term: the input voltage is taken as the full
// potential across the depletion region.
inline double acceptor_density(const DepletionInput& in) {
    in.validate();
    const double n_per_m3 = 2.0 * constants::vacuum_permittivity_f_per_m * in.epsilon_r *
                            in.voltage_v /
                            (constants::elementary_charge_c * in.depletion_width_m *
                             in.depletion_width_m);
    return n_per_m3 * 1e-6;
}

}  // namespace nvdyn::estimators
