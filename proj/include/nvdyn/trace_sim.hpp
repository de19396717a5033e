#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvdyn/common.hpp"
#include "nvdyn/fitting.hpp"
#include "nvdyn/rng.hpp"

namespace nvdyn::trace_sim {

// Piecewise-linear rate as a function of time, clamped to the end values
// outside the tabulated range.
struct RateTable {
    std::vector<double> time;  // strictly increasing, s
    std::vector<double> rate;  // 1/s

    void validate() const {
        if (time.size() != rate.size() || time.size() < 2)
            throw DomainError("rate table needs >= 2 samples");
        for (std::size_t i = 1; i < time.size(); ++i)
            if (!(time[i] > time[i - 1])) throw DomainError("rate table times must increase");
        for (double r : rate)
            if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("rates must be finite and >= 0");
    }

    double at(double t) const {
        if (t <= time.front()) return rate.front();
        if (t >= time.back()) return rate.back();
        const auto it = std::upper_bound(time.begin(), time.end(), t);
        const std::size_t i = static_cast<std::size_t>(it - time.begin());
        const double f = (t - time[i - 1]) / (time[i] - time[i - 1]);
        return rate[i - 1] + f * (rate[i] - rate[i - 1]);
    }

    double max_rate() const { return *std::max_element(rate.begin(), rate.end()); }
};

struct TelegraphParams {
    // Dark -> bright rate: either constant or tabulated (time-dependent).
    double rate_dark_to_bright = 0.0;          // 1/s, used when no table given
    std::optional<RateTable> rate_table;       // overrides the constant rate
    double rate_bright_to_dark = 0.0;          // 1/s
    double cps_bright = 0.0;
    double cps_dark = 0.0;

    void validate() const {
        if (!(rate_dark_to_bright >= 0.0) || !(rate_bright_to_dark >= 0.0))
            throw DomainError("switching rates must be >= 0");
        if (!(cps_dark >= 0.0) || !(cps_bright > cps_dark))
            throw DomainError("need cps_bright > cps_dark >= 0");
        if (rate_table) rate_table->validate();
    }
};

struct TraceMeta {
    double bias_v = 0.0;
    double power_mw = 0.0;
    double start_time_s = 0.0;
};

struct PhotonTrace {
    double bin_width = 0.0;  // s
    std::vector<long> counts;
    TraceMeta meta;

    double duration() const { return bin_width * static_cast<double>(counts.size()); }

    void validate() const {
        if (!(bin_width > 0.0)) throw DomainError("bin width must be > 0");
        for (long c : counts)
            if (c < 0) throw DomainError("counts must be >= 0");
    }
};

enum class State { dark = 0, bright = 1 };

// Trace plus the exact switching trajectory that generated it (ground truth
// for decoder validation).
struct TraceSample {
    PhotonTrace trace;
    State start_state = State::dark;
    std::vector<double> switch_times;  // strictly increasing, within (0, duration)

    State state_at(double t) const {
        const auto it = std::upper_bound(switch_times.begin(), switch_times.end(), t);
        const std::size_t flips = static_cast<std::size_t>(it - switch_times.begin());
        const bool bright = (start_state == State::bright) != (flips % 2 == 1);
        return bright ? State::bright : State::dark;
    }

    // Per-bin label by occupancy majority (bins straddling a switch get the
    // state they spent more time in).
    std::vector<State> majority_state_per_bin() const;
};

namespace detail_ts {

// Next dark->bright switch after `t` by thinning against the table maximum.
inline std::optional<double> next_switch_thinned(const RateTable& tab, double t, double t_end,
                                                 RandomStream& rng) {
    const double ceiling = tab.max_rate();
    if (ceiling <= 0.0) return std::nullopt;
    while (t < t_end) {
        t += rng.exponential(ceiling);
        if (t >= t_end) return std::nullopt;
        if (rng.uniform() <= tab.at(t) / ceiling) return t;
    }
    return std::nullopt;
}

}  // namespace detail_ts

// Event-driven two-state telegraph simulation with Poisson counts per bin.
// Emission within a bin integrates the exact bright/dark occupancy, so bins
// straddling a switch get the correctly mixed mean. Identical (params, seed)
// give identical output.
inline TraceSample simulate_trace_detailed(const TelegraphParams& tp, double duration,
                                           double bin_width, std::uint64_t seed,
                                           State start = State::dark, TraceMeta meta = {}) {
    tp.validate();
    if (!(duration > 0.0) || !(bin_width > 0.0) || bin_width > duration)
        throw DomainError("need duration >= bin_width > 0");

    RandomStream rng(seed);
    TraceSample out;
    out.start_state = start;

    double t = 0.0;
    State s = start;
    while (t < duration) {
        if (s == State::bright) {
            if (tp.rate_bright_to_dark <= 0.0) break;
            t += rng.exponential(tp.rate_bright_to_dark);
            if (t >= duration) break;
            out.switch_times.push_back(t);
            s = State::dark;
        } else {
            std::optional<double> ts;
            if (tp.rate_table) {
                ts = detail_ts::next_switch_thinned(*tp.rate_table, t, duration, rng);
            } else if (tp.rate_dark_to_bright > 0.0) {
                const double cand = t + rng.exponential(tp.rate_dark_to_bright);
                if (cand < duration) ts = cand;
            }
            if (!ts) break;
            t = *ts;
            out.switch_times.push_back(t);
            s = State::bright;
        }
    }

    // Exact bright occupancy per bin from the switch times.
    const std::size_t n_bins = static_cast<std::size_t>(std::floor(duration / bin_width + 1e-9));
    std::vector<double> bright_time(n_bins, 0.0);
    {
        double seg_start = 0.0;
        State seg_state = start;
        auto add_interval = [&](double a, double b) {
            if (b <= a) return;
            std::size_t i0 = std::min(static_cast<std::size_t>(a / bin_width), n_bins - 1);
            std::size_t i1 = std::min(static_cast<std::size_t>(b / bin_width), n_bins - 1);
            for (std::size_t i = i0; i <= i1; ++i) {
                const double lo = std::max(a, static_cast<double>(i) * bin_width);
                const double hi = std::min(b, static_cast<double>(i + 1) * bin_width);
                if (hi > lo) bright_time[i] += hi - lo;
            }
        };
        const double t_total = static_cast<double>(n_bins) * bin_width;
        for (double sw : out.switch_times) {
            if (seg_state == State::bright) add_interval(seg_start, std::min(sw, t_total));
            seg_start = sw;
            seg_state = seg_state == State::bright ? State::dark : State::bright;
        }
        if (seg_state == State::bright) add_interval(seg_start, t_total);
    }

    out.trace.bin_width = bin_width;
    out.trace.meta = meta;
    out.trace.counts.resize(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        const double mean =
            tp.cps_dark * (bin_width - bright_time[i]) + tp.cps_bright * bright_time[i];
        out.trace.counts[i] = rng.poisson(mean);
    }
    return out;
}

inline PhotonTrace simulate_trace(const TelegraphParams& tp, double duration, double bin_width,
                                  std::uint64_t seed, State start = State::dark,
                                  TraceMeta meta = {}) {
    return simulate_trace_detailed(tp, duration, bin_width, seed, start, meta).trace;
}

// Batch with per-trace derived substreams: element k depends only on
// (seed, k), so batches are reproducible and order-independent.
inline std::vector<PhotonTrace> simulate_trace_batch(const TelegraphParams& tp, double duration,
                                                     double bin_width, std::uint64_t seed,
                                                     std::size_t count,
                                                     State start = State::dark) {
    std::vector<PhotonTrace> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        RandomStream sub = RandomStream::substream(seed, k);
        // Re-seed through a derived 64-bit value; simulate with it directly.
        out.push_back(simulate_trace(tp, duration, bin_width, sub.raw(), start));
    }
    return out;
}

inline std::vector<State> TraceSample::majority_state_per_bin() const {
    const std::size_t n = trace.counts.size();
    std::vector<State> s(n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = static_cast<double>(i) * trace.bin_width;
        const double b = a + trace.bin_width;
        double bright = 0.0;
        double seg_start = a;
        State st = state_at(a);
        // Advance k to the first switch after a.
        while (k > 0 && switch_times[k - 1] > a) --k;
        while (k < switch_times.size() && switch_times[k] <= a) ++k;
        std::size_t kk = k;
        while (kk < switch_times.size() && switch_times[kk] < b) {
            if (st == State::bright) bright += switch_times[kk] - seg_start;
            seg_start = switch_times[kk];
            st = st == State::bright ? State::dark : State::bright;
            ++kk;
        }
        if (st == State::bright) bright += b - seg_start;
        s[i] = bright >= 0.5 * trace.bin_width ? State::bright : State::dark;
    }
    return s;
}

// Bright-state occupancy target p(t) = y0 + A*(1 - exp(-(t/tau)^beta)).
struct OccupancyTarget {
    double y0 = 0.0;
    double amplitude = 0.0;
    double tau = 1.0;   // s
    double beta = 1.0;

    void validate() const {
        if (!(y0 >= 0.0) || !(amplitude >= 0.0)) throw DomainError("y0 and amplitude must be >= 0");
        if (y0 + amplitude > 1.0) throw DomainError("occupancy target exceeds 1");
        if (!(tau > 0.0) || !(beta > 0.0)) throw DomainError("tau and beta must be > 0");
    }

    double at(double t) const {
        return fitting::eval_model(fitting::ModelId::compressed_exp, {y0, amplitude, tau, beta}, t);
    }
};

// Quasi-static detailed balance: k_db(t) = k_bd * p(t) / (1 - p(t)), sampled
// on a dt grid and clamped at `ceiling` (which also bounds the thinning
// proposal rate). Valid when switching is much faster than the drift of p.
inline RateTable rates_from_occupancy_target(const OccupancyTarget& target, double k_bd,
                                             double duration, double dt,
                                             double ceiling = 1e3, double eps = 1e-6) {
    target.validate();
    if (!(k_bd > 0.0)) throw DomainError("k_bd must be > 0");
    if (!(duration > 0.0) || !(dt > 0.0) || dt > duration)
        throw DomainError("need duration >= dt > 0");
    if (!(ceiling > 0.0)) throw DomainError("ceiling must be > 0");

    RateTable tab;
    const std::size_t n = static_cast<std::size_t>(std::ceil(duration / dt)) + 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = std::min(static_cast<double>(i) * dt, duration);
        const double p = target.at(t);
        if (p >= 1.0 - eps)
            throw TargetUnreachable("occupancy target reaches 1 at t = " + std::to_string(t));
        tab.time.push_back(t);
        tab.rate.push_back(std::min(k_bd * p / (1.0 - p), ceiling));
    }
    return tab;
}

struct EmitterParams {
    bool single_emitter = true;
    double excited_lifetime = 20e-9;  // s
    double pump_rate = 5e6;           // 1/s, ground -> excited
    double background_rate = 0.0;     // cps of uncorrelated background

    void validate() const {
        if (!(excited_lifetime > 0.0) || !(pump_rate > 0.0) || !(background_rate >= 0.0))
            throw DomainError("invalid emitter params");
        if (!single_emitter && !(background_rate > 0.0))
            throw DomainError("background-only stream needs background_rate > 0");
    }
};

struct TimestampStream {
    std::vector<double> t;  // s, strictly increasing
    double duration = 0.0;  // s

    void validate() const {
        if (!(duration > 0.0)) throw DomainError("duration must be > 0");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!(t[i] >= 0.0) || t[i] > duration) throw DomainError("timestamp outside [0, duration]");
            if (i > 0 && !(t[i] > t[i - 1])) throw DomainError("timestamps must strictly increase");
        }
    }
};

// Photon arrival times from a pumped two-level emitter (one photon per
// excitation cycle, hence antibunched) merged with a Poisson background.
inline TimestampStream simulate_timestamps(const EmitterParams& ep, double duration,
                                           std::uint64_t seed) {
    ep.validate();
    if (!(duration > 0.0)) throw DomainError("duration must be > 0");
    RandomStream rng(seed);

    std::vector<double> signal;
    if (ep.single_emitter) {
        double t = 0.0;
        while (true) {
            t += rng.exponential(ep.pump_rate);               // wait in ground state
            t += rng.exponential(1.0 / ep.excited_lifetime);  // excited-state dwell
            if (t >= duration) break;
            signal.push_back(t);
        }
    }

    std::vector<double> bg;
    if (ep.background_rate > 0.0) {
        double tb = 0.0;
        while (true) {
            tb += rng.exponential(ep.background_rate);
            if (tb >= duration) break;
            bg.push_back(tb);
        }
    }

    TimestampStream out;
    out.duration = duration;
    out.t.resize(signal.size() + bg.size());
    std::merge(signal.begin(), signal.end(), bg.begin(), bg.end(), out.t.begin());
    for (std::size_t i = 1; i < out.t.size(); ++i)
        if (out.t[i] <= out.t[i - 1]) out.t[i] = std::nextafter(out.t[i - 1], duration);
    return out;
}

}  // namespace nvdyn::trace_sim
