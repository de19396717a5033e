#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "nvdyn/common.hpp"
#include "nvdyn/detail/linalg.hpp"
#include "nvdyn/fitting.hpp"

namespace nvdyn::photophysics {

// Level indices of the five-level scheme.
// NV-: ground, excited, singlet shelf. NV0: ground, excited.
enum Level : std::size_t { nm_ground = 0, nm_excited = 1, nm_singlet = 2, nz_ground = 3, nz_excited = 4 };
inline constexpr std::size_t n_levels = 5;

// Rate coefficients. Power enters as:
//   pumping          g- -> e-, g0 -> e0      rate = pump * P
//   ionization       e- -> g0                rate = ionize_coeff * P^2
//   recombination    g0 -> g-                rate = recomb_coeff * P^2 * edf
//   hole capture     g- -> e0                rate = hole_capture_coeff * P_hole * hdf
// Ionization runs out of the excited state (second photon on a pumped
// center), so the effective NV- loss grows faster than the recombination
// gain at high power; that is what bends the biased saturation curve over.
// Hole capture promotes to the NV0 excited state: captures radiate, which is
// the delayed-emission channel seen after the laser turns off.
struct RateParams {
    double pump_rate_minus = 0.0;        // 1/s per mW
    double pump_rate_zero = 0.0;         // 1/s per mW
    double rad_decay_minus = 0.0;        // 1/s
    double rad_decay_zero = 0.0;         // 1/s
    double isc_up = 0.0;                 // 1/s, e- -> singlet
    double isc_down = 0.0;               // 1/s, singlet -> g-
    double ionize_coeff = 0.0;           // 1/s per mW^2
    double recomb_coeff = 0.0;           // 1/s per mW^2
    double hole_capture_coeff = 0.0;     // 1/s per mW
    double detection_efficiency = 1.0;   // detected counts per emitted photon
    double background_slope = 0.0;       // cps per mW

    void validate() const {
        const double vals[] = {pump_rate_minus, pump_rate_zero, rad_decay_minus,
                               rad_decay_zero, isc_up, isc_down, ionize_coeff,
                               recomb_coeff, hole_capture_coeff, detection_efficiency,
                               background_slope};
        for (double v : vals)
            if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("rate params must be finite and >= 0");
        if (rad_decay_minus <= 0.0 || rad_decay_zero <= 0.0)
            throw DomainError("radiative decay rates must be > 0");
    }
};

// Electric-field configuration. The applied bias depletes free carriers near
// the center: it suppresses the hole density (hole_density_factor) and also
// the photo-electron density available for recombination
// (electron_density_factor).
struct BiasMode {
    std::string tag = "zero_bias";
    double hole_density_factor = 1.0;
    double electron_density_factor = 1.0;

    void validate() const {
        if (!(hole_density_factor >= 0.0) || !(electron_density_factor >= 0.0))
            throw DomainError("bias factors must be >= 0");
    }
};

// Spectral weights applied to the two radiative channels, i.e. the fraction
// of each emission band passed by the collection filter. A 650 nm long-pass
// sees only NV- emission; band-pass windows see a weighted sum (weights can
// be derived from reference spectra, see spectra::band_weights).
struct DetectionBand {
    double weight_minus = 1.0;
    double weight_zero = 0.0;

    static DetectionBand longpass_650() { return {1.0, 0.0}; }

    void validate() const {
        if (!(weight_minus >= 0.0) || !(weight_zero >= 0.0))
            throw DomainError("detection band weights must be >= 0");
    }
};

struct StatePopulations {
    std::array<double, n_levels> p{};

    double sum() const {
        double s = 0.0;
        for (double v : p) s += v;
        return s;
    }
    double nv_minus() const { return p[nm_ground] + p[nm_excited] + p[nm_singlet]; }
    double nv_zero() const { return p[nz_ground] + p[nz_excited]; }

    static StatePopulations pure_nv_minus_ground() {
        StatePopulations s;
        s.p[nm_ground] = 1.0;
        return s;
    }
    static StatePopulations pure_nv_zero_ground() {
        StatePopulations s;
        s.p[nz_ground] = 1.0;
        return s;
    }

    void validate(double tol = 1e-9) const {
        for (double v : p)
            if (!(v >= -1e-12) || !(v <= 1.0 + 1e-9)) throw DomainError("populations out of range");
        if (std::abs(sum() - 1.0) > tol) throw DomainError("populations must sum to 1");
    }
};

// Column-stochastic generator: A[i][j] is the rate j -> i, diagonal balances
// each column so total population is conserved exactly.
// hole_power: optical power that set the free-hole pool. During illumination
// this equals `power`; in the dark the pool keeps its laser-off value.
inline std::array<std::array<double, n_levels>, n_levels> rate_matrix(
    const RateParams& rp, double power, const BiasMode& bias, double hole_power) {
    if (!(power >= 0.0) || !(hole_power >= 0.0)) throw DomainError("power must be >= 0");
    std::array<std::array<double, n_levels>, n_levels> a{};
    auto add = [&](std::size_t from, std::size_t to, double rate) {
        a[to][from] += rate;
        a[from][from] -= rate;
    };
    add(nm_ground, nm_excited, rp.pump_rate_minus * power);
    add(nm_excited, nm_ground, rp.rad_decay_minus);
    add(nm_excited, nm_singlet, rp.isc_up);
    add(nm_singlet, nm_ground, rp.isc_down);
    add(nz_ground, nz_excited, rp.pump_rate_zero * power);
    add(nz_excited, nz_ground, rp.rad_decay_zero);
    add(nm_excited, nz_ground, rp.ionize_coeff * power * power);
    add(nz_ground, nm_ground, rp.recomb_coeff * power * power * bias.electron_density_factor);
    add(nm_ground, nz_excited, rp.hole_capture_coeff * hole_power * bias.hole_density_factor);
    return a;
}

// Detected photon rate (cps) for the given populations.
inline double pl_rate(const RateParams& rp, const StatePopulations& s, double power,
                      const DetectionBand& band = DetectionBand::longpass_650()) {
    return rp.detection_efficiency *
               (band.weight_minus * rp.rad_decay_minus * s.p[nm_excited] +
                band.weight_zero * rp.rad_decay_zero * s.p[nz_excited]) +
           rp.background_slope * power;
}

struct SteadyState {
    StatePopulations populations;
    double pl_rate = 0.0;
};

// Steady state of the rate equations at fixed power, normalized to total
// population 1. When the two charge manifolds are fully decoupled (all
// exchange rates zero, e.g. power = 0) the split between them is not fixed
// by the dynamics; init_minus_fraction resolves it.
inline SteadyState steady_state(const RateParams& rp, double power, const BiasMode& bias,
                                double init_minus_fraction = 1.0,
                                const DetectionBand& band = DetectionBand::longpass_650()) {
    rp.validate();
    bias.validate();
    band.validate();
    if (!(init_minus_fraction >= 0.0 && init_minus_fraction <= 1.0))
        throw DomainError("init_minus_fraction must be in [0, 1]");

    const double k_ion = rp.ionize_coeff * power * power;
    const double k_rec = rp.recomb_coeff * power * power * bias.electron_density_factor;
    const double k_hole = rp.hole_capture_coeff * power * bias.hole_density_factor;

    StatePopulations s;
    if (k_ion == 0.0 && k_rec == 0.0 && k_hole == 0.0) {
        // Decoupled manifolds: solve each 2/3-level block separately.
        const double w = rp.pump_rate_minus * power;
        double gm = 1.0, em = 0.0, sg = 0.0;
        if (w > 0.0) {
            em = w / (rp.rad_decay_minus + rp.isc_up);
            sg = rp.isc_down > 0.0 ? rp.isc_up * em / rp.isc_down : 0.0;
            if (rp.isc_up > 0.0 && rp.isc_down == 0.0) {
                // Shelf is absorbing: everything ends up in the singlet.
                gm = 0.0; em = 0.0; sg = 1.0;
            } else {
                const double norm = 1.0 + em + sg;
                gm = 1.0 / norm; em /= norm; sg /= norm;
            }
        }
        const double w0 = rp.pump_rate_zero * power;
        const double e0 = w0 / rp.rad_decay_zero;
        const double g0 = 1.0 / (1.0 + e0);
        s.p[nm_ground] = init_minus_fraction * gm;
        s.p[nm_excited] = init_minus_fraction * em;
        s.p[nm_singlet] = init_minus_fraction * sg;
        s.p[nz_ground] = (1.0 - init_minus_fraction) * g0;
        s.p[nz_excited] = (1.0 - init_minus_fraction) * (1.0 - g0);
    } else {
        auto a = rate_matrix(rp, power, bias, power);
        // Replace the last balance row with the normalization constraint.
        detail::Matrix m(n_levels * n_levels);
        std::vector<double> b(n_levels, 0.0);
        for (std::size_t i = 0; i < n_levels; ++i)
            for (std::size_t j = 0; j < n_levels; ++j)
                detail::at(m, n_levels, i, j) = (i + 1 == n_levels) ? 1.0 : a[i][j];
        b[n_levels - 1] = 1.0;
        std::vector<double> x = b;
        if (!detail::solve_lu(m, n_levels, x))
            throw NonConvergence("steady state: singular rate matrix");
        // Verify the solution actually lies in the nullspace.
        double rate_scale = 0.0;
        for (std::size_t j = 0; j < n_levels; ++j) rate_scale = std::max(rate_scale, -a[j][j]);
        for (std::size_t i = 0; i < n_levels; ++i) {
            double r = 0.0;
            for (std::size_t j = 0; j < n_levels; ++j) r += a[i][j] * x[j];
            if (std::abs(r) > 1e-6 * std::max(rate_scale, 1.0))
                throw NonConvergence("steady state: residual too large");
        }
        for (std::size_t i = 0; i < n_levels; ++i) {
            if (x[i] < -1e-9) throw NonConvergence("steady state: negative population");
            s.p[i] = std::max(x[i], 0.0);
        }
    }

    SteadyState out;
    out.populations = s;
    out.pl_rate = pl_rate(rp, s, power, band);
    return out;
}

struct PowerSegment {
    double duration = 0.0;  // s
    double power = 0.0;     // mW
};
using PowerSchedule = std::vector<PowerSegment>;

struct PLCurve {
    std::vector<double> time;                   // s, sample times
    std::vector<double> rate;                   // detected cps
    std::vector<StatePopulations> populations;  // clamped to [0, 1]
};

enum class Integrator { rk45_adaptive, rk4_fixed };

struct EvolveOptions {
    double dt_out = 1e-9;       // output sample spacing, s
    Integrator integrator = Integrator::rk45_adaptive;
    double abs_tol = 1e-12;
    double rel_tol = 1e-10;
    double fixed_dt = 1e-9;     // step for rk4_fixed
    DetectionBand band = DetectionBand::longpass_650();
};

namespace detail_ode {

using Vec = std::array<double, n_levels>;
using Mat = std::array<std::array<double, n_levels>, n_levels>;

inline Vec mat_vec(const Mat& a, const Vec& y) {
    Vec out{};
    for (std::size_t i = 0; i < n_levels; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n_levels; ++j) s += a[i][j] * y[j];
        out[i] = s;
    }
    return out;
}

inline Vec axpy(const Vec& y, double h, const Vec& k) {
    Vec out;
    for (std::size_t i = 0; i < n_levels; ++i) out[i] = y[i] + h * k[i];
    return out;
}

// Dormand-Prince 5(4) step with embedded error estimate.
inline void dopri_step(const Mat& a, const Vec& y, double h, Vec& y5, double& err_norm,
                       double atol, double rtol) {
    const Vec k1 = mat_vec(a, y);
    const Vec k2 = mat_vec(a, axpy(y, h * (1.0 / 5.0), k1));
    Vec t = y;
    for (std::size_t i = 0; i < n_levels; ++i)
        t[i] = y[i] + h * (3.0 / 40.0 * k1[i] + 9.0 / 40.0 * k2[i]);
    const Vec k3 = mat_vec(a, t);
    for (std::size_t i = 0; i < n_levels; ++i)
        t[i] = y[i] + h * (44.0 / 45.0 * k1[i] - 56.0 / 15.0 * k2[i] + 32.0 / 9.0 * k3[i]);
    const Vec k4 = mat_vec(a, t);
    for (std::size_t i = 0; i < n_levels; ++i)
        t[i] = y[i] + h * (19372.0 / 6561.0 * k1[i] - 25360.0 / 2187.0 * k2[i] +
                           64448.0 / 6561.0 * k3[i] - 212.0 / 729.0 * k4[i]);
    const Vec k5 = mat_vec(a, t);
    for (std::size_t i = 0; i < n_levels; ++i)
        t[i] = y[i] + h * (9017.0 / 3168.0 * k1[i] - 355.0 / 33.0 * k2[i] +
                           46732.0 / 5247.0 * k3[i] + 49.0 / 176.0 * k4[i] -
                           5103.0 / 18656.0 * k5[i]);
    const Vec k6 = mat_vec(a, t);
    for (std::size_t i = 0; i < n_levels; ++i)
        y5[i] = y[i] + h * (35.0 / 384.0 * k1[i] + 500.0 / 1113.0 * k3[i] +
                            125.0 / 192.0 * k4[i] - 2187.0 / 6784.0 * k5[i] +
                            11.0 / 84.0 * k6[i]);
    const Vec k7 = mat_vec(a, y5);
    // 4th-order solution error coefficients (b5 - b4).
    err_norm = 0.0;
    for (std::size_t i = 0; i < n_levels; ++i) {
        const double e = h * (71.0 / 57600.0 * k1[i] - 71.0 / 16695.0 * k3[i] +
                              71.0 / 1920.0 * k4[i] - 17253.0 / 339200.0 * k5[i] +
                              22.0 / 525.0 * k6[i] - 1.0 / 40.0 * k7[i]);
        const double sc = atol + rtol * std::abs(y5[i]);
        err_norm = std::max(err_norm, std::abs(e) / sc);
    }
}

// Integrates y' = A y from t = 0 to t = duration, invoking sink(t, y) at
// every multiple of dt_out in (0, duration] (plus the exact endpoint).
template <typename Sink>
inline void integrate_segment(const Mat& a, Vec& y, double duration, double t_base,
                              double dt_out, const EvolveOptions& opts, double next_out,
                              Sink&& sink) {
    double rate_scale = 0.0;
    for (std::size_t j = 0; j < n_levels; ++j) rate_scale = std::max(rate_scale, -a[j][j]);

    if (opts.integrator == Integrator::rk4_fixed) {
        if (rate_scale > 0.0 && opts.fixed_dt > 2.5 / rate_scale)
            throw StepSizeError("rk4_fixed: dt exceeds the stability bound 2.5/max_rate");
        double t = 0.0;
        while (t < duration - 1e-30) {
            double h = std::min(opts.fixed_dt, duration - t);
            h = std::min(h, next_out - t);
            const Vec k1 = mat_vec(a, y);
            const Vec k2 = mat_vec(a, axpy(y, 0.5 * h, k1));
            const Vec k3 = mat_vec(a, axpy(y, 0.5 * h, k2));
            const Vec k4 = mat_vec(a, axpy(y, h, k3));
            for (std::size_t i = 0; i < n_levels; ++i)
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            t += h;
            if (t >= next_out - 1e-15 * std::max(1.0, duration)) {
                sink(t_base + t, y);
                next_out += dt_out;
            }
        }
        return;
    }

    double h = rate_scale > 0.0 ? 1.0 / rate_scale : duration;
    h = std::min(h, duration);
    double t = 0.0;
    const double t_eps = 1e-15 * std::max(1.0, duration);
    while (t < duration - t_eps) {
        h = std::min({h, duration - t, next_out - t});
        Vec y5;
        double err;
        dopri_step(a, y, h, y5, err, opts.abs_tol, opts.rel_tol);
        if (err <= 1.0) {
            t += h;
            y = y5;
            if (t >= next_out - t_eps) {
                sink(t_base + t, y);
                next_out += dt_out;
            }
            h *= std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 1.0, 5.0);
        } else {
            h *= std::max(0.9 * std::pow(err, -0.2), 0.2);
            if (!(h > duration * 1e-16))
                throw NonConvergence("rk45: step size underflow");
        }
    }
}

}  // namespace detail_ode

// Integrates the rate equations through a piecewise-constant power schedule.
// The free-hole pool follows the light: during an illuminated segment the
// capture rate uses that segment's power; during dark segments it holds the
// most recent laser-on value (holes linger briefly after switch-off).
inline PLCurve evolve(const RateParams& rp, const StatePopulations& init,
                      const PowerSchedule& schedule, const BiasMode& bias,
                      const EvolveOptions& opts = {}) {
    rp.validate();
    bias.validate();
    opts.band.validate();
    init.validate();
    if (schedule.empty()) throw DomainError("empty power schedule");
    for (const auto& seg : schedule)
        if (!(seg.duration > 0.0) || !(seg.power >= 0.0))
            throw DomainError("schedule segments need duration > 0 and power >= 0");
    if (!(opts.dt_out > 0.0)) throw DomainError("dt_out must be > 0");

    PLCurve curve;
    detail_ode::Vec y;
    for (std::size_t i = 0; i < n_levels; ++i) y[i] = init.p[i];

    auto record = [&](double t, const detail_ode::Vec& v, double power) {
        StatePopulations s;
        for (std::size_t i = 0; i < n_levels; ++i) s.p[i] = std::clamp(v[i], 0.0, 1.0);
        curve.time.push_back(t);
        curve.populations.push_back(s);
        curve.rate.push_back(pl_rate(rp, s, power, opts.band));
    };

    record(0.0, y, schedule.front().power);

    double t0 = 0.0;
    double hole_power = 0.0;
    for (const auto& seg : schedule) {
        if (seg.power > 0.0) hole_power = seg.power;
        const auto a = rate_matrix(rp, seg.power, bias, hole_power);
        // Align output samples to the global grid.
        const double k = std::ceil((t0 + opts.dt_out * 0.5) / opts.dt_out);
        double next_out = k * opts.dt_out - t0;
        if (next_out <= 0.0) next_out = opts.dt_out;
        detail_ode::integrate_segment(a, y, seg.duration, t0, opts.dt_out, opts, next_out,
                                      [&](double t, const detail_ode::Vec& v) { record(t, v, seg.power); });
        t0 += seg.duration;
    }
    return curve;
}

// Consistency helper: total population drift of a curve (max |sum - 1|).
inline double max_conservation_error(const PLCurve& c) {
    double worst = 0.0;
    for (const auto& s : c.populations) worst = std::max(worst, std::abs(s.sum() - 1.0));
    return worst;
}

struct TailOptions {
    double pulse_duration = 2e-6;   // s at `power`
    double dark_duration = 12e-6;   // s after switch-off
    double guard = 4e-7;            // skipped after switch-off (prompt radiative + shelving flush)
    double fit_span = 1e-5;         // fitted window length after the guard start
    double sample_dt = 2e-9;        // s
    DetectionBand band{1.0, 1.0};   // time-resolved filters pass both bands
    double amplitude_floor = 1e-9;  // relative to the laser-on detected rate
};

struct TailResult {
    enum class Status { ok, no_decay };
    Status status = Status::ok;
    double tau = 0.0;        // s (only valid when status == ok)
    double amplitude = 0.0;  // cps at the fit start
    fitting::FitResult fit;
};

// Pulses the laser, then follows the detected emission in the dark and fits
// a single exponential to the delayed tail. After the prompt radiative and
// excited-state flush (excluded by the guard), the tail is fed by hole
// capture out of the NV- ground state at a rate set by the laser-off hole
// pool, with the singlet shelf re-supplying that state. The fitted decay is
// capture-limited at low power and approaches isc_down^-1 once capture is
// fast compared to the shelf drain.
inline TailResult dark_tail_tau(const RateParams& rp, double power, const BiasMode& bias,
                                const TailOptions& opts = {}) {
    if (!(power > 0.0)) throw DomainError("dark_tail_tau: power must be > 0");
    if (rp.hole_capture_coeff * bias.hole_density_factor == 0.0) {
        TailResult r;
        r.status = TailResult::Status::no_decay;
        return r;
    }

    const SteadyState on = steady_state(rp, power, bias, 1.0, opts.band);

    EvolveOptions eopts;
    eopts.dt_out = opts.sample_dt;
    eopts.band = opts.band;
    // Pulse then dark; the illuminated segment pins the hole pool at `power`.
    PowerSchedule sched{{opts.pulse_duration, power}, {opts.dark_duration, 0.0}};
    const PLCurve c = evolve(rp, on.populations, sched, bias, eopts);

    const double t_off = opts.pulse_duration;
    const double t_lo = t_off + opts.guard;
    const double t_hi = std::min(t_lo + opts.fit_span, t_off + opts.dark_duration);
    fitting::Dataset data;
    for (std::size_t i = 0; i < c.time.size(); ++i) {
        if (c.time[i] < t_lo || c.time[i] > t_hi) continue;
        data.x.push_back(c.time[i] - t_lo);
        data.y.push_back(c.rate[i]);
    }
    if (data.x.size() < 8) throw FitError("dark_tail_tau: too few samples in fit window");

    const double amp = data.y.front();
    if (!(amp > opts.amplitude_floor * std::max(on.pl_rate, 1e-300)))
        throw FitError("dark_tail_tau: tail amplitude below numerical floor");

    // Log-slope initial guess over the first decade of decay.
    double tau0 = opts.fit_span / 5.0;
    for (std::size_t i = 1; i < data.x.size(); ++i) {
        if (data.y[i] < amp * 0.3) {
            if (data.y[i] > 0.0) tau0 = data.x[i] / std::log(amp / data.y[i]);
            break;
        }
    }
    std::vector<double> init = {0.0, amp, std::max(tau0, opts.sample_dt)};
    fitting::Bounds b;
    b.lo = {0.0, 0.0, opts.sample_dt * 0.1};
    b.hi = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    TailResult r;
    r.fit = fitting::lm_fit(fitting::ModelId::exp_decay, data, init, b);
    r.amplitude = amp;
    r.tau = r.fit.params[2];
    r.status = (r.tau > 5.0 * opts.fit_span) ? TailResult::Status::no_decay
                                             : TailResult::Status::ok;
    return r;
}

// Default parameter set. Tuned against the transient and steady-state targets
// exercised by the fig3/fig4 scenarios (spike decay 195 ns and charge rise
// 270 ns at 1 mW, dark tail 457 ns at 1 mW / 0 V with a 272 ns power->inf
// intercept, saturation curves crossing near 5.6 mW with the biased branch
// peaking near 4 mW). configs/nv_default_params.json mirrors these values.
inline RateParams default_params() {
    RateParams rp;
    rp.pump_rate_minus = 9.76e6;
    rp.pump_rate_zero = 2.2e7;
    rp.rad_decay_minus = 7.7e7;
    rp.rad_decay_zero = 5.26e7;
    rp.isc_up = 2.4e7;
    rp.isc_down = 3.0e6;
    rp.ionize_coeff = 2.8e6;
    rp.recomb_coeff = 4.1e6;
    rp.hole_capture_coeff = 2.8e6;
    rp.detection_efficiency = 1.0e-3;
    rp.background_slope = 3.0e2;
    return rp;
}

inline BiasMode default_zero_bias() { return {"zero_bias", 1.0, 1.0}; }
inline BiasMode default_biased() { return {"biased", 0.02, 0.49}; }

}  // namespace nvdyn::photophysics
