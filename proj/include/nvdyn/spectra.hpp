#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "nvdyn/common.hpp"

namespace nvdyn::spectra {

inline constexpr double analysis_lo_nm = 550.0;
inline constexpr double analysis_hi_nm = 750.0;

struct SpectrumMeta {
    double bias_v = 0.0;
    double power_mw = 0.0;
};

struct Spectrum {
    std::vector<double> wavelength_nm;  // strictly increasing
    std::vector<double> intensity;      // >= 0
    SpectrumMeta meta;

    void validate() const {
        if (wavelength_nm.size() != intensity.size() || wavelength_nm.size() < 2)
            throw DomainError("spectrum needs >= 2 samples with matching lengths");
        for (std::size_t i = 0; i < wavelength_nm.size(); ++i) {
            if (i > 0 && !(wavelength_nm[i] > wavelength_nm[i - 1]))
                throw DomainError("wavelength grid must strictly increase");
            if (!std::isfinite(intensity[i]) || !(intensity[i] >= 0.0))
                throw DomainError("intensities must be finite and >= 0");
        }
    }

    // Linear interpolation; zero outside the measured range.
    double value_at(double nm) const {
        if (nm < wavelength_nm.front() || nm > wavelength_nm.back()) return 0.0;
        const auto it = std::upper_bound(wavelength_nm.begin(), wavelength_nm.end(), nm);
        if (it == wavelength_nm.begin()) return intensity.front();
        const std::size_t i = static_cast<std::size_t>(it - wavelength_nm.begin());
        if (i == wavelength_nm.size()) return intensity.back();
        const double f = (nm - wavelength_nm[i - 1]) / (wavelength_nm[i] - wavelength_nm[i - 1]);
        return intensity[i - 1] + f * (intensity[i] - intensity[i - 1]);
    }
};

inline Spectrum resample(const Spectrum& s, const std::vector<double>& grid) {
    s.validate();
    Spectrum out;
    out.meta = s.meta;
    out.wavelength_nm = grid;
    out.intensity.reserve(grid.size());
    for (double nm : grid) out.intensity.push_back(s.value_at(nm));
    out.validate();
    return out;
}

inline std::vector<double> uniform_grid(double lo_nm, double hi_nm, double step_nm) {
    if (!(hi_nm > lo_nm) || !(step_nm > 0.0)) throw DomainError("bad grid parameters");
    std::vector<double> g;
    for (double x = lo_nm; x <= hi_nm + 1e-9; x += step_nm) g.push_back(x);
    return g;
}

struct WindowOptions {
    // Diamond first-order Raman line sits at 572 nm under 532 nm excitation;
    // integrated areas exclude it by default so NV emission is compared, not
    // the substrate.
    bool exclude_raman_notch = true;
    double notch_center_nm = 572.0;
    double notch_half_width_nm = 2.0;
};

namespace detail_sp {

// Trapezoid over [lo, hi] with linear interpolation at the window edges.
inline double trapezoid_window(const Spectrum& s, double lo, double hi) {
    const auto& w = s.wavelength_nm;
    const double a = std::max(lo, w.front());
    const double b = std::min(hi, w.back());
    if (!(b > a)) return 0.0;
    double area = 0.0;
    double x_prev = a, y_prev = s.value_at(a);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= a) continue;
        if (w[i] >= b) break;
        area += 0.5 * (y_prev + s.intensity[i]) * (w[i] - x_prev);
        x_prev = w[i];
        y_prev = s.intensity[i];
    }
    area += 0.5 * (y_prev + s.value_at(b)) * (b - x_prev);
    return area;
}

}  // namespace detail_sp

inline double integrate_window(const Spectrum& s, double lo_nm, double hi_nm,
                               const WindowOptions& opt = {}) {
    s.validate();
    if (!(lo_nm < hi_nm)) throw DomainError("window needs lo < hi");
    if (hi_nm <= s.wavelength_nm.front() || lo_nm >= s.wavelength_nm.back())
        throw EmptyWindow("window does not overlap the spectrum grid");
    double area = detail_sp::trapezoid_window(s, lo_nm, hi_nm);
    if (opt.exclude_raman_notch) {
        const double nlo = std::max(lo_nm, opt.notch_center_nm - opt.notch_half_width_nm);
        const double nhi = std::min(hi_nm, opt.notch_center_nm + opt.notch_half_width_nm);
        if (nhi > nlo) area -= detail_sp::trapezoid_window(s, nlo, nhi);
    }
    return area;
}

// Scale to unit integrated area over the 550-750 nm analysis range (no notch;
// normalization covers everything the detector sees).
inline Spectrum normalize_unit_area(const Spectrum& s) {
    s.validate();
    const double area = detail_sp::trapezoid_window(s, analysis_lo_nm, analysis_hi_nm);
    if (!(area > 0.0)) throw AllZero("spectrum has no area in the analysis range");
    Spectrum out = s;
    for (double& v : out.intensity) v /= area;
    return out;
}

struct ReferenceBasis {
    Spectrum ref_minus;
    Spectrum ref_zero;

    void validate() const {
        ref_minus.validate();
        ref_zero.validate();
        if (ref_minus.wavelength_nm != ref_zero.wavelength_nm)
            throw DomainError("basis references must share one grid");
    }
};

inline ReferenceBasis make_basis(const Spectrum& ref_minus_raw, const Spectrum& ref_zero_raw) {
    ReferenceBasis b;
    b.ref_minus = normalize_unit_area(ref_minus_raw);
    b.ref_zero = normalize_unit_area(resample(ref_zero_raw, b.ref_minus.wavelength_nm));
    return b;
}

// Height of the 637 nm NV- zero-phonon line above the local sideband.
// The sideband level under the line comes from a least-squares quadratic
// through four +-1 nm window means just outside it (627, 630, 644, 647 nm);
// a straight chord would leave the sideband's curvature in the height and
// bias the subtraction weight on NV0-rich spectra. Window means keep the
// estimate stable on noisy spectra, and the fit is linear in the
// intensities, so two spectra sharing one line shape keep their height
// ratio.
inline double zpl_height_637(const Spectrum& s) {
    const double peak = 637.0, half = 1.0;
    auto window_mean = [&](double center) {
        return detail_sp::trapezoid_window(s, center - half, center + half) / (2.0 * half);
    };
    const double offsets[4] = {-10.0, -7.0, 7.0, 10.0};
    double n = 0.0, s2 = 0.0, s4 = 0.0, sy = 0.0, s2y = 0.0;
    for (double u : offsets) {
        const double y = window_mean(peak + u);
        n += 1.0;
        s2 += u * u;
        s4 += u * u * u * u;
        sy += y;
        s2y += u * u * y;
    }
    // symmetric offsets: odd moments vanish, the intercept decouples
    const double baseline = (s4 * sy - s2 * s2y) / (n * s4 - s2 * s2);
    return window_mean(peak) - baseline;
}

// Weight that cancels the NV- ZPL in a 0 V spectrum when subtracting the
// (NV- dominated) 10 V spectrum: the ratio of baseline-corrected 637 nm
// heights. Closed form, no search.
inline double choose_subtraction_weight(const Spectrum& spec_0v, const Spectrum& spec_10v) {
    spec_0v.validate();
    spec_10v.validate();
    const double h10 = zpl_height_637(spec_10v);
    if (!(h10 > 0.0)) throw DomainError("subtrahend spectrum shows no 637 nm line");
    return std::max(0.0, zpl_height_637(spec_0v) / h10);
}

inline Spectrum build_nv0_reference(const Spectrum& spec_0v, const Spectrum& spec_10v,
                                    double weight) {
    spec_0v.validate();
    if (!(weight >= 0.0)) throw DomainError("weight must be >= 0");
    const Spectrum sub = resample(spec_10v, spec_0v.wavelength_nm);
    Spectrum diff;
    diff.meta = spec_0v.meta;
    diff.wavelength_nm = spec_0v.wavelength_nm;
    diff.intensity.resize(spec_0v.intensity.size());
    for (std::size_t i = 0; i < diff.intensity.size(); ++i)
        diff.intensity[i] = std::max(0.0, spec_0v.intensity[i] - weight * sub.intensity[i]);
    return normalize_unit_area(diff);
}

struct DecompositionResult {
    double a_minus = 0.0;  // integrated-area weight of the NV- reference
    double a_zero = 0.0;
    double residual_norm = 0.0;
    double fraction_zero = 0.0;
};

// Exact non-negative least squares for the two-column case: take the
// unconstrained normal-equation solution if it is feasible, otherwise the
// best single-component solution.
inline DecompositionResult nnls_decompose(const Spectrum& spectrum, const ReferenceBasis& basis) {
    basis.validate();
    spectrum.validate();
    if (spectrum.wavelength_nm != basis.ref_minus.wavelength_nm)
        throw DomainError("spectrum must be resampled to the basis grid");

    const auto& r0 = basis.ref_minus.intensity;
    const auto& r1 = basis.ref_zero.intensity;
    const auto& y = spectrum.intensity;
    const std::size_t n = y.size();

    double g00 = 0, g01 = 0, g11 = 0, b0 = 0, b1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        g00 += r0[i] * r0[i];
        g01 += r0[i] * r1[i];
        g11 += r1[i] * r1[i];
        b0 += r0[i] * y[i];
        b1 += r1[i] * y[i];
    }
    if (!(g00 > 0.0) || !(g11 > 0.0)) throw SingularBasis("a basis spectrum is identically zero");
    const double det = g00 * g11 - g01 * g01;
    if (det <= 1e-12 * g00 * g11)
        throw SingularBasis("basis spectra are numerically collinear");

    auto residual2 = [&](double a0, double a1) {
        double r2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = y[i] - a0 * r0[i] - a1 * r1[i];
            r2 += d * d;
        }
        return r2;
    };

    double a0 = (g11 * b0 - g01 * b1) / det;
    double a1 = (g00 * b1 - g01 * b0) / det;
    if (a0 < 0.0 || a1 < 0.0) {
        const double c0 = std::max(0.0, b0 / g00);  // a1 clamped to 0
        const double c1 = std::max(0.0, b1 / g11);  // a0 clamped to 0
        if (residual2(c0, 0.0) <= residual2(0.0, c1)) {
            a0 = c0;
            a1 = 0.0;
        } else {
            a0 = 0.0;
            a1 = c1;
        }
    }

    DecompositionResult out;
    out.a_minus = a0;
    out.a_zero = a1;
    out.residual_norm = std::sqrt(residual2(a0, a1));
    const double tot = a0 + a1;
    out.fraction_zero = tot > 0.0 ? a1 / tot : 0.0;
    return out;
}

struct BandWeights {
    double weight_minus = 0.0;  // fraction of NV- emission passing the band
    double weight_zero = 0.0;
};

// Per-state transmission of a detection window, e.g. a 650 nm long-pass
// becomes band_weights(basis, 650, 750).
inline BandWeights band_weights(const ReferenceBasis& basis, double lo_nm, double hi_nm,
                                const WindowOptions& opt = {}) {
    basis.validate();
    BandWeights w;
    w.weight_minus = integrate_window(basis.ref_minus, lo_nm, hi_nm, opt);
    w.weight_zero = integrate_window(basis.ref_zero, lo_nm, hi_nm, opt);
    return w;
}

struct BandWindow {
    double lo_nm = 0.0;
    double hi_nm = 0.0;
    bool operator==(const BandWindow&) const = default;
};

inline std::vector<BandWindow> standard_windows() {
    return {{550.0, 700.0}, {600.0, 700.0}, {650.0, 700.0}};
}

struct TailCorrelation {
    double rms_minus = 0.0;
    double rms_zero = 0.0;
    std::string emitter;  // "nv_zero" or "nv_minus", whichever tracks the tail
};

// Compares how the delayed-tail signal distributes over spectral windows with
// how each reference spectrum does. Both sets are normalized to their
// 550-700 nm entry; the reference whose points hug the identity line is the
// state emitting the tail.
inline TailCorrelation tail_correlation(const std::vector<std::pair<BandWindow, double>>& tail_areas,
                                        const ReferenceBasis& basis,
                                        const WindowOptions& opt = {}) {
    if (tail_areas.size() < 2) throw DomainError("need >= 2 windows");
    const BandWindow norm_window{550.0, 700.0};
    double tail_norm = 0.0;
    for (const auto& [win, v] : tail_areas) {
        if (!(v > 0.0)) throw DomainError("tail areas must be > 0");
        if (win == norm_window) tail_norm = v;
    }
    if (!(tail_norm > 0.0)) throw DomainError("tail areas must include the 550-700 nm window");

    auto rms_for = [&](const Spectrum& ref) {
        const double ref_norm = integrate_window(ref, norm_window.lo_nm, norm_window.hi_nm, opt);
        double acc = 0.0;
        for (const auto& [win, v] : tail_areas) {
            const double x = integrate_window(ref, win.lo_nm, win.hi_nm, opt) / ref_norm;
            const double d = v / tail_norm - x;
            acc += d * d;
        }
        return std::sqrt(acc / static_cast<double>(tail_areas.size()));
    };

    TailCorrelation out;
    out.rms_minus = rms_for(basis.ref_minus);
    out.rms_zero = rms_for(basis.ref_zero);
    out.emitter = out.rms_zero <= out.rms_minus ? "nv_zero" : "nv_minus";
    return out;
}

// Parameterized emission shapes. ZPLs are Gaussians; phonon sidebands are
// skew-normal lobes red-shifted from their ZPL. Amplitudes are relative
// within a state's bundle; synth_spectrum normalizes each bundle to unit
// area before mixing, so frac_zero is an area fraction by construction.
struct LineShapes {
    double zpl_minus_nm = 637.0, zpl_minus_sigma_nm = 2.0, zpl_minus_amp = 0.9;
    double psb_minus_loc_nm = 650.0, psb_minus_scale_nm = 38.0, psb_minus_skew = 3.0,
           psb_minus_amp = 1.0;
    double zpl_zero_nm = 575.0, zpl_zero_sigma_nm = 1.8, zpl_zero_amp = 0.8;
    double psb_zero_loc_nm = 580.0, psb_zero_scale_nm = 28.0, psb_zero_skew = 2.5,
           psb_zero_amp = 1.0;
    double raman_nm = 572.0, raman_sigma_nm = 0.5;
    double raman_amp = 0.0;  // peak height on the unit-area-bundle scale
};

namespace detail_sp {

inline double gaussian(double x, double mu, double sigma) {
    const double u = (x - mu) / sigma;
    return std::exp(-0.5 * u * u);
}

inline double skew_lobe(double x, double loc, double scale, double alpha) {
    const double u = (x - loc) / scale;
    return std::exp(-0.5 * u * u) * (1.0 + std::erf(alpha * u / std::sqrt(2.0)));
}

}  // namespace detail_sp

inline Spectrum synth_spectrum(double frac_zero, const LineShapes& ls = {},
                               std::vector<double> grid = {}) {
    if (!(frac_zero >= 0.0) || !(frac_zero <= 1.0)) throw DomainError("frac_zero must be in [0,1]");
    if (grid.empty()) grid = uniform_grid(analysis_lo_nm, analysis_hi_nm, 0.5);

    const std::size_t n = grid.size();
    std::vector<double> bundle_minus(n), bundle_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = grid[i];
        bundle_minus[i] =
            ls.zpl_minus_amp * detail_sp::gaussian(x, ls.zpl_minus_nm, ls.zpl_minus_sigma_nm) +
            ls.psb_minus_amp *
                detail_sp::skew_lobe(x, ls.psb_minus_loc_nm, ls.psb_minus_scale_nm, ls.psb_minus_skew);
        bundle_zero[i] =
            ls.zpl_zero_amp * detail_sp::gaussian(x, ls.zpl_zero_nm, ls.zpl_zero_sigma_nm) +
            ls.psb_zero_amp *
                detail_sp::skew_lobe(x, ls.psb_zero_loc_nm, ls.psb_zero_scale_nm, ls.psb_zero_skew);
    }
    auto unit_area = [&](std::vector<double>& v) {
        double area = 0.0;
        for (std::size_t i = 1; i < n; ++i)
            area += 0.5 * (v[i] + v[i - 1]) * (grid[i] - grid[i - 1]);
        if (!(area > 0.0)) throw AllZero("line-shape bundle has no area");
        for (double& x : v) x /= area;
    };
    unit_area(bundle_minus);
    unit_area(bundle_zero);

    Spectrum out;
    out.wavelength_nm = std::move(grid);
    out.intensity.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.intensity[i] = frac_zero * bundle_zero[i] + (1.0 - frac_zero) * bundle_minus[i] +
                           ls.raman_amp * detail_sp::gaussian(out.wavelength_nm[i], ls.raman_nm,
                                                              ls.raman_sigma_nm);
    }
    return out;
}

}  // namespace nvdyn::spectra
