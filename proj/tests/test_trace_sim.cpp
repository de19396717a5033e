#include <catch2/catch_amalgamated.hpp>

#include <nvdyn/rng.hpp>
#include <nvdyn/trace_sim.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace nvdyn;
using namespace nvdyn::trace_sim;

namespace {

double poisson_pmf(long k, double mean) {
    return std::exp(double(k) * std::log(mean) - mean - std::lgamma(double(k) + 1.0));
}

// One-sample KS statistic against Exponential(rate).
double ks_vs_exponential(std::vector<double> xs, double rate) {
    std::sort(xs.begin(), xs.end());
    const double n = double(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = 1.0 - std::exp(-rate * xs[i]);
        d = std::max(d, std::abs((double(i) + 1.0) / n - f));
        d = std::max(d, std::abs(double(i) / n - f));
    }
    return d;
}

TelegraphParams basic_params() {
    TelegraphParams tp;
    tp.rate_dark_to_bright = 3.0;
    tp.rate_bright_to_dark = 5.0;
    tp.cps_bright = 270.0;
    tp.cps_dark = 150.0;
    return tp;
}

}  // namespace

TEST_CASE("trace simulation is seed-deterministic") {
    const auto tp = basic_params();
    const auto a = simulate_trace(tp, 50.0, 0.1, 99);
    const auto b = simulate_trace(tp, 50.0, 0.1, 99);
    const auto c = simulate_trace(tp, 50.0, 0.1, 100);
    REQUIRE(a.counts == b.counts);
    REQUIRE(a.counts != c.counts);
    REQUIRE(a.counts.size() == 500);
}

TEST_CASE("a single-state trace is Poisson distributed") {
    TelegraphParams tp;
    tp.rate_dark_to_bright = 0.0;  // never leaves the dark state
    tp.rate_bright_to_dark = 1.0;
    tp.cps_bright = 300.0;
    tp.cps_dark = 150.0;
    const double bin = 0.1;
    const auto tr = simulate_trace(tp, 1000.0, bin, 7, State::dark);
    const double mean = tp.cps_dark * bin;  // 15 per bin
    const double n = double(tr.counts.size());

    double sum = 0.0, sum2 = 0.0;
    for (long k : tr.counts) {
        sum += double(k);
        sum2 += double(k) * double(k);
    }
    const double m = sum / n;
    const double var = sum2 / n - m * m;
    REQUIRE(m == Catch::Approx(mean).margin(5.0 * std::sqrt(mean / n)));
    REQUIRE(var / m > 0.9);
    REQUIRE(var / m < 1.1);

    // chi-square GOF against Poisson(15): counts grouped as <=9, 10..20, >=21
    std::vector<double> observed(13, 0.0);
    for (long k : tr.counts) {
        if (k <= 9) observed[0] += 1.0;
        else if (k >= 21) observed[12] += 1.0;
        else observed[std::size_t(k - 9)] += 1.0;
    }
    std::vector<double> expected(13, 0.0);
    double below = 0.0;
    for (long k = 0; k <= 9; ++k) below += poisson_pmf(k, mean);
    expected[0] = n * below;
    double covered = below;
    for (long k = 10; k <= 20; ++k) {
        expected[std::size_t(k - 9)] = n * poisson_pmf(k, mean);
        covered += poisson_pmf(k, mean);
    }
    expected[12] = n * (1.0 - covered);
    double chi2 = 0.0;
    for (std::size_t i = 0; i < 13; ++i)
        chi2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    REQUIRE(chi2 < 26.217);  // 99th percentile of chi-square with 12 dof
}

TEST_CASE("dwell times in both states are exponential") {
    TelegraphParams tp;
    tp.rate_dark_to_bright = 100.0;
    tp.rate_bright_to_dark = 100.0;
    tp.cps_bright = 300.0;
    tp.cps_dark = 100.0;
    const auto s = simulate_trace_detailed(tp, 200.0, 0.1, 13);

    std::vector<double> dark, bright;
    State st = s.start_state;
    double prev = 0.0;
    // final interval is censored by the end of the trace; skip it
    for (double t : s.switch_times) {
        (st == State::dark ? dark : bright).push_back(t - prev);
        st = (st == State::dark) ? State::bright : State::dark;
        prev = t;
    }
    REQUIRE(dark.size() + bright.size() >= 10000);

    const double crit = 1.628;  // asymptotic KS critical value at p = 0.01
    REQUIRE(ks_vs_exponential(dark, tp.rate_dark_to_bright) <
            crit / std::sqrt(double(dark.size())));
    REQUIRE(ks_vs_exponential(bright, tp.rate_bright_to_dark) <
            crit / std::sqrt(double(bright.size())));
}

TEST_CASE("rescaling time and rates together leaves the counts unchanged") {
    // scale by a power of two so every intermediate value rescales exactly
    const double s = 8.0;
    TelegraphParams tp;
    tp.rate_dark_to_bright = 3.0;
    tp.rate_bright_to_dark = 5.0;
    tp.cps_bright = 1024.0;
    tp.cps_dark = 256.0;

    TelegraphParams fast = tp;
    fast.rate_dark_to_bright *= s;
    fast.rate_bright_to_dark *= s;
    fast.cps_bright *= s;
    fast.cps_dark *= s;

    const auto slow = simulate_trace_detailed(tp, 128.0, 0.125, 21);
    const auto quick = simulate_trace_detailed(fast, 128.0 / s, 0.125 / s, 21);
    REQUIRE(slow.trace.counts == quick.trace.counts);
    REQUIRE(slow.switch_times.size() == quick.switch_times.size());
    for (std::size_t i = 0; i < slow.switch_times.size(); ++i)
        REQUIRE(quick.switch_times[i] == Catch::Approx(slow.switch_times[i] / s).epsilon(1e-12));
}

TEST_CASE("batch simulation uses independent reproducible substreams") {
    const auto tp = basic_params();
    const auto batch = simulate_trace_batch(tp, 20.0, 0.1, 555, 3);
    REQUIRE(batch.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto solo = simulate_trace(tp, 20.0, 0.1, RandomStream::substream(555, k).raw());
        REQUIRE(batch[k].counts == solo.counts);
    }
    REQUIRE(batch[0].counts != batch[1].counts);
}

TEST_CASE("majority per-bin labels follow the exact trajectory") {
    TraceSample s;
    s.trace.bin_width = 1.0;
    s.trace.counts = {0, 0, 0, 0};
    s.start_state = State::dark;
    s.switch_times = {0.4, 2.9};

    REQUIRE(s.state_at(0.1) == State::dark);
    REQUIRE(s.state_at(0.9) == State::bright);
    REQUIRE(s.state_at(2.95) == State::dark);

    const auto labels = s.majority_state_per_bin();
    REQUIRE(labels.size() == 4);
    REQUIRE(labels[0] == State::bright);  // bright 0.6 of the bin
    REQUIRE(labels[1] == State::bright);
    REQUIRE(labels[2] == State::bright);  // bright 0.9 of the bin
    REQUIRE(labels[3] == State::dark);
}

TEST_CASE("occupancy targets translate to detailed-balance rate tables") {
    SECTION("constant target gives a constant rate equal to k_bd at p = 0.5") {
        OccupancyTarget target{0.5, 0.0, 1.0, 1.0};
        const auto tab = rates_from_occupancy_target(target, 10.0, 5.0, 0.5);
        for (double r : tab.rate) REQUIRE(r == Catch::Approx(10.0).epsilon(1e-12));
    }

    SECTION("rates are clamped at the ceiling") {
        OccupancyTarget target{0.999, 0.0, 1.0, 1.0};
        const auto tab = rates_from_occupancy_target(target, 10.0, 5.0, 0.5);
        for (double r : tab.rate) REQUIRE(r == 1000.0);  // default ceiling
    }

    SECTION("a target reaching 1 is unreachable") {
        OccupancyTarget target{0.2, 0.8, 1.0, 1.0};
        REQUIRE_THROWS_AS(rates_from_occupancy_target(target, 10.0, 20.0, 0.1),
                          TargetUnreachable);
    }

    SECTION("simulated occupancy tracks a rising target") {
        OccupancyTarget target{0.1, 0.7, 100.0, 1.0};
        const double k_bd = 1.0;
        const auto tab = rates_from_occupancy_target(target, k_bd, 400.0, 1.0);
        TelegraphParams tp;
        tp.rate_table = tab;
        tp.rate_bright_to_dark = k_bd;
        tp.cps_bright = 300.0;
        tp.cps_dark = 100.0;
        const auto s = simulate_trace_detailed(tp, 400.0, 0.1, 31);

        auto bright_fraction = [&](double a, double b) {
            double acc = 0.0;
            const int steps = 4000;
            for (int i = 0; i < steps; ++i) {
                const double t = a + (b - a) * (i + 0.5) / steps;
                if (s.state_at(t) == State::bright) acc += 1.0;
            }
            return acc / steps;
        };
        double target_early = 0.0, target_late = 0.0;
        for (int i = 0; i < 100; ++i) {
            target_early += target.at(0.5 * (i + 0.5));
            target_late += target.at(300.0 + (i + 0.5));
        }
        REQUIRE(bright_fraction(0.0, 50.0) == Catch::Approx(target_early / 100).margin(0.1));
        REQUIRE(bright_fraction(300.0, 400.0) == Catch::Approx(target_late / 100).margin(0.1));
    }
}

TEST_CASE("rate table interpolation and clamping") {
    RateTable tab;
    tab.time = {0.0, 1.0};
    tab.rate = {0.0, 10.0};
    REQUIRE(tab.at(0.5) == Catch::Approx(5.0));
    REQUIRE(tab.at(-1.0) == 0.0);
    REQUIRE(tab.at(2.0) == 10.0);
    REQUIRE(tab.max_rate() == 10.0);

    RateTable bad;
    bad.time = {0.0, 0.0};
    bad.rate = {1.0, 1.0};
    REQUIRE_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("timestamp streams are deterministic, ordered, and rate-correct") {
    EmitterParams ep;
    ep.single_emitter = true;
    ep.excited_lifetime = 20e-9;
    ep.pump_rate = 5e6;
    const double duration = 2.0;
    const auto a = simulate_timestamps(ep, duration, 17);
    const auto b = simulate_timestamps(ep, duration, 17);
    REQUIRE(a.t == b.t);
    REQUIRE_NOTHROW(a.validate());

    const double cycle = 1.0 / ep.pump_rate + ep.excited_lifetime;
    const double expected = duration / cycle;
    REQUIRE(double(a.t.size()) == Catch::Approx(expected).epsilon(0.02));

    EmitterParams bg;
    bg.single_emitter = false;
    bg.background_rate = 1e5;
    const auto p = simulate_timestamps(bg, 1.0, 3);
    REQUIRE(double(p.t.size()) == Catch::Approx(1e5).epsilon(0.02));
}

TEST_CASE("validation rejects malformed simulation inputs") {
    TelegraphParams tp = basic_params();
    tp.cps_bright = tp.cps_dark;
    REQUIRE_THROWS_AS(tp.validate(), DomainError);
    tp = basic_params();
    tp.rate_bright_to_dark = -1.0;
    REQUIRE_THROWS_AS(tp.validate(), DomainError);

    PhotonTrace bad;
    bad.bin_width = 0.0;
    REQUIRE_THROWS_AS(bad.validate(), DomainError);
    bad.bin_width = 0.1;
    bad.counts = {3, -1};
    REQUIRE_THROWS_AS(bad.validate(), DomainError);

    OccupancyTarget t{0.5, 0.6, 1.0, 1.0};
    REQUIRE_THROWS_AS(t.validate(), DomainError);

    EmitterParams ep;
    ep.single_emitter = false;
    ep.background_rate = 0.0;
    REQUIRE_THROWS_AS(ep.validate(), DomainError);

    TimestampStream ts;
    ts.duration = 1.0;
    ts.t = {0.5, 0.5};
    REQUIRE_THROWS_AS(ts.validate(), DomainError);
}
