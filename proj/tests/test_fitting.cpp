#include <catch2/catch_amalgamated.hpp>

#include <nvdyn/fitting.hpp>
#include <nvdyn/rng.hpp>

#include <cmath>
#include <vector>

using namespace nvdyn;
using namespace nvdyn::fitting;

namespace {

Dataset from_model(ModelId id, const std::vector<double>& p, const std::vector<double>& xs) {
    Dataset d;
    d.x = xs;
    for (double x : xs) d.y.push_back(eval_model(id, p, x));
    return d;
}

std::vector<double> linspace(double a, double b, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(a + (b - a) * i / (n - 1));
    return v;
}

}  // namespace

TEST_CASE("model evaluation matches hand-computed values") {
    REQUIRE(eval_model(ModelId::compressed_exp, {0.0, 1.0, 100.0, 1.0}, 100.0) ==
            Catch::Approx(1.0 - std::exp(-1.0)).epsilon(1e-14));
    REQUIRE(eval_model(ModelId::compressed_exp, {0.25, 0.5, 100.0, 5.0}, 0.0) == 0.25);
    REQUIRE(eval_model(ModelId::exp_decay, {1.0, 2.0, 5.0}, 5.0) ==
            Catch::Approx(1.0 + 2.0 * std::exp(-1.0)).epsilon(1e-14));
    REQUIRE(eval_model(ModelId::double_exp, {1.0, 2.0, 3.0, 4.0, 5.0}, 0.0) == 7.0);
    REQUIRE(eval_model(ModelId::hyperbolic, {272.0, 185.0}, 2.0) == Catch::Approx(364.5));
    REQUIRE(eval_model(ModelId::lorentzian_dip, {100.0, 0.2, 2870.0, 8.0}, 2870.0) ==
            Catch::Approx(80.0).epsilon(1e-14));
    // half width from center: dip at half depth
    REQUIRE(eval_model(ModelId::lorentzian_dip, {100.0, 0.2, 2870.0, 8.0}, 2874.0) ==
            Catch::Approx(90.0).epsilon(1e-14));
    REQUIRE(eval_model(ModelId::saturation_empirical, {10.0, 5.0, 0.3}, 5.0) ==
            Catch::Approx(6.5).epsilon(1e-14));
}

TEST_CASE("parameter and x domain checks") {
    REQUIRE_THROWS_AS(check_params(ModelId::exp_decay, {0.0, 1.0}), DomainError);
    REQUIRE_THROWS_AS(check_params(ModelId::exp_decay, {0.0, 1.0, 0.0}), DomainError);
    REQUIRE_THROWS_AS(check_params(ModelId::compressed_exp, {0.0, 1.0, 10.0, -2.0}), DomainError);
    REQUIRE_THROWS_AS(check_params(ModelId::lorentzian_dip, {1.0, 0.1, 2870.0, 0.0}), DomainError);
    REQUIRE_THROWS_AS(check_params(ModelId::saturation_empirical, {1.0, 0.0, 0.1}), DomainError);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(check_params(ModelId::hyperbolic, {nan, 1.0}), DomainError);

    REQUIRE_THROWS_AS(eval_model(ModelId::compressed_exp, {0.0, 1.0, 10.0, 1.0}, -1.0),
                      DomainError);
    REQUIRE_THROWS_AS(eval_model(ModelId::hyperbolic, {272.0, 185.0}, 0.0), DomainError);
    REQUIRE_NOTHROW(eval_model(ModelId::exp_decay, {0.0, 1.0, 10.0}, -5.0));

    REQUIRE(model_spec("compressed_exp").id == ModelId::compressed_exp);
    REQUIRE_THROWS_AS(model_spec("no_such_model"), DomainError);
}

TEST_CASE("analytic Jacobians agree with finite differences") {
    REQUIRE(jacobian_check(ModelId::compressed_exp, {0.1, 0.5, 100.0, 5.0},
                           linspace(1.0, 300.0, 120)) < 1e-6);
    REQUIRE(jacobian_check(ModelId::exp_decay, {1.0, 5.0, 30.0}, linspace(0.0, 100.0, 60)) < 1e-6);
    REQUIRE(jacobian_check(ModelId::double_exp, {0.1, 2.0, 20.0, 1.0, 150.0},
                           linspace(0.0, 500.0, 100)) < 1e-6);
    REQUIRE(jacobian_check(ModelId::hyperbolic, {272.0, 185.0},
                           {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) < 1e-6);
    REQUIRE(jacobian_check(ModelId::lorentzian_dip, {4.0e4, 0.18, 2870.0, 8.0},
                           linspace(2840.0, 2900.0, 121)) < 1e-6);
    REQUIRE(jacobian_check(ModelId::saturation_empirical, {10.0, 4.0, 0.05},
                           linspace(0.25, 20.0, 80)) < 1e-6);
}

TEST_CASE("reduced linear model reproduces the closed-form least squares solution") {
    // Freezing i_sat = 0 and p_sat = 1 leaves y = b*x, linear in b.
    Dataset d;
    for (int i = 1; i <= 20; ++i) {
        d.x.push_back(double(i));
        d.y.push_back(0.7 * i + 0.01 * ((i % 3) - 1));
    }

    SECTION("unweighted") {
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < d.x.size(); ++i) {
            sxy += d.x[i] * d.y[i];
            sxx += d.x[i] * d.x[i];
        }
        const double b_exact = sxy / sxx;

        Bounds bd{{0.0, 1.0, -1e12}, {0.0, 1.0, 1e12}};
        auto fit = lm_fit(ModelId::saturation_empirical, d, {0.0, 1.0, 0.1}, bd);
        REQUIRE(fit.converged);
        REQUIRE(fit.params[2] == Catch::Approx(b_exact).epsilon(1e-10));
        REQUIRE(fit.dof == 19);
        REQUIRE(fit.std_errors[0] == 0.0);
        REQUIRE(fit.std_errors[1] == 0.0);
        REQUIRE(fit.std_errors[2] > 0.0);
    }

    SECTION("weighted") {
        for (std::size_t i = 0; i < d.x.size(); ++i) d.sigma.push_back(1.0 + double(i % 2));
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < d.x.size(); ++i) {
            const double w = 1.0 / (d.sigma[i] * d.sigma[i]);
            sxy += w * d.x[i] * d.y[i];
            sxx += w * d.x[i] * d.x[i];
        }
        const double b_exact = sxy / sxx;

        Bounds bd{{0.0, 1.0, -1e12}, {0.0, 1.0, 1e12}};
        auto fit = lm_fit(ModelId::saturation_empirical, d, {0.0, 1.0, 0.1}, bd);
        REQUIRE(fit.params[2] == Catch::Approx(b_exact).epsilon(1e-10));
    }
}

TEST_CASE("noiseless exponential decay is recovered essentially exactly") {
    const std::vector<double> truth = {2.0, 5.0, 30.0};
    auto d = from_model(ModelId::exp_decay, truth, linspace(0.0, 150.0, 40));
    auto fit = lm_fit(ModelId::exp_decay, d, {1.5, 4.0, 50.0});
    REQUIRE(fit.converged);
    for (int k = 0; k < 3; ++k)
        REQUIRE(fit.params[k] == Catch::Approx(truth[k]).epsilon(1e-8));
    REQUIRE(fit.chi2 < 1e-16);
}

TEST_CASE("compressed exponential fit is invariant under rescaling of x") {
    const std::vector<double> truth = {0.01, 0.61, 1022.0, 5.4};
    std::vector<double> xs;
    for (int i = 0; i < 43; ++i) xs.push_back(60.0 * (i + 0.5));
    auto d = from_model(ModelId::compressed_exp, truth, xs);

    Bounds bd{{0.0, 0.0, 1.0, 0.5}, {0.5, 1.0, 1e6, 20.0}};
    auto fit1 = lm_fit(ModelId::compressed_exp, d, {0.0, 0.5, 800.0, 3.0}, bd);
    REQUIRE(fit1.converged);

    const double s = 60.0;
    Dataset ds = d;
    for (double& x : ds.x) x *= s;
    Bounds bds{{0.0, 0.0, s, 0.5}, {0.5, 1.0, s * 1e6, 20.0}};
    auto fit2 = lm_fit(ModelId::compressed_exp, ds, {0.0, 0.5, 800.0 * s, 3.0}, bds);

    REQUIRE(fit2.params[2] / fit1.params[2] == Catch::Approx(s).epsilon(1e-6));
    REQUIRE(fit2.params[3] == Catch::Approx(fit1.params[3]).epsilon(1e-6));
    REQUIRE(fit2.params[1] == Catch::Approx(fit1.params[1]).epsilon(1e-6));
}

TEST_CASE("box bounds are respected at the solution") {
    auto d = from_model(ModelId::exp_decay, {2.0, 5.0, 30.0}, linspace(0.0, 150.0, 40));
    Bounds bd{{-1e12, -1e12, 35.0}, {1e12, 1e12, 100.0}};
    auto fit = lm_fit(ModelId::exp_decay, d, {2.0, 5.0, 50.0}, bd);
    REQUIRE(fit.params[2] >= 35.0 - 1e-12);
    REQUIRE(fit.params[2] <= 100.0 + 1e-12);
    // true tau is below the box, so the fit should pin against the lower edge
    REQUIRE(fit.params[2] == Catch::Approx(35.0).margin(1e-9));
}

TEST_CASE("double exponential results use the canonical tau ordering") {
    const std::vector<double> truth = {0.0, 3.0, 10.0, 2.0, 80.0};
    auto d = from_model(ModelId::double_exp, truth, linspace(0.0, 400.0, 120));
    // init deliberately swapped: slow amplitude first
    auto fit = lm_fit(ModelId::double_exp, d, {0.1, 2.0, 90.0, 3.0, 12.0});
    REQUIRE(fit.converged);
    REQUIRE(fit.params[2] <= fit.params[4]);
    REQUIRE(fit.params[2] == Catch::Approx(10.0).epsilon(1e-5));
    REQUIRE(fit.params[4] == Catch::Approx(80.0).epsilon(1e-5));
    REQUIRE(fit.params[1] == Catch::Approx(3.0).epsilon(1e-5));
    REQUIRE(fit.params[3] == Catch::Approx(2.0).epsilon(1e-5));
}

TEST_CASE("hyperbolic power dependence is recovered from noisy data") {
    const std::vector<double> powers = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
    auto clean = from_model(ModelId::hyperbolic, {272.0, 185.0}, powers);

    SECTION("noiseless") {
        auto fit = lm_fit(ModelId::hyperbolic, clean, {200.0, 100.0});
        REQUIRE(fit.params[0] == Catch::Approx(272.0).epsilon(1e-6));
        REQUIRE(fit.params[1] == Catch::Approx(185.0).epsilon(1e-6));
    }

    SECTION("2 percent multiplicative noise") {
        RandomStream rs(4);
        Dataset d = clean;
        for (double& y : d.y) y *= 1.0 + 0.02 * rs.normal();
        auto fit = lm_fit(ModelId::hyperbolic, d, {200.0, 100.0});
        REQUIRE(fit.converged);
        REQUIRE(fit.params[0] == Catch::Approx(272.0).epsilon(0.05));
    }
}

TEST_CASE("reported standard errors calibrate against Monte Carlo scatter") {
    const std::vector<double> truth = {0.01, 0.61, 1022.0, 5.4};
    std::vector<double> xs;
    for (int i = 0; i < 43; ++i) xs.push_back(60.0 * (i + 0.5));
    auto clean = from_model(ModelId::compressed_exp, truth, xs);

    const double noise = 0.02;
    const int reps = 200;
    Bounds bd{{0.0, 0.0, 1.0, 0.5}, {0.5, 1.0, 1e6, 20.0}};

    std::vector<std::vector<double>> fitted(4);
    std::vector<double> mean_stderr(4, 0.0);
    int used = 0;
    for (int r = 0; r < reps; ++r) {
        RandomStream rs = RandomStream::substream(2024, r);
        Dataset d = clean;
        d.sigma.assign(d.x.size(), noise);
        for (double& y : d.y) y += noise * rs.normal();
        auto fit = lm_fit(ModelId::compressed_exp, d, {0.0, 0.5, 800.0, 4.0}, bd);
        if (!fit.converged) continue;
        ++used;
        for (int k = 0; k < 4; ++k) {
            fitted[k].push_back(fit.params[k]);
            mean_stderr[k] += fit.std_errors[k];
        }
    }
    REQUIRE(used >= reps * 9 / 10);

    for (int k = 0; k < 4; ++k) {
        mean_stderr[k] /= used;
        double m = 0.0;
        for (double v : fitted[k]) m += v;
        m /= used;
        double ss = 0.0;
        for (double v : fitted[k]) ss += (v - m) * (v - m);
        const double sample_sd = std::sqrt(ss / (used - 1));
        REQUIRE(sample_sd < 2.0 * mean_stderr[k]);
        REQUIRE(sample_sd > 0.5 * mean_stderr[k]);
    }
}

TEST_CASE("unidentifiable parameters raise SingularJacobian") {
    auto d = from_model(ModelId::exp_decay, {2.0, 5.0, 30.0}, linspace(0.0, 150.0, 40));
    // A = 0 makes the tau column identically zero
    REQUIRE_THROWS_AS(lm_fit(ModelId::exp_decay, d, {2.0, 0.0, 30.0}), SingularJacobian);
}

TEST_CASE("iteration budget is reported through converged, not an exception") {
    auto d = from_model(ModelId::compressed_exp, {0.01, 0.61, 1022.0, 5.4},
                        linspace(30.0, 2550.0, 43));
    FitOptions opts;
    opts.max_iter = 1;
    auto fit = lm_fit(ModelId::compressed_exp, d, {0.0, 0.3, 100.0, 1.0}, {}, opts);
    REQUIRE_FALSE(fit.converged);
    REQUIRE(fit.n_iter == 1);
}

TEST_CASE("numeric Jacobian fallback reaches the same solution") {
    auto d = from_model(ModelId::exp_decay, {2.0, 5.0, 30.0}, linspace(0.0, 150.0, 40));
    auto fa = lm_fit(ModelId::exp_decay, d, {1.5, 4.0, 50.0});
    FitOptions opts;
    opts.numeric_jacobian = true;
    auto fn = lm_fit(ModelId::exp_decay, d, {1.5, 4.0, 50.0}, {}, opts);
    for (int k = 0; k < 3; ++k)
        REQUIRE(fn.params[k] == Catch::Approx(fa.params[k]).epsilon(1e-6));
}

TEST_CASE("fully frozen fits evaluate without optimizing") {
    auto d = from_model(ModelId::exp_decay, {2.0, 5.0, 30.0}, linspace(0.0, 150.0, 40));
    Bounds bd{{2.0, 5.0, 30.0}, {2.0, 5.0, 30.0}};
    auto fit = lm_fit(ModelId::exp_decay, d, {2.0, 5.0, 30.0}, bd);
    REQUIRE(fit.converged);
    REQUIRE(fit.n_iter == 0);
    REQUIRE(fit.dof == 40);
    REQUIRE(fit.chi2 < 1e-16);
    for (double se : fit.std_errors) REQUIRE(se == 0.0);
}

TEST_CASE("input validation for datasets and bounds") {
    Dataset bad;
    bad.x = {1.0, 2.0};
    bad.y = {1.0};
    REQUIRE_THROWS_AS(bad.validate(1), DomainError);

    Dataset d = from_model(ModelId::exp_decay, {2.0, 5.0, 30.0}, linspace(0.0, 30.0, 10));
    REQUIRE_THROWS_AS(lm_fit(ModelId::exp_decay, d, {2.0, 5.0}), DomainError);
    REQUIRE_THROWS_AS(lm_fit(ModelId::exp_decay, d, {2.0, 5.0, 30.0},
                             Bounds{{0.0, 0.0, 50.0}, {1.0, 1.0, 40.0}}),
                      DomainError);

    Dataset sig = d;
    sig.sigma.assign(sig.x.size(), -1.0);
    REQUIRE_THROWS_AS(sig.validate(1), DomainError);

    // default bounds keep tau positive even when the init wanders
    auto db = default_bounds(ModelId::compressed_exp);
    REQUIRE(db.lo[2] > 0.0);
    REQUIRE(db.lo[3] > 0.0);
}
