#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nvdyn/io.hpp"

using namespace nvdyn;
namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;

namespace {

fs::path scratch_dir() {
    static const fs::path p = [] {
        auto d = fs::temp_directory_path() / "nvdyn_io_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

fs::path tmp_path(const std::string& name) { return scratch_dir() / name; }

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("number formatting round-trips the exact double", "[io]") {
    CHECK(io::format_double(0.0) == "0");
    CHECK(io::format_double(0.5) == "0.5");
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(-2e-9) == "-2e-09");
    CHECK(io::format_double(1e5) == "1e+05");
    CHECK(io::format_double(123456.0) == "123456");

    for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -7.25e-12, 1639.0, 5.4321e-7}) {
        const std::string s = io::format_double(v);
        CHECK(io::parse_double(s, 1, 1) == v);
    }

    try {
        io::parse_double("abc", 7, 3);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 7);
        CHECK(e.column == 3);
        CHECK_THAT(e.what(), ContainsSubstring("line 7, column 3"));
    }
    CHECK_THROWS_AS(io::parse_double("1.5x", 1, 1), SchemaError);
    CHECK_THROWS_AS(io::parse_double("inf", 1, 1), SchemaError);
    CHECK_THROWS_AS(io::parse_long("4.2", 1, 1), SchemaError);
    CHECK_THROWS_AS(io::parse_long("", 1, 1), SchemaError);
    CHECK(io::parse_long("42", 1, 1) == 42);
}

TEST_CASE("atomic write creates directories and leaves no temp file", "[io]") {
    const fs::path p = tmp_path("a/b/c.txt");
    io::atomic_write(p, "one");
    CHECK(io::read_file(p) == "one");
    CHECK(!fs::exists(p.string() + ".tmp"));
    io::atomic_write(p, "two");
    CHECK(io::read_file(p) == "two");
    CHECK(!fs::exists(p.string() + ".tmp"));
}

TEST_CASE("trace files match the pinned schema", "[io]") {
    trace_sim::PhotonTrace t;
    t.bin_width = 0.5;
    t.counts = {3, 5};
    t.meta.bias_v = 5.0;
    t.meta.power_mw = 1.0;
    const fs::path p = tmp_path("golden_trace.csv");
    io::save_trace(t, p);

    CHECK(io::read_file(p) == "t_s,counts\n0,3\n0.5,5\n");
    CHECK(io::read_file(io::sidecar_path(p)) ==
          "{\n"
          "  \"bin_width_s\": 0.5,\n"
          "  \"bias_V\": 5.0,\n"
          "  \"power_mW\": 1.0,\n"
          "  \"start_time_s\": 0.0\n"
          "}\n");
}

TEST_CASE("trace round-trip preserves every field", "[io]") {
    trace_sim::PhotonTrace t;
    t.bin_width = 0.1;
    t.counts = {0, 3, 17, 2, 9};
    t.meta.bias_v = 7.0;
    t.meta.power_mw = 0.25;
    t.meta.start_time_s = 12.5;
    const fs::path p = tmp_path("trace_rt.csv");
    io::save_trace(t, p);

    const auto back = io::load_trace(p);
    CHECK(back.bin_width == t.bin_width);
    CHECK(back.counts == t.counts);
    CHECK(back.meta.bias_v == t.meta.bias_v);
    CHECK(back.meta.power_mw == t.meta.power_mw);
    CHECK(back.meta.start_time_s == t.meta.start_time_s);
}

TEST_CASE("trace loads without a sidecar by inferring the bin width", "[io]") {
    trace_sim::PhotonTrace t;
    t.bin_width = 0.5;
    t.counts = {3, 5, 7};
    t.meta.bias_v = 9.0;
    const fs::path p = tmp_path("trace_nosc.csv");
    io::save_trace(t, p);
    fs::remove(io::sidecar_path(p));

    const auto back = io::load_trace(p);
    CHECK(back.bin_width == 0.5);
    CHECK(back.counts == t.counts);
    CHECK(back.meta.bias_v == 0.0);
    CHECK(back.meta.start_time_s == 0.0);

    const fs::path single = tmp_path("trace_single.csv");
    write_text(single, "t_s,counts\n0,4\n");
    CHECK_THROWS_AS(io::load_trace(single), SchemaError);

    const fs::path uneven = tmp_path("trace_uneven.csv");
    write_text(uneven, "t_s,counts\n0,1\n0.5,2\n1.2,3\n");
    try {
        io::load_trace(uneven);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 4);
        CHECK_THAT(e.what(), ContainsSubstring("uniformly spaced"));
    }
}

TEST_CASE("trace rejects malformed rows with the offending location", "[io]") {
    const fs::path p = tmp_path("trace_bad.csv");

    write_text(p, "time,counts\n0,3\n0.5,5\n");
    try {
        io::load_trace(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 1);
        CHECK_THAT(e.what(), ContainsSubstring("t_s"));
    }

    write_text(p, "t_s,counts\n0\n");
    CHECK_THROWS_AS(io::load_trace(p), SchemaError);

    write_text(p, "t_s,counts\n0,-3\n0.5,2\n");
    try {
        io::load_trace(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 2);
        CHECK(e.column == 3);
    }

    write_text(p, "t_s,counts\n0,2.5\n0.5,2\n");
    CHECK_THROWS_AS(io::load_trace(p), SchemaError);

    write_text(p, "t_s,counts\n");
    CHECK_THROWS_WITH(io::load_trace(p), ContainsSubstring("no data rows"));

    write_text(p, "");
    CHECK_THROWS_WITH(io::load_trace(p), ContainsSubstring("empty file"));
}

TEST_CASE("trace reader tolerates CRLF and a missing final newline", "[io]") {
    const fs::path p = tmp_path("trace_crlf.csv");
    write_text(p, "t_s,counts\r\n0,3\r\n0.5,5");
    const auto back = io::load_trace(p);
    CHECK(back.bin_width == 0.5);
    CHECK(back.counts == std::vector<long>{3, 5});
}

TEST_CASE("timestamp files round-trip and require their sidecar", "[io]") {
    trace_sim::TimestampStream ts;
    ts.t = {0.25, 1.5, 2.75};
    ts.duration = 4.0;
    const fs::path p = tmp_path("stamps.csv");
    io::save_timestamps(ts, p);

    CHECK(io::read_file(p) == "t_s\n0.25\n1.5\n2.75\n");
    CHECK(io::read_file(io::sidecar_path(p)) == "{\n  \"duration_s\": 4.0\n}\n");

    const auto back = io::load_timestamps(p);
    CHECK(back.t == ts.t);
    CHECK(back.duration == 4.0);

    trace_sim::TimestampStream empty;
    empty.duration = 1.0;
    const fs::path pe = tmp_path("stamps_empty.csv");
    io::save_timestamps(empty, pe);
    const auto back_empty = io::load_timestamps(pe);
    CHECK(back_empty.t.empty());
    CHECK(back_empty.duration == 1.0);

    fs::remove(io::sidecar_path(p));
    CHECK_THROWS_WITH(io::load_timestamps(p), ContainsSubstring("cannot open"));
}

TEST_CASE("timestamp reader enforces order and bounds", "[io]") {
    const fs::path p = tmp_path("stamps_bad.csv");
    write_text(p, "t_s\n1\n1\n");
    write_text(io::sidecar_path(p), "{\"duration_s\": 2.0}\n");
    try {
        io::load_timestamps(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 3);
    }

    write_text(p, "t_s\n5\n");
    CHECK_THROWS_AS(io::load_timestamps(p), DomainError);
}

TEST_CASE("spectrum files round-trip with optional metadata", "[io]") {
    spectra::Spectrum s;
    s.wavelength_nm = {600.0, 650.0, 700.0};
    s.intensity = {1.0, 0.25, 0.0};
    s.meta.bias_v = 10.0;
    s.meta.power_mw = 0.5;
    const fs::path p = tmp_path("spec.csv");
    io::save_spectrum(s, p);

    CHECK(io::read_file(p) == "wavelength_nm,intensity\n600,1\n650,0.25\n700,0\n");

    const auto back = io::load_spectrum(p);
    CHECK(back.wavelength_nm == s.wavelength_nm);
    CHECK(back.intensity == s.intensity);
    CHECK(back.meta.bias_v == 10.0);
    CHECK(back.meta.power_mw == 0.5);

    fs::remove(io::sidecar_path(p));
    const auto bare = io::load_spectrum(p);
    CHECK(bare.meta.bias_v == 0.0);
    CHECK(bare.meta.power_mw == 0.0);
}

TEST_CASE("spectrum reader rejects bad grids and negative values", "[io]") {
    const fs::path p = tmp_path("spec_bad.csv");

    write_text(p, "wavelength_nm,intensity\n600,1\n600,2\n");
    try {
        io::load_spectrum(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 3);
        CHECK(e.column == 1);
    }

    write_text(p, "wavelength_nm,intensity\n600,1\n650,-0.25\n");
    try {
        io::load_spectrum(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 3);
        CHECK(e.column == 5);
    }

    write_text(p, "wavelength_nm,intensity\n600,1\n");
    CHECK_THROWS_AS(io::load_spectrum(p), DomainError);
}

TEST_CASE("occupancy series round-trip with window fallback", "[io]") {
    inference::OccupancySeries o;
    o.window = 1.0;
    o.times = {0.5, 1.5, 2.5};
    o.p_bright = {0.0, 0.5, 1.0};
    const fs::path p = tmp_path("occ.csv");
    io::save_occupancy(o, p);

    const auto back = io::load_occupancy(p);
    CHECK(back.window == 1.0);
    CHECK(back.times == o.times);
    CHECK(back.p_bright == o.p_bright);

    fs::remove(io::sidecar_path(p));
    CHECK(io::load_occupancy(p).window == 1.0);

    const fs::path one = tmp_path("occ_one.csv");
    write_text(one, "t_s,p_bright\n0.5,0.25\n");
    CHECK(io::load_occupancy(one).window == 0.0);

    const fs::path bad = tmp_path("occ_bad.csv");
    write_text(bad, "t_s,p_bright\n0.5,1.5\n");
    CHECK_THROWS_AS(io::load_occupancy(bad), SchemaError);
}

TEST_CASE("dataset files round-trip with and without sigma", "[io]") {
    fitting::Dataset d;
    d.x = {1.0, 2.0, 3.0};
    d.y = {0.5, 0.25, 0.125};
    const fs::path p = tmp_path("data.csv");
    io::save_dataset(d, p);
    CHECK(io::read_file(p) == "x,y\n1,0.5\n2,0.25\n3,0.125\n");
    auto back = io::load_dataset(p);
    CHECK(back.x == d.x);
    CHECK(back.y == d.y);
    CHECK(back.sigma.empty());

    d.sigma = {0.1, 0.2, 0.3};
    io::save_dataset(d, p);
    CHECK(io::read_file(p) == "x,y,sigma\n1,0.5,0.1\n2,0.25,0.2\n3,0.125,0.3\n");
    back = io::load_dataset(p);
    CHECK(back.sigma == d.sigma);

    write_text(p, "x,y,sigma\n1,2,0\n");
    CHECK_THROWS_WITH(io::load_dataset(p), ContainsSubstring("sigma"));
    write_text(p, "x,y\n1,2,3\n");
    CHECK_THROWS_WITH(io::load_dataset(p), ContainsSubstring("inconsistent"));
    write_text(p, "");
    CHECK_THROWS_WITH(io::load_dataset(p), ContainsSubstring("empty file"));
}

TEST_CASE("g2 histogram export matches the pinned schema", "[io]") {
    estimators::CorrelationHistogram h;
    h.tau_bins = {-2e-9, 0.0, 2e-9};
    h.g2 = {0.5, 1.0, 0.75};
    h.counts = {2, 4, 3};
    const fs::path p = tmp_path("g2.csv");
    io::save_g2(h, p);
    CHECK(io::read_file(p) == "tau_s,g2,coincidences\n-2e-09,0.5,2\n0,1,4\n2e-09,0.75,3\n");
}

TEST_CASE("fit result JSON round-trips and validates", "[io]") {
    const auto& spec = fitting::model_spec("exp_decay");
    fitting::FitResult r;
    r.model = spec.id;
    r.param_names = spec.param_names;
    r.params = {1.5, 2.25, 10.0};
    r.std_errors = {0.1, 0.0, 0.5};
    r.chi2 = 3.75;
    r.dof = 7;
    r.converged = true;
    r.n_iter = 12;

    const fs::path p = tmp_path("fit.json");
    io::save_fit_result(r, p);
    const auto back = io::load_fit_result(p);
    CHECK(back.model == r.model);
    CHECK(back.param_names == r.param_names);
    CHECK(back.params == r.params);
    CHECK(back.std_errors == r.std_errors);
    CHECK(back.chi2 == r.chi2);
    CHECK(back.dof == r.dof);
    CHECK(back.converged == r.converged);
    CHECK(back.n_iter == r.n_iter);

    io::json j = io::fit_result_to_json(r);
    j["model_id"] = "nope";
    io::atomic_write(p, j.dump());
    CHECK_THROWS_AS(io::load_fit_result(p), DomainError);

    j = io::fit_result_to_json(r);
    j["params"].erase("tau");
    io::atomic_write(p, j.dump());
    CHECK_THROWS_WITH(io::load_fit_result(p), ContainsSubstring("tau"));

    j = io::fit_result_to_json(r);
    j["params"]["tau"]["stderr"] = -1.0;
    io::atomic_write(p, j.dump());
    CHECK_THROWS_WITH(io::load_fit_result(p), ContainsSubstring("stderr"));

    io::atomic_write(p, "{ nope\n");
    try {
        io::load_fit_result(p);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line >= 1);
        CHECK_THAT(e.what(), ContainsSubstring("fit result"));
    }
}

TEST_CASE("hmm JSON round-trips and validates on load", "[io]") {
    inference::PoissonHmm h;
    h.initial_prob = {0.6, 0.4};
    h.transition = {{{0.9, 0.1}, {0.2, 0.8}}};
    h.lambda = {4.0, 11.0};

    const fs::path p = tmp_path("hmm.json");
    io::save_hmm(h, p);
    const auto back = io::load_hmm(p);
    CHECK(back.initial_prob == h.initial_prob);
    CHECK(back.transition == h.transition);
    CHECK(back.lambda == h.lambda);

    const io::json j = io::detail_io::parse_json(io::read_file(p), "hmm");
    CHECK(j.contains("initial_prob"));
    CHECK(j.contains("transition"));
    CHECK(j.contains("lambda_counts_per_bin"));

    io::json bad = io::hmm_to_json(h);
    bad["lambda_counts_per_bin"] = {1.0, 2.0, 3.0};
    io::atomic_write(p, bad.dump());
    CHECK_THROWS_AS(io::load_hmm(p), SchemaError);

    bad = io::hmm_to_json(h);
    bad["transition"][0][1] = 0.2;
    io::atomic_write(p, bad.dump());
    CHECK_THROWS_WITH(io::load_hmm(p), ContainsSubstring("sum to 1"));

    bad = io::hmm_to_json(h);
    bad["lambda_counts_per_bin"] = {11.0, 4.0};
    io::atomic_write(p, bad.dump());
    CHECK_THROWS_AS(io::load_hmm(p), DomainError);
}

TEST_CASE("mixture JSON round-trips and validates on load", "[io]") {
    inference::MixtureFit m;
    m.lambda_dark = 15.0;
    m.lambda_bright = 27.0;
    m.weight_bright = 0.575;
    m.log_likelihood = -123.25;
    m.overlap = 0.417;

    const fs::path p = tmp_path("mix.json");
    io::save_mixture(m, p);
    const auto back = io::load_mixture(p);
    CHECK(back.lambda_dark == m.lambda_dark);
    CHECK(back.lambda_bright == m.lambda_bright);
    CHECK(back.weight_bright == m.weight_bright);
    CHECK(back.log_likelihood == m.log_likelihood);
    CHECK(back.overlap == m.overlap);

    io::json bad = io::mixture_to_json(m);
    bad["lambda_dark_counts_per_bin"] = 30.0;
    io::atomic_write(p, bad.dump());
    CHECK_THROWS_AS(io::load_mixture(p), SchemaError);

    bad = io::mixture_to_json(m);
    bad["weight_bright"] = 1.5;
    io::atomic_write(p, bad.dump());
    CHECK_THROWS_AS(io::load_mixture(p), SchemaError);
}

TEST_CASE("rate config round-trips every parameter", "[io]") {
    io::RateConfig cfg;
    cfg.params = photophysics::default_params();
    cfg.zero_bias = photophysics::default_zero_bias();
    cfg.biased = photophysics::default_biased();

    const fs::path p = tmp_path("rates.json");
    io::save_rate_config(cfg, p);
    const auto back = io::load_rate_config(p);

    CHECK(back.version == 1);
    CHECK(back.params.pump_rate_minus == cfg.params.pump_rate_minus);
    CHECK(back.params.pump_rate_zero == cfg.params.pump_rate_zero);
    CHECK(back.params.rad_decay_minus == cfg.params.rad_decay_minus);
    CHECK(back.params.rad_decay_zero == cfg.params.rad_decay_zero);
    CHECK(back.params.isc_up == cfg.params.isc_up);
    CHECK(back.params.isc_down == cfg.params.isc_down);
    CHECK(back.params.ionize_coeff == cfg.params.ionize_coeff);
    CHECK(back.params.recomb_coeff == cfg.params.recomb_coeff);
    CHECK(back.params.hole_capture_coeff == cfg.params.hole_capture_coeff);
    CHECK(back.params.detection_efficiency == cfg.params.detection_efficiency);
    CHECK(back.params.background_slope == cfg.params.background_slope);
    CHECK(back.zero_bias.tag == cfg.zero_bias.tag);
    CHECK(back.zero_bias.hole_density_factor == cfg.zero_bias.hole_density_factor);
    CHECK(back.zero_bias.electron_density_factor == cfg.zero_bias.electron_density_factor);
    CHECK(back.biased.tag == cfg.biased.tag);
    CHECK(back.biased.hole_density_factor == cfg.biased.hole_density_factor);
    CHECK(back.biased.electron_density_factor == cfg.biased.electron_density_factor);

    io::json j = io::detail_io::parse_json(io::read_file(p), "rate config");
    j["rate_params"].erase("isc_up_per_s");
    io::atomic_write(p, j.dump());
    CHECK_THROWS_WITH(io::load_rate_config(p), ContainsSubstring("isc_up_per_s"));

    j = io::detail_io::parse_json(io::read_file(p), "rate config");
    j["rate_params"]["isc_up_per_s"] = 2.4e7;
    j["rate_params"]["rad_decay_minus_per_s"] = -1.0;
    io::atomic_write(p, j.dump());
    CHECK_THROWS_AS(io::load_rate_config(p), DomainError);
}

TEST_CASE("shipped default parameter file matches the built-in defaults", "[io]") {
    const fs::path p = fs::path(NVDYN_REPO_DIR) / "configs" / "nv_default_params.json";
    REQUIRE(fs::exists(p));
    const auto cfg = io::load_rate_config(p);
    const auto rp = photophysics::default_params();

    CHECK(cfg.version == 1);
    CHECK(cfg.params.pump_rate_minus == rp.pump_rate_minus);
    CHECK(cfg.params.pump_rate_zero == rp.pump_rate_zero);
    CHECK(cfg.params.rad_decay_minus == rp.rad_decay_minus);
    CHECK(cfg.params.rad_decay_zero == rp.rad_decay_zero);
    CHECK(cfg.params.isc_up == rp.isc_up);
    CHECK(cfg.params.isc_down == rp.isc_down);
    CHECK(cfg.params.ionize_coeff == rp.ionize_coeff);
    CHECK(cfg.params.recomb_coeff == rp.recomb_coeff);
    CHECK(cfg.params.hole_capture_coeff == rp.hole_capture_coeff);
    CHECK(cfg.params.detection_efficiency == rp.detection_efficiency);
    CHECK(cfg.params.background_slope == rp.background_slope);
    CHECK(cfg.zero_bias.tag == photophysics::default_zero_bias().tag);
    CHECK(cfg.zero_bias.hole_density_factor ==
          photophysics::default_zero_bias().hole_density_factor);
    CHECK(cfg.biased.tag == photophysics::default_biased().tag);
    CHECK(cfg.biased.hole_density_factor == photophysics::default_biased().hole_density_factor);
    CHECK(cfg.biased.electron_density_factor ==
          photophysics::default_biased().electron_density_factor);
}
