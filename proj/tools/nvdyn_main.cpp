// nvdyn: charge-state dynamics toolkit command line.
//
// Subcommands mirror the library modules: simulate (synthetic data),
// infer (HMM / mixture analysis), fit (curve fitting), spectra
// (decomposition), estimate (photon statistics, depletion), scenario
// (end-to-end figure pipelines).
//
// Exit codes: 0 success, 1 domain error (bad data, failed convergence),
// 2 usage error (bad flags or config). All randomness takes an explicit
// --seed. Units are spelled out in flag names.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "nvdyn/common.hpp"
#include "nvdyn/estimators.hpp"
#include "nvdyn/fitting.hpp"
#include "nvdyn/inference.hpp"
#include "nvdyn/io.hpp"
#include "nvdyn/photophysics.hpp"
#include "nvdyn/pipelines.hpp"
#include "nvdyn/spectra.hpp"
#include "nvdyn/trace_sim.hpp"

namespace {

using json = nvdyn::io::json;
using nvdyn::io::format_double;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string json_scalar_to_flag(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConfigError("config: unsupported value " + v.dump());
}

// Config files are JSON. Nested objects select subcommands, leaves map long
// option names (without dashes) to values:
//   {"simulate": {"trace": {"duration-s": 10, "seed": 3}}}
// Values given on the command line always win over the config file.
class JsonConfig : public CLI::Config {
  public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::string text((std::istreambuf_iterator<char>(input)),
                         std::istreambuf_iterator<char>());
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw CLI::ConfigError(std::string("config: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConfigError("config: top level must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        walk(j, {}, items);
        return items;
    }

    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        return app_to_json(app, default_also).dump(2) + "\n";
    }

  private:
    static void walk(const json& j, std::vector<std::string> parents,
                     std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, v] : j.items()) {
            if (v.is_object()) {
                auto p = parents;
                p.push_back(key);
                walk(v, std::move(p), out);
            } else {
                CLI::ConfigItem item;
                item.parents = parents;
                item.name = key;
                if (v.is_array())
                    for (const auto& e : v) item.inputs.push_back(json_scalar_to_flag(e));
                else
                    item.inputs.push_back(json_scalar_to_flag(v));
                out.push_back(std::move(item));
            }
        }
    }

    static json app_to_json(const CLI::App* app, bool default_also) {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options()) {
            if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
            const std::string name = opt->get_lnames().front();
            if (opt->count() > 0)
                j[name] = opt->results().size() == 1 ? json(opt->results().front())
                                                     : json(opt->results());
            else if (default_also && !opt->get_default_str().empty())
                j[name] = opt->get_default_str();
        }
        for (const CLI::App* sub :
             app->get_subcommands([](const CLI::App*) { return true; })) {
            json js = app_to_json(sub, default_also);
            if (!js.empty()) j[sub->get_name()] = js;
        }
        return j;
    }
};

std::string join(const std::vector<std::string>& v, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

// "a=1,b=2.5" -> map. Used by --init/--lo/--hi/--override.
std::map<std::string, double> parse_kv(const std::string& flag, const std::string& text) {
    std::map<std::string, double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        const std::string item = text.substr(pos, comma - pos);
        const std::size_t eq = item.find('=');
        if (item.empty() || eq == std::string::npos || eq == 0)
            throw UsageError(flag + ": expected comma-separated name=value pairs, got '" +
                             item + "'");
        const std::string key = item.substr(0, eq);
        try {
            out[key] = nvdyn::io::parse_double(item.substr(eq + 1), 0, 0);
        } catch (const nvdyn::SchemaError& e) {
            throw UsageError(flag + ": " + e.what());
        }
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    return out;
}

std::vector<double> params_in_order(const std::string& flag, const std::string& text,
                                    const nvdyn::fitting::ModelSpec& spec) {
    auto kv = parse_kv(flag, text);
    std::vector<double> out;
    for (const auto& name : spec.param_names) {
        const auto it = kv.find(name);
        if (it == kv.end())
            throw UsageError(flag + ": missing '" + name + "' (model " + spec.name +
                             " expects " + join(spec.param_names, ",") + ")");
        out.push_back(it->second);
        kv.erase(it);
    }
    if (!kv.empty())
        throw UsageError(flag + ": unknown parameter '" + kv.begin()->first + "' (model " +
                         spec.name + " expects " + join(spec.param_names, ",") + ")");
    return out;
}

std::vector<std::string> model_names() {
    std::vector<std::string> names;
    for (const auto& m : nvdyn::fitting::all_models()) names.push_back(m.name);
    return names;
}

nvdyn::inference::PoissonHmm hmm_for(const std::string& hmm_path,
                                     const nvdyn::trace_sim::PhotonTrace& trace) {
    if (!hmm_path.empty()) return nvdyn::io::load_hmm(hmm_path);
    const auto bw = nvdyn::inference::baum_welch(
        trace, nvdyn::inference::quantile_init(trace.counts));
    return bw.hmm;
}

void print_fit(const nvdyn::fitting::FitResult& fit) {
    std::cout << "model: " << nvdyn::fitting::model_spec(fit.model).name << "\n";
    for (std::size_t i = 0; i < fit.params.size(); ++i)
        std::cout << "  " << fit.param_names[i] << " = " << format_double(fit.params[i])
                  << " +/- " << format_double(fit.std_errors[i]) << "\n";
    std::cout << "chi2 = " << format_double(fit.chi2) << ", dof = " << fit.dof
              << ", converged = " << (fit.converged ? "true" : "false")
              << ", iterations = " << fit.n_iter << "\n";
}

struct SimulateTraceOpts {
    std::uint64_t seed = 0;
    double duration_s = 0, bin_ms = 0;
    double k_db_per_s = -1, k_bd_per_s = 0;
    double cps_bright = 0, cps_dark = 0;
    double bias_v = 0, power_mw = 0, start_time_s = 0;
    std::string rate_table_csv, start_state = "dark", out;
};

void cmd_simulate_trace(const SimulateTraceOpts& o) {
    namespace ts = nvdyn::trace_sim;
    ts::TelegraphParams tp;
    tp.rate_bright_to_dark = o.k_bd_per_s;
    tp.cps_bright = o.cps_bright;
    tp.cps_dark = o.cps_dark;
    if (!o.rate_table_csv.empty()) {
        const auto d = nvdyn::io::load_dataset(o.rate_table_csv);
        ts::RateTable tab;
        tab.time = d.x;
        tab.rate = d.y;
        tp.rate_table = std::move(tab);
        tp.rate_dark_to_bright = 0.0;
    } else if (o.k_db_per_s >= 0) {
        tp.rate_dark_to_bright = o.k_db_per_s;
    } else {
        throw UsageError(
            "--k-db-per-s: required unless --rate-table-csv supplies a time-varying rate");
    }
    if (o.start_state != "dark" && o.start_state != "bright")
        throw UsageError("--start-state: expected 'dark' or 'bright', got '" + o.start_state +
                         "'");
    ts::TraceMeta meta{o.bias_v, o.power_mw, o.start_time_s};
    const auto trace = ts::simulate_trace(
        tp, o.duration_s, o.bin_ms * 1e-3, o.seed,
        o.start_state == "dark" ? ts::State::dark : ts::State::bright, meta);
    nvdyn::io::save_trace(trace, o.out);
    long total = 0;
    for (long c : trace.counts) total += c;
    std::cout << "wrote " << o.out << " (" << trace.counts.size() << " bins, " << total
              << " counts)\n";
}

struct SimulateTimestampsOpts {
    std::uint64_t seed = 0;
    double duration_s = 0, lifetime_ns = 20.0, pump_per_s = 5e6, background_cps = 0;
    bool background_only = false;
    std::string out;
};

void cmd_simulate_timestamps(const SimulateTimestampsOpts& o) {
    nvdyn::trace_sim::EmitterParams ep;
    ep.single_emitter = !o.background_only;
    ep.excited_lifetime = o.lifetime_ns * 1e-9;
    ep.pump_rate = o.pump_per_s;
    ep.background_rate = o.background_cps;
    const auto stream = nvdyn::trace_sim::simulate_timestamps(ep, o.duration_s, o.seed);
    nvdyn::io::save_timestamps(stream, o.out);
    std::cout << "wrote " << o.out << " (" << stream.t.size() << " photons over "
              << format_double(stream.duration) << " s)\n";
}

struct InferOpts {
    std::string in, out, hmm;
    int max_iter = 100;
    double tol = 1e-6;
    double window_s = 0;
};

void cmd_infer_hmm(const InferOpts& o) {
    const auto trace = nvdyn::io::load_trace(o.in);
    const auto bw = nvdyn::inference::baum_welch(
        trace, nvdyn::inference::quantile_init(trace.counts), o.max_iter, o.tol);
    nvdyn::io::save_hmm(bw.hmm, o.out);
    std::cout << "wrote " << o.out << "\n"
              << "lambda_dark = " << format_double(bw.hmm.lambda[0])
              << ", lambda_bright = " << format_double(bw.hmm.lambda[1]) << " counts/bin\n"
              << "iterations = " << bw.ll_history.size()
              << ", log_likelihood = " << format_double(bw.ll_history.back())
              << ", converged = " << (bw.converged ? "true" : "false") << "\n";
    if (bw.degenerate_lambdas)
        std::cout << "warning: emission rates nearly identical; states weakly identified\n";
}

void cmd_infer_viterbi(const InferOpts& o) {
    const auto trace = nvdyn::io::load_trace(o.in);
    const auto hmm = hmm_for(o.hmm, trace);
    const auto vit = nvdyn::inference::viterbi(hmm, trace);
    std::string csv = "t_s,state\n";
    long switches = 0;
    for (std::size_t i = 0; i < vit.path.size(); ++i) {
        csv += format_double(trace.meta.start_time_s +
                             static_cast<double>(i) * trace.bin_width) +
               "," + std::to_string(vit.path[i]) + "\n";
        if (i > 0 && vit.path[i] != vit.path[i - 1]) ++switches;
    }
    nvdyn::io::atomic_write(o.out, csv);
    std::cout << "wrote " << o.out << " (" << switches << " switches, log_prob = "
              << format_double(vit.log_prob) << ")\n";
}

void cmd_infer_mixture(const InferOpts& o) {
    const auto trace = nvdyn::io::load_trace(o.in);
    const auto mix = nvdyn::inference::poisson_mixture_em(trace.counts, o.max_iter, o.tol);
    nvdyn::io::save_mixture(mix, o.out);
    std::cout << "wrote " << o.out << "\n"
              << "weight_bright = " << format_double(mix.weight_bright)
              << ", lambda_dark = " << format_double(mix.lambda_dark)
              << ", lambda_bright = " << format_double(mix.lambda_bright)
              << ", overlap = " << format_double(mix.overlap) << "\n";
}

void cmd_infer_occupancy(const InferOpts& o) {
    const auto trace = nvdyn::io::load_trace(o.in);
    const auto hmm = hmm_for(o.hmm, trace);
    const auto post = nvdyn::inference::forward_backward(hmm, trace);
    const auto occ = nvdyn::inference::occupancy_timeseries(post, trace, o.window_s);
    nvdyn::io::save_occupancy(occ, o.out);
    std::cout << "wrote " << o.out << " (" << occ.times.size() << " windows of "
              << format_double(occ.window) << " s)\n";
}

struct FitOpts {
    std::string model, in, init, lo, hi, out;
    int max_iter = 200;
};

void cmd_fit(const FitOpts& o) {
    namespace ft = nvdyn::fitting;
    const auto& spec = ft::model_spec(o.model);
    const auto data = nvdyn::io::load_dataset(o.in);
    const auto init = params_in_order("--init", o.init, spec);
    ft::Bounds bounds = ft::default_bounds(spec.id);
    auto apply_bounds = [&](const std::string& flag, const std::string& text,
                            std::vector<double>& dst) {
        if (text.empty()) return;
        for (const auto& [name, value] : parse_kv(flag, text)) {
            const auto it =
                std::find(spec.param_names.begin(), spec.param_names.end(), name);
            if (it == spec.param_names.end())
                throw UsageError(flag + ": unknown parameter '" + name + "' (model " +
                                 spec.name + " expects " + join(spec.param_names, ",") + ")");
            dst[static_cast<std::size_t>(it - spec.param_names.begin())] = value;
        }
    };
    apply_bounds("--lo", o.lo, bounds.lo);
    apply_bounds("--hi", o.hi, bounds.hi);
    ft::FitOptions fopt;
    fopt.max_iter = o.max_iter;
    const auto fit = ft::lm_fit(spec.id, data, init, bounds, fopt);
    print_fit(fit);
    if (!o.out.empty()) {
        nvdyn::io::save_fit_result(fit, o.out);
        std::cout << "wrote " << o.out << "\n";
    }
}

struct SpectraOpts {
    std::string in, in_0v, in_biased, ref_minus, ref_zero, out;
    double weight = -1.0;
    double lo_nm = 0, hi_nm = 0;
    bool include_raman_notch = false;
    double notch_center_nm = 572.0, notch_half_width_nm = 2.0;
    std::vector<std::string> windows;
};

void cmd_spectra_build_ref(const SpectraOpts& o) {
    namespace sp = nvdyn::spectra;
    const auto s0 = nvdyn::io::load_spectrum(o.in_0v);
    const auto s10 = nvdyn::io::load_spectrum(o.in_biased);
    const double w = o.weight >= 0 ? o.weight : sp::choose_subtraction_weight(s0, s10);
    const auto ref0 = sp::build_nv0_reference(s0, s10, w);
    nvdyn::io::save_spectrum(ref0, o.out);
    std::cout << "wrote " << o.out << " (subtraction weight " << format_double(w) << ")\n";
}

void cmd_spectra_decompose(const SpectraOpts& o) {
    namespace sp = nvdyn::spectra;
    const auto basis = sp::make_basis(nvdyn::io::load_spectrum(o.ref_minus),
                                      nvdyn::io::load_spectrum(o.ref_zero));
    const auto s = sp::resample(nvdyn::io::load_spectrum(o.in), basis.ref_minus.wavelength_nm);
    const auto dec = sp::nnls_decompose(s, basis);
    std::cout << "a_minus = " << format_double(dec.a_minus)
              << ", a_zero = " << format_double(dec.a_zero)
              << ", fraction_zero = " << format_double(dec.fraction_zero)
              << ", residual_norm = " << format_double(dec.residual_norm) << "\n";
    if (!o.out.empty()) {
        json j;
        j["a_minus"] = dec.a_minus;
        j["a_zero"] = dec.a_zero;
        j["residual_norm"] = dec.residual_norm;
        j["fraction_zero"] = dec.fraction_zero;
        nvdyn::io::atomic_write(o.out, j.dump(2) + "\n");
        std::cout << "wrote " << o.out << "\n";
    }
}

nvdyn::spectra::WindowOptions window_options(const SpectraOpts& o) {
    nvdyn::spectra::WindowOptions w;
    w.exclude_raman_notch = !o.include_raman_notch;
    w.notch_center_nm = o.notch_center_nm;
    w.notch_half_width_nm = o.notch_half_width_nm;
    return w;
}

void cmd_spectra_integrate(const SpectraOpts& o) {
    const auto s = nvdyn::io::load_spectrum(o.in);
    const double area = nvdyn::spectra::integrate_window(s, o.lo_nm, o.hi_nm, window_options(o));
    std::cout << "area[" << format_double(o.lo_nm) << "," << format_double(o.hi_nm)
              << "] = " << format_double(area) << "\n";
}

void cmd_spectra_tailcorr(const SpectraOpts& o) {
    namespace sp = nvdyn::spectra;
    if (o.windows.size() < 2)
        throw UsageError("--window: need at least two bands, one of them 550:700");
    const auto basis = sp::make_basis(nvdyn::io::load_spectrum(o.ref_minus),
                                      nvdyn::io::load_spectrum(o.ref_zero));
    std::vector<std::pair<sp::BandWindow, double>> tails;
    for (const auto& w : o.windows) {
        // "lo:hi=area", e.g. 550:700=1.0
        const std::size_t colon = w.find(':');
        const std::size_t eq = w.find('=');
        if (colon == std::string::npos || eq == std::string::npos || eq < colon)
            throw UsageError("--window: expected lo_nm:hi_nm=area, got '" + w + "'");
        try {
            tails.push_back({{nvdyn::io::parse_double(w.substr(0, colon), 0, 0),
                              nvdyn::io::parse_double(w.substr(colon + 1, eq - colon - 1), 0, 0)},
                             nvdyn::io::parse_double(w.substr(eq + 1), 0, 0)});
        } catch (const nvdyn::SchemaError& e) {
            throw UsageError(std::string("--window: ") + e.what());
        }
    }
    const auto tc = sp::tail_correlation(tails, basis, window_options(o));
    std::cout << "rms_minus = " << format_double(tc.rms_minus)
              << ", rms_zero = " << format_double(tc.rms_zero) << ", emitter = " << tc.emitter
              << "\n";
    if (!o.out.empty()) {
        json j;
        j["rms_minus"] = tc.rms_minus;
        j["rms_zero"] = tc.rms_zero;
        j["emitter"] = tc.emitter;
        nvdyn::io::atomic_write(o.out, j.dump(2) + "\n");
        std::cout << "wrote " << o.out << "\n";
    }
}

struct G2Opts {
    std::string in, out, fit_out;
    double bin_ns = 2.0, max_tau_ns = 200.0;
};

void cmd_estimate_g2(const G2Opts& o) {
    const auto stream = nvdyn::io::load_timestamps(o.in);
    const auto hist =
        nvdyn::estimators::g2_histogram(stream, o.bin_ns * 1e-9, o.max_tau_ns * 1e-9);
    nvdyn::io::save_g2(hist, o.out);
    std::cout << "wrote " << o.out << "\n"
              << "g2_zero = " << format_double(hist.g2_zero) << " +/- "
              << format_double(hist.g2_zero_err) << "\n";
    const auto ab = nvdyn::estimators::antibunching_fit(hist);
    std::cout << "g0_fit = " << format_double(ab.g0) << " +/- " << format_double(ab.g0_err)
              << ", tau_a_ns = " << format_double(ab.tau_a * 1e9) << "\n";
    if (!o.fit_out.empty() && ab.tau_a > 0.0) {
        nvdyn::io::save_fit_result(ab.fit, o.fit_out);
        std::cout << "wrote " << o.fit_out << "\n";
    }
}

struct AcceptorOpts {
    double voltage = 0, width_um = 0, eps_r = 5.7;
};

void cmd_estimate_acceptor(const AcceptorOpts& o) {
    nvdyn::estimators::DepletionInput in;
    in.voltage_v = o.voltage;
    in.depletion_width_m = o.width_um * 1e-6;
    in.epsilon_r = o.eps_r;
    const double na = nvdyn::estimators::acceptor_density(in);
    std::cout << "acceptor_density_cm3 = " << format_double(na) << "\n"
              << "note: abrupt one-sided depletion approximation; treat as an"
                 " order-of-magnitude estimate (devices of this kind are typically"
                 " quoted near 6e15 cm^-3).\n";
}

struct ScenarioOpts {
    std::string id, out = "runs";
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;
    std::string report;
};

void cmd_scenario_run(const ScenarioOpts& o) {
    namespace pl = nvdyn::pipelines;
    pl::ScenarioConfig cfg;
    cfg.scenario_id = o.id;
    cfg.seed = o.seed;
    cfg.out_dir = o.out;
    for (const auto& ov : o.overrides)
        for (const auto& [k, v] : parse_kv("--override", ov)) cfg.overrides[k] = v;
    const auto rep = pl::run_scenario(cfg);
    for (const auto& a : rep.anchors) {
        const double r = rep.recovered.count(a.name) ? rep.recovered.at(a.name)
                                                     : std::numeric_limits<double>::quiet_NaN();
        std::string target;
        if (a.kind == "abs")
            target = "target " + format_double(a.value) + " +/- " + format_double(a.tolerance);
        else if (a.kind == "rel")
            target = "target " + format_double(a.value) + " +/- " +
                     format_double(a.tolerance * 100.0) + "%";
        else if (a.kind == "min")
            target = ">= " + format_double(a.value);
        else
            target = "<= " + format_double(a.value);
        std::cout << (rep.pass.at(a.name) ? "[PASS] " : "[FAIL] ") << a.name << " = "
                  << format_double(r) << " (" << target << ")\n";
    }
    std::cout << "all_pass: " << (rep.all_pass() ? "true" : "false") << "\n"
              << "report: " << rep.artifacts.back() << "\n";
}

void cmd_scenario_plotdata(const ScenarioOpts& o) {
    const auto rep = nvdyn::pipelines::load_report(o.report);
    for (const auto& p : nvdyn::pipelines::emit_plotdata(rep)) std::cout << p << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NV charge-state dynamics toolkit"};
    app.require_subcommand(1);
    app.set_config("--config")
        ->description("JSON file supplying flag values; command-line flags win")
        ->configurable(false);
    app.config_formatter(std::make_shared<JsonConfig>());

    // ---- simulate ----
    auto* simulate = app.add_subcommand("simulate", "Generate synthetic data");
    simulate->require_subcommand(1);

    auto sim_trace = std::make_shared<SimulateTraceOpts>();
    {
        auto* c = simulate->add_subcommand("trace",
                                           "Binned photon trace from a telegraph process");
        c->add_option("--seed", sim_trace->seed, "RNG seed")->required();
        c->add_option("--duration-s", sim_trace->duration_s, "trace length, seconds")
            ->required();
        c->add_option("--bin-ms", sim_trace->bin_ms, "bin width, milliseconds")->required();
        c->add_option("--k-db-per-s", sim_trace->k_db_per_s,
                      "dark->bright switching rate, 1/s");
        c->add_option("--k-bd-per-s", sim_trace->k_bd_per_s,
                      "bright->dark switching rate, 1/s")
            ->required();
        c->add_option("--cps-bright", sim_trace->cps_bright, "bright-state count rate, cps")
            ->required();
        c->add_option("--cps-dark", sim_trace->cps_dark, "dark-state count rate, cps");
        c->add_option("--rate-table-csv", sim_trace->rate_table_csv,
                      "CSV (x,y) of time-varying dark->bright rate: x = t_s, y = rate 1/s");
        c->add_option("--bias-v", sim_trace->bias_v, "recorded bias voltage, V");
        c->add_option("--power-mw", sim_trace->power_mw, "recorded laser power, mW");
        c->add_option("--start-time-s", sim_trace->start_time_s, "time of first bin, s");
        c->add_option("--start-state", sim_trace->start_state, "initial state: dark|bright")
            ->capture_default_str();
        c->add_option("--out", sim_trace->out, "output trace CSV")->required();
        c->callback([sim_trace] { cmd_simulate_trace(*sim_trace); });
    }

    auto sim_ts = std::make_shared<SimulateTimestampsOpts>();
    {
        auto* c = simulate->add_subcommand(
            "timestamps", "Photon arrival times from a pumped two-level emitter");
        c->add_option("--seed", sim_ts->seed, "RNG seed")->required();
        c->add_option("--duration-s", sim_ts->duration_s, "stream length, seconds")
            ->required();
        c->add_option("--lifetime-ns", sim_ts->lifetime_ns, "excited-state lifetime, ns")
            ->capture_default_str();
        c->add_option("--pump-per-s", sim_ts->pump_per_s, "excitation rate, 1/s")
            ->capture_default_str();
        c->add_option("--background-cps", sim_ts->background_cps,
                      "uncorrelated background rate, cps");
        c->add_flag("--background-only", sim_ts->background_only,
                    "emit pure Poisson background (no emitter)");
        c->add_option("--out", sim_ts->out, "output timestamps CSV")->required();
        c->callback([sim_ts] { cmd_simulate_timestamps(*sim_ts); });
    }

    // ---- infer ----
    auto* infer = app.add_subcommand("infer", "Hidden-state analysis of photon traces");
    infer->require_subcommand(1);

    auto inf_hmm = std::make_shared<InferOpts>();
    {
        auto* c = infer->add_subcommand("hmm",
                                        "Learn a two-state Poisson HMM (Baum-Welch)");
        c->add_option("--in", inf_hmm->in, "input trace CSV")->required();
        c->add_option("--out", inf_hmm->out, "output HMM JSON")->required();
        c->add_option("--max-iter", inf_hmm->max_iter, "EM iteration cap")
            ->capture_default_str();
        c->add_option("--tol", inf_hmm->tol, "log-likelihood convergence tolerance")
            ->capture_default_str();
        c->callback([inf_hmm] { cmd_infer_hmm(*inf_hmm); });
    }

    auto inf_vit = std::make_shared<InferOpts>();
    {
        auto* c = infer->add_subcommand("viterbi", "Most likely state path for a trace");
        c->add_option("--in", inf_vit->in, "input trace CSV")->required();
        c->add_option("--hmm", inf_vit->hmm,
                      "HMM JSON (if omitted, one is learned from the trace)");
        c->add_option("--out", inf_vit->out, "output CSV: t_s,state")->required();
        c->callback([inf_vit] { cmd_infer_viterbi(*inf_vit); });
    }

    auto inf_mix = std::make_shared<InferOpts>();
    inf_mix->max_iter = 500;
    inf_mix->tol = 1e-9;
    {
        auto* c = infer->add_subcommand(
            "mixture", "Two-component Poisson mixture of the count histogram");
        c->add_option("--in", inf_mix->in, "input trace CSV")->required();
        c->add_option("--out", inf_mix->out, "output mixture JSON")->required();
        c->add_option("--max-iter", inf_mix->max_iter, "EM iteration cap")
            ->capture_default_str();
        c->add_option("--tol", inf_mix->tol, "convergence tolerance")->capture_default_str();
        c->callback([inf_mix] { cmd_infer_mixture(*inf_mix); });
    }

    auto inf_occ = std::make_shared<InferOpts>();
    {
        auto* c = infer->add_subcommand(
            "occupancy", "Windowed bright-state occupancy from smoothed posteriors");
        c->add_option("--in", inf_occ->in, "input trace CSV")->required();
        c->add_option("--hmm", inf_occ->hmm,
                      "HMM JSON (if omitted, one is learned from the trace)");
        c->add_option("--window-s", inf_occ->window_s, "averaging window, seconds")
            ->required();
        c->add_option("--out", inf_occ->out, "output occupancy CSV")->required();
        c->callback([inf_occ] { cmd_infer_occupancy(*inf_occ); });
    }

    // ---- fit ----
    auto fit_opts = std::make_shared<FitOpts>();
    {
        auto* c = app.add_subcommand("fit", "Weighted nonlinear least squares");
        c->add_option("model", fit_opts->model, "model id")
            ->required()
            ->check(CLI::IsMember(model_names()));
        c->add_option("--in", fit_opts->in, "dataset CSV: x,y[,sigma]")->required();
        c->add_option("--init", fit_opts->init,
                      "initial parameters, e.g. y0=0,A=0.6,tau=800,beta=5")
            ->required();
        c->add_option("--lo", fit_opts->lo, "lower bounds, same name=value format");
        c->add_option("--hi", fit_opts->hi, "upper bounds, same name=value format");
        c->add_option("--max-iter", fit_opts->max_iter, "iteration cap")
            ->capture_default_str();
        c->add_option("--out", fit_opts->out, "output fit JSON");
        c->callback([fit_opts] { cmd_fit(*fit_opts); });
    }

    // ---- spectra ----
    auto* spectra_cmd = app.add_subcommand("spectra", "Spectral references and unmixing");
    spectra_cmd->require_subcommand(1);

    auto sp_ref = std::make_shared<SpectraOpts>();
    {
        auto* c = spectra_cmd->add_subcommand(
            "build-ref", "NV0 reference from a 0 V / biased spectrum pair");
        c->add_option("--in-0v", sp_ref->in_0v, "mixed spectrum CSV (0 V)")->required();
        c->add_option("--in-biased", sp_ref->in_biased, "pure NV- spectrum CSV (biased)")
            ->required();
        c->add_option("--weight", sp_ref->weight,
                      "subtraction weight (default: minimize residual 637 nm peak)");
        c->add_option("--out", sp_ref->out, "output reference CSV")->required();
        c->callback([sp_ref] { cmd_spectra_build_ref(*sp_ref); });
    }

    auto sp_dec = std::make_shared<SpectraOpts>();
    {
        auto* c = spectra_cmd->add_subcommand(
            "decompose", "Nonnegative two-component decomposition");
        c->add_option("--in", sp_dec->in, "spectrum CSV to decompose")->required();
        c->add_option("--ref-minus", sp_dec->ref_minus, "NV- reference CSV")->required();
        c->add_option("--ref-zero", sp_dec->ref_zero, "NV0 reference CSV")->required();
        c->add_option("--out", sp_dec->out, "output decomposition JSON");
        c->callback([sp_dec] { cmd_spectra_decompose(*sp_dec); });
    }

    auto sp_int = std::make_shared<SpectraOpts>();
    {
        auto* c = spectra_cmd->add_subcommand("integrate", "Band area of a spectrum");
        c->add_option("--in", sp_int->in, "spectrum CSV")->required();
        c->add_option("--lo-nm", sp_int->lo_nm, "window start, nm")->required();
        c->add_option("--hi-nm", sp_int->hi_nm, "window end, nm")->required();
        c->add_flag("--include-raman-notch", sp_int->include_raman_notch,
                    "keep the diamond Raman line inside the window");
        c->add_option("--notch-center-nm", sp_int->notch_center_nm, "Raman notch center")
            ->capture_default_str();
        c->add_option("--notch-half-width-nm", sp_int->notch_half_width_nm,
                      "Raman notch half width")
            ->capture_default_str();
        c->callback([sp_int] { cmd_spectra_integrate(*sp_int); });
    }

    auto sp_tc = std::make_shared<SpectraOpts>();
    {
        auto* c = spectra_cmd->add_subcommand(
            "tailcorr", "Attribute band-resolved tail amplitudes to NV-/NV0");
        c->add_option("--ref-minus", sp_tc->ref_minus, "NV- reference CSV")->required();
        c->add_option("--ref-zero", sp_tc->ref_zero, "NV0 reference CSV")->required();
        c->add_option("--window", sp_tc->windows,
                      "tail amplitude per band as lo_nm:hi_nm=area (repeatable; must"
                      " include 550:700)")
            ->required();
        c->add_flag("--include-raman-notch", sp_tc->include_raman_notch,
                    "keep the diamond Raman line inside the windows");
        c->add_option("--out", sp_tc->out, "output correlation JSON");
        c->callback([sp_tc] { cmd_spectra_tailcorr(*sp_tc); });
    }

    // ---- estimate ----
    auto* estimate = app.add_subcommand("estimate", "Photon statistics and device estimators");
    estimate->require_subcommand(1);

    auto g2_opts = std::make_shared<G2Opts>();
    {
        auto* c = estimate->add_subcommand(
            "g2", "Second-order correlation from photon timestamps");
        c->add_option("--in", g2_opts->in, "timestamps CSV")->required();
        c->add_option("--bin-ns", g2_opts->bin_ns, "histogram bin, ns")
            ->capture_default_str();
        c->add_option("--max-tau-ns", g2_opts->max_tau_ns, "correlation range, ns")
            ->capture_default_str();
        c->add_option("--out", g2_opts->out, "output histogram CSV")->required();
        c->add_option("--fit-out", g2_opts->fit_out, "output antibunching fit JSON");
        c->callback([g2_opts] { cmd_estimate_g2(*g2_opts); });
    }

    auto acc_opts = std::make_shared<AcceptorOpts>();
    {
        auto* c = estimate->add_subcommand(
            "acceptor-density", "Acceptor density from depletion width and bias");
        c->add_option("--voltage", acc_opts->voltage, "applied reverse bias, V")->required();
        c->add_option("--width-um", acc_opts->width_um, "depletion width, micrometers")
            ->required();
        c->add_option("--eps-r", acc_opts->eps_r, "relative permittivity")
            ->capture_default_str();
        c->callback([acc_opts] { cmd_estimate_acceptor(*acc_opts); });
    }

    // ---- scenario ----
    auto* scenario = app.add_subcommand("scenario", "End-to-end simulate/infer/verify runs");
    scenario->require_subcommand(1);

    auto sc_run = std::make_shared<ScenarioOpts>();
    {
        auto* c = scenario->add_subcommand("run", "Run one scenario and score its anchors");
        c->add_option("--id", sc_run->id, "scenario id")
            ->required()
            ->check(CLI::IsMember(nvdyn::pipelines::scenario_ids()));
        c->add_option("--seed", sc_run->seed, "RNG seed")->required();
        c->add_option("--out", sc_run->out, "output directory root")->capture_default_str();
        c->add_option("--override", sc_run->overrides,
                      "scenario parameter overrides as name=value (repeatable)");
        c->callback([sc_run] { cmd_scenario_run(*sc_run); });
    }

    auto sc_plot = std::make_shared<ScenarioOpts>();
    {
        auto* c = scenario->add_subcommand(
            "plotdata", "List a finished run's plot-ready CSV artifacts");
        c->add_option("--report", sc_plot->report, "scenario report JSON")->required();
        c->callback([sc_plot] { cmd_scenario_plotdata(*sc_plot); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const nvdyn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
