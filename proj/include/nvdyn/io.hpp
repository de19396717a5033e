#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "nvdyn/common.hpp"
#include "nvdyn/estimators.hpp"
#include "nvdyn/fitting.hpp"
#include "nvdyn/inference.hpp"
#include "nvdyn/photophysics.hpp"
#include "nvdyn/spectra.hpp"
#include "nvdyn/trace_sim.hpp"

namespace nvdyn::io {

using json = nlohmann::ordered_json;

// Shortest decimal representation that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line, std::size_t col) {
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw SchemaError("cannot parse '" + std::string(s) + "' as a number", line, col);
    if (!std::isfinite(v))
        throw SchemaError("non-finite value '" + std::string(s) + "'", line, col);
    return v;
}

inline long parse_long(std::string_view s, std::size_t line, std::size_t col) {
    long v = 0;
    const char* end = s.data() + s.size();
    const auto res = std::from_chars(s.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw SchemaError("cannot parse '" + std::string(s) + "' as an integer", line, col);
    return v;
}

// Whole-file write through a temp file in the same directory plus rename, so
// readers never observe a half-written file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    fs::create_directories(dir);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out.flush()) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".meta.json");
}

namespace detail_io {

struct CsvRow {
    std::vector<std::string_view> fields;
    std::vector<std::size_t> field_cols;  // 1-based start column per field
    std::size_t line = 0;                 // 1-based
};

// Minimal CSV: comma separator, no quoting (none of the formats need it),
// tolerant of CRLF and a trailing newline. Rows hold views into `text`, so
// the caller must keep it alive; the deleted overload blocks temporaries.
inline std::vector<CsvRow> parse_csv(const std::string&& text) = delete;
inline std::vector<CsvRow> parse_csv(const std::string& text) {
    std::vector<CsvRow> rows;
    std::size_t line_no = 1;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::size_t end = eol;
        if (end > pos && text[end - 1] == '\r') --end;
        if (end > pos) {
            CsvRow row;
            row.line = line_no;
            std::size_t f = pos;
            while (true) {
                std::size_t comma = text.find(',', f);
                if (comma == std::string::npos || comma >= end) {
                    row.fields.emplace_back(text.data() + f, end - f);
                    row.field_cols.push_back(f - pos + 1);
                    break;
                }
                row.fields.emplace_back(text.data() + f, comma - f);
                row.field_cols.push_back(f - pos + 1);
                f = comma + 1;
            }
            rows.push_back(std::move(row));
        }
        pos = eol + 1;
        ++line_no;
    }
    return rows;
}

inline void expect_header(const std::vector<CsvRow>& rows, const std::vector<std::string>& names) {
    if (rows.empty()) throw SchemaError("empty file", 1);
    const auto& h = rows.front();
    if (h.fields.size() != names.size())
        throw SchemaError("expected header with " + std::to_string(names.size()) + " columns", 1);
    for (std::size_t i = 0; i < names.size(); ++i)
        if (h.fields[i] != names[i])
            throw SchemaError("expected column '" + names[i] + "', found '" +
                                  std::string(h.fields[i]) + "'",
                              1, h.field_cols[i]);
}

inline json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        // convert the byte offset nlohmann reports into line/column
        std::size_t line = 1, col = 1;
        const std::size_t stop = std::min(text.size(), e.byte > 0 ? e.byte - 1 : 0);
        for (std::size_t i = 0; i < stop; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw SchemaError(what + ": " + e.what(), line, col);
    }
}

inline double get_finite(const json& j, const std::string& key) {
    if (!j.contains(key)) throw SchemaError("missing field '" + key + "'");
    const auto& v = j.at(key);
    if (!v.is_number()) throw SchemaError("field '" + key + "' must be a finite number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError("field '" + key + "' must be finite");
    return d;
}

inline const json& get_object(const json& j, const std::string& key) {
    if (!j.contains(key) || !j.at(key).is_object())
        throw SchemaError("missing object field '" + key + "'");
    return j.at(key);
}

}  // namespace detail_io

// ---- PhotonTrace: CSV `t_s,counts` (t_s = bin start) + JSON sidecar ----

inline void save_trace(const trace_sim::PhotonTrace& trace, const std::filesystem::path& path) {
    trace.validate();
    std::string out = "t_s,counts\n";
    for (std::size_t i = 0; i < trace.counts.size(); ++i) {
        out += format_double(trace.meta.start_time_s + static_cast<double>(i) * trace.bin_width);
        out += ',';
        out += std::to_string(trace.counts[i]);
        out += '\n';
    }
    atomic_write(path, out);
    json meta;
    meta["bin_width_s"] = trace.bin_width;
    meta["bias_V"] = trace.meta.bias_v;
    meta["power_mW"] = trace.meta.power_mw;
    meta["start_time_s"] = trace.meta.start_time_s;
    atomic_write(sidecar_path(path), meta.dump(2) + "\n");
}

inline trace_sim::PhotonTrace load_trace(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const auto rows = detail_io::parse_csv(text);
    detail_io::expect_header(rows, {"t_s", "counts"});
    if (rows.size() < 2) throw SchemaError("trace has no data rows", 1);

    trace_sim::PhotonTrace trace;
    std::vector<double> t;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != 2) throw SchemaError("expected 2 fields", row.line);
        t.push_back(parse_double(row.fields[0], row.line, row.field_cols[0]));
        const long c = parse_long(row.fields[1], row.line, row.field_cols[1]);
        if (c < 0) throw SchemaError("counts must be >= 0", row.line, row.field_cols[1]);
        trace.counts.push_back(c);
    }

    if (std::filesystem::exists(sidecar_path(path))) {
        const json meta = detail_io::parse_json(read_file(sidecar_path(path)), "trace sidecar");
        trace.bin_width = detail_io::get_finite(meta, "bin_width_s");
        trace.meta.bias_v = detail_io::get_finite(meta, "bias_V");
        trace.meta.power_mw = detail_io::get_finite(meta, "power_mW");
        trace.meta.start_time_s = detail_io::get_finite(meta, "start_time_s");
    } else {
        if (t.size() < 2) throw SchemaError("cannot infer bin width from a single row", 2);
        trace.bin_width = t[1] - t[0];
        trace.meta.start_time_s = t[0];
    }
    for (std::size_t i = 1; i < t.size(); ++i)
        if (std::abs(t[i] - t[i - 1] - trace.bin_width) > 1e-9 * std::max(1.0, trace.bin_width))
            throw SchemaError("bin starts are not uniformly spaced", rows[i + 1].line);
    trace.validate();
    return trace;
}

// ---- TimestampStream: CSV `t_s` + sidecar with the record duration ----

inline void save_timestamps(const trace_sim::TimestampStream& ts,
                            const std::filesystem::path& path) {
    ts.validate();
    std::string out = "t_s\n";
    for (double v : ts.t) {
        out += format_double(v);
        out += '\n';
    }
    atomic_write(path, out);
    json meta;
    meta["duration_s"] = ts.duration;
    atomic_write(sidecar_path(path), meta.dump(2) + "\n");
}

inline trace_sim::TimestampStream load_timestamps(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const auto rows = detail_io::parse_csv(text);
    detail_io::expect_header(rows, {"t_s"});
    trace_sim::TimestampStream ts;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != 1) throw SchemaError("expected 1 field", row.line);
        const double v = parse_double(row.fields[0], row.line, row.field_cols[0]);
        if (!ts.t.empty() && v <= ts.t.back())
            throw SchemaError("timestamps must strictly increase", row.line);
        ts.t.push_back(v);
    }
    const json meta = detail_io::parse_json(read_file(sidecar_path(path)), "timestamp sidecar");
    ts.duration = detail_io::get_finite(meta, "duration_s");
    ts.validate();
    return ts;
}

// ---- Spectrum: CSV `wavelength_nm,intensity` + sidecar meta ----

inline void save_spectrum(const spectra::Spectrum& s, const std::filesystem::path& path) {
    s.validate();
    std::string out = "wavelength_nm,intensity\n";
    for (std::size_t i = 0; i < s.wavelength_nm.size(); ++i) {
        out += format_double(s.wavelength_nm[i]);
        out += ',';
        out += format_double(s.intensity[i]);
        out += '\n';
    }
    atomic_write(path, out);
    json meta;
    meta["bias_V"] = s.meta.bias_v;
    meta["power_mW"] = s.meta.power_mw;
    atomic_write(sidecar_path(path), meta.dump(2) + "\n");
}

inline spectra::Spectrum load_spectrum(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const auto rows = detail_io::parse_csv(text);
    detail_io::expect_header(rows, {"wavelength_nm", "intensity"});
    spectra::Spectrum s;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != 2) throw SchemaError("expected 2 fields", row.line);
        const double w = parse_double(row.fields[0], row.line, row.field_cols[0]);
        if (!s.wavelength_nm.empty() && w <= s.wavelength_nm.back())
            throw SchemaError("wavelength grid must strictly increase", row.line,
                              row.field_cols[0]);
        s.wavelength_nm.push_back(w);
        const double v = parse_double(row.fields[1], row.line, row.field_cols[1]);
        if (v < 0.0) throw SchemaError("intensity must be >= 0", row.line, row.field_cols[1]);
        s.intensity.push_back(v);
    }
    if (std::filesystem::exists(sidecar_path(path))) {
        const json meta = detail_io::parse_json(read_file(sidecar_path(path)), "spectrum sidecar");
        s.meta.bias_v = detail_io::get_finite(meta, "bias_V");
        s.meta.power_mw = detail_io::get_finite(meta, "power_mW");
    }
    s.validate();
    return s;
}

// ---- OccupancySeries: CSV `t_s,p_bright` ----

inline void save_occupancy(const inference::OccupancySeries& o,
                           const std::filesystem::path& path) {
    std::string out = "t_s,p_bright\n";
    for (std::size_t i = 0; i < o.times.size(); ++i) {
        out += format_double(o.times[i]);
        out += ',';
        out += format_double(o.p_bright[i]);
        out += '\n';
    }
    atomic_write(path, out);
    json meta;
    meta["window_s"] = o.window;
    atomic_write(sidecar_path(path), meta.dump(2) + "\n");
}

inline inference::OccupancySeries load_occupancy(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const auto rows = detail_io::parse_csv(text);
    detail_io::expect_header(rows, {"t_s", "p_bright"});
    inference::OccupancySeries o;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != 2) throw SchemaError("expected 2 fields", row.line);
        o.times.push_back(parse_double(row.fields[0], row.line, row.field_cols[0]));
        const double p = parse_double(row.fields[1], row.line, row.field_cols[1]);
        if (p < 0.0 || p > 1.0)
            throw SchemaError("p_bright must be in [0,1]", row.line, row.field_cols[1]);
        o.p_bright.push_back(p);
    }
    if (std::filesystem::exists(sidecar_path(path))) {
        const json meta = detail_io::parse_json(read_file(sidecar_path(path)), "series sidecar");
        o.window = detail_io::get_finite(meta, "window_s");
    } else if (o.times.size() >= 2) {
        o.window = o.times[1] - o.times[0];
    }
    return o;
}

// ---- Dataset: CSV `x,y[,sigma]` ----

inline void save_dataset(const fitting::Dataset& d, const std::filesystem::path& path) {
    const bool has_sigma = !d.sigma.empty();
    std::string out = has_sigma ? "x,y,sigma\n" : "x,y\n";
    for (std::size_t i = 0; i < d.x.size(); ++i) {
        out += format_double(d.x[i]);
        out += ',';
        out += format_double(d.y[i]);
        if (has_sigma) {
            out += ',';
            out += format_double(d.sigma[i]);
        }
        out += '\n';
    }
    atomic_write(path, out);
}

inline fitting::Dataset load_dataset(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    const auto rows = detail_io::parse_csv(text);
    if (rows.empty()) throw SchemaError("empty file", 1);
    const bool has_sigma = rows.front().fields.size() == 3;
    detail_io::expect_header(rows, has_sigma ? std::vector<std::string>{"x", "y", "sigma"}
                                             : std::vector<std::string>{"x", "y"});
    fitting::Dataset d;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.fields.size() != (has_sigma ? 3u : 2u))
            throw SchemaError("inconsistent field count", row.line);
        d.x.push_back(parse_double(row.fields[0], row.line, row.field_cols[0]));
        d.y.push_back(parse_double(row.fields[1], row.line, row.field_cols[1]));
        if (has_sigma) {
            const double s = parse_double(row.fields[2], row.line, row.field_cols[2]);
            if (!(s > 0.0)) throw SchemaError("sigma must be > 0", row.line, row.field_cols[2]);
            d.sigma.push_back(s);
        }
    }
    return d;
}

// ---- CorrelationHistogram: CSV `tau_s,g2,coincidences` ----

inline void save_g2(const estimators::CorrelationHistogram& h, const std::filesystem::path& path) {
    std::string out = "tau_s,g2,coincidences\n";
    for (std::size_t i = 0; i < h.tau_bins.size(); ++i) {
        out += format_double(h.tau_bins[i]);
        out += ',';
        out += format_double(h.g2[i]);
        out += ',';
        out += std::to_string(h.counts[i]);
        out += '\n';
    }
    atomic_write(path, out);
}

// ---- FitResult JSON ----

inline json fit_result_to_json(const fitting::FitResult& r) {
    json j;
    j["model_id"] = fitting::model_spec(r.model).name;
    json params = json::object();
    for (std::size_t i = 0; i < r.params.size(); ++i) {
        json p;
        p["value"] = r.params[i];
        p["stderr"] = r.std_errors[i];
        params[r.param_names[i]] = p;
    }
    j["params"] = params;
    j["chi2"] = r.chi2;
    j["dof"] = r.dof;
    j["converged"] = r.converged;
    j["n_iter"] = r.n_iter;
    return j;
}

inline void save_fit_result(const fitting::FitResult& r, const std::filesystem::path& path) {
    atomic_write(path, fit_result_to_json(r).dump(2) + "\n");
}

inline fitting::FitResult load_fit_result(const std::filesystem::path& path) {
    const json j = detail_io::parse_json(read_file(path), "fit result");
    fitting::FitResult r;
    if (!j.contains("model_id") || !j.at("model_id").is_string())
        throw SchemaError("missing string field 'model_id'");
    const auto spec = fitting::model_spec(j.at("model_id").get<std::string>());
    r.model = spec.id;
    r.param_names = spec.param_names;
    const json& params = detail_io::get_object(j, "params");
    for (const auto& name : spec.param_names) {
        if (!params.contains(name)) throw SchemaError("missing parameter '" + name + "'");
        const json& p = params.at(name);
        r.params.push_back(detail_io::get_finite(p, "value"));
        const double se = detail_io::get_finite(p, "stderr");
        if (se < 0.0) throw SchemaError("stderr must be >= 0 for '" + name + "'");
        r.std_errors.push_back(se);
    }
    r.chi2 = detail_io::get_finite(j, "chi2");
    if (!j.contains("dof") || !j.at("dof").is_number_integer())
        throw SchemaError("missing integer field 'dof'");
    r.dof = j.at("dof").get<int>();
    if (!j.contains("converged") || !j.at("converged").is_boolean())
        throw SchemaError("missing boolean field 'converged'");
    r.converged = j.at("converged").get<bool>();
    if (!j.contains("n_iter") || !j.at("n_iter").is_number_integer())
        throw SchemaError("missing integer field 'n_iter'");
    r.n_iter = j.at("n_iter").get<int>();
    return r;
}

// ---- PoissonHmm JSON ----

inline json hmm_to_json(const inference::PoissonHmm& h) {
    json j;
    j["initial_prob"] = {h.initial_prob[0], h.initial_prob[1]};
    j["transition"] = {{h.transition[0][0], h.transition[0][1]},
                       {h.transition[1][0], h.transition[1][1]}};
    j["lambda_counts_per_bin"] = {h.lambda[0], h.lambda[1]};
    return j;
}

inline void save_hmm(const inference::PoissonHmm& h, const std::filesystem::path& path) {
    atomic_write(path, hmm_to_json(h).dump(2) + "\n");
}

inline inference::PoissonHmm load_hmm(const std::filesystem::path& path) {
    const json j = detail_io::parse_json(read_file(path), "hmm");
    inference::PoissonHmm h;
    auto get_pair = [&](const std::string& key, std::array<double, 2>& out) {
        if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 2)
            throw SchemaError("field '" + key + "' must be a 2-array");
        for (int i = 0; i < 2; ++i) {
            if (!j.at(key)[i].is_number()) throw SchemaError("field '" + key + "' must be numeric");
            out[i] = j.at(key)[i].get<double>();
            if (!std::isfinite(out[i])) throw SchemaError("field '" + key + "' must be finite");
        }
    };
    get_pair("initial_prob", h.initial_prob);
    get_pair("lambda_counts_per_bin", h.lambda);
    if (!j.contains("transition") || !j.at("transition").is_array() ||
        j.at("transition").size() != 2)
        throw SchemaError("field 'transition' must be a 2x2 array");
    for (int i = 0; i < 2; ++i) {
        const auto& row = j.at("transition")[i];
        if (!row.is_array() || row.size() != 2)
            throw SchemaError("field 'transition' must be a 2x2 array");
        for (int k = 0; k < 2; ++k) {
            if (!row[k].is_number()) throw SchemaError("'transition' entries must be numeric");
            h.transition[i][k] = row[k].get<double>();
        }
    }
    h.validate();
    return h;
}

// ---- MixtureFit JSON ----

inline json mixture_to_json(const inference::MixtureFit& m) {
    json j;
    j["lambda_dark_counts_per_bin"] = m.lambda_dark;
    j["lambda_bright_counts_per_bin"] = m.lambda_bright;
    j["weight_bright"] = m.weight_bright;
    j["log_likelihood"] = m.log_likelihood;
    j["overlap"] = m.overlap;
    return j;
}

inline void save_mixture(const inference::MixtureFit& m, const std::filesystem::path& path) {
    atomic_write(path, mixture_to_json(m).dump(2) + "\n");
}

inline inference::MixtureFit load_mixture(const std::filesystem::path& path) {
    const json j = detail_io::parse_json(read_file(path), "mixture fit");
    inference::MixtureFit m;
    m.lambda_dark = detail_io::get_finite(j, "lambda_dark_counts_per_bin");
    m.lambda_bright = detail_io::get_finite(j, "lambda_bright_counts_per_bin");
    m.weight_bright = detail_io::get_finite(j, "weight_bright");
    m.log_likelihood = detail_io::get_finite(j, "log_likelihood");
    m.overlap = detail_io::get_finite(j, "overlap");
    if (m.lambda_dark >= m.lambda_bright) throw SchemaError("need lambda_dark < lambda_bright");
    if (m.weight_bright < 0.0 || m.weight_bright > 1.0)
        throw SchemaError("weight_bright must be in [0,1]");
    return m;
}

// ---- Rate-model parameter config (versioned) ----

inline json rate_params_to_json(const photophysics::RateParams& rp) {
    json j;
    j["pump_rate_minus_per_s_per_mW"] = rp.pump_rate_minus;
    j["pump_rate_zero_per_s_per_mW"] = rp.pump_rate_zero;
    j["rad_decay_minus_per_s"] = rp.rad_decay_minus;
    j["rad_decay_zero_per_s"] = rp.rad_decay_zero;
    j["isc_up_per_s"] = rp.isc_up;
    j["isc_down_per_s"] = rp.isc_down;
    j["ionize_coeff_per_s_per_mW2"] = rp.ionize_coeff;
    j["recomb_coeff_per_s_per_mW2"] = rp.recomb_coeff;
    j["hole_capture_coeff_per_s_per_mW"] = rp.hole_capture_coeff;
    j["detection_efficiency"] = rp.detection_efficiency;
    j["background_slope_cps_per_mW"] = rp.background_slope;
    return j;
}

inline photophysics::RateParams rate_params_from_json(const json& j) {
    photophysics::RateParams rp;
    rp.pump_rate_minus = detail_io::get_finite(j, "pump_rate_minus_per_s_per_mW");
    rp.pump_rate_zero = detail_io::get_finite(j, "pump_rate_zero_per_s_per_mW");
    rp.rad_decay_minus = detail_io::get_finite(j, "rad_decay_minus_per_s");
    rp.rad_decay_zero = detail_io::get_finite(j, "rad_decay_zero_per_s");
    rp.isc_up = detail_io::get_finite(j, "isc_up_per_s");
    rp.isc_down = detail_io::get_finite(j, "isc_down_per_s");
    rp.ionize_coeff = detail_io::get_finite(j, "ionize_coeff_per_s_per_mW2");
    rp.recomb_coeff = detail_io::get_finite(j, "recomb_coeff_per_s_per_mW2");
    rp.hole_capture_coeff = detail_io::get_finite(j, "hole_capture_coeff_per_s_per_mW");
    rp.detection_efficiency = detail_io::get_finite(j, "detection_efficiency");
    rp.background_slope = detail_io::get_finite(j, "background_slope_cps_per_mW");
    rp.validate();
    return rp;
}

inline json bias_mode_to_json(const photophysics::BiasMode& b) {
    json j;
    j["tag"] = b.tag;
    j["hole_density_factor"] = b.hole_density_factor;
    j["electron_density_factor"] = b.electron_density_factor;
    return j;
}

inline photophysics::BiasMode bias_mode_from_json(const json& j) {
    photophysics::BiasMode b;
    if (!j.contains("tag") || !j.at("tag").is_string())
        throw SchemaError("bias mode needs a string 'tag'");
    b.tag = j.at("tag").get<std::string>();
    b.hole_density_factor = detail_io::get_finite(j, "hole_density_factor");
    b.electron_density_factor = detail_io::get_finite(j, "electron_density_factor");
    b.validate();
    return b;
}

struct RateConfig {
    int version = 1;
    photophysics::RateParams params;
    photophysics::BiasMode zero_bias;
    photophysics::BiasMode biased;
};

inline void save_rate_config(const RateConfig& cfg, const std::filesystem::path& path) {
    json j;
    j["version"] = cfg.version;
    j["rate_params"] = rate_params_to_json(cfg.params);
    j["bias_modes"] = json::object();
    j["bias_modes"]["zero_bias"] = bias_mode_to_json(cfg.zero_bias);
    j["bias_modes"]["biased"] = bias_mode_to_json(cfg.biased);
    atomic_write(path, j.dump(2) + "\n");
}

inline RateConfig load_rate_config(const std::filesystem::path& path) {
    const json j = detail_io::parse_json(read_file(path), "rate config");
    RateConfig cfg;
    if (!j.contains("version") || !j.at("version").is_number_integer())
        throw SchemaError("missing integer field 'version'");
    cfg.version = j.at("version").get<int>();
    cfg.params = rate_params_from_json(detail_io::get_object(j, "rate_params"));
    const json& modes = detail_io::get_object(j, "bias_modes");
    cfg.zero_bias = bias_mode_from_json(detail_io::get_object(modes, "zero_bias"));
    cfg.biased = bias_mode_from_json(detail_io::get_object(modes, "biased"));
    return cfg;
}

}  // namespace nvdyn::io
