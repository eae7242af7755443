#pragma once

// JSON (systems, configuration, snapshots, GP models) and RFC-4180 CSV
// (trajectories, windows, filter runs, estimates, GP tracks).

#include "dtwin/common.hpp"
#include "dtwin/gpr.hpp"
#include "dtwin/model.hpp"
#include "dtwin/sde.hpp"
#include "dtwin/twin.hpp"
#include "dtwin/ukf.hpp"
#include "dtwin/window.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace dtwin {

using json = nlohmann::json;

/// Malformed or inconsistent configuration / input file.
class ConfigError : public InvalidParameter {
public:
    using InvalidParameter::InvalidParameter;
};

namespace io_detail {

inline json vec(const Vector& v) { return json(to_std(v)); }

inline json mat(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Vector to_vec(const json& j) { return from_std(j.get<std::vector<double>>()); }

inline Matrix to_mat(const json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(r)).size()) != cols) {
            throw ConfigError("ragged matrix in JSON");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
        }
    }
    return m;
}

/// 0-based indices ↔ 1-based JSON lists.
inline json one_based(const std::vector<std::size_t>& v) {
    json a = json::array();
    for (auto i : v) a.push_back(i + 1);
    return a;
}

inline std::vector<std::size_t> zero_based(const json& j, const std::string& what) {
    std::vector<std::size_t> out;
    for (const auto& e : j) {
        const auto v = e.get<long long>();
        if (v < 1) throw ConfigError(what + ": indices are 1-based");
        out.push_back(static_cast<std::size_t>(v - 1));
    }
    return out;
}

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
    if (!j.is_object()) throw ConfigError("section '" + section + "' must be a JSON object");
    for (const auto& [k, _] : j.items()) {
        if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in section '" + section + "'");
    }
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace io_detail

// ---------------------------------------------------------------- system

inline json system_to_json(const MdofSystem& s) {
    using namespace io_detail;
    json j;
    j["model"] = s.name;
    j["masses"] = vec(s.mass);
    j["stiffnesses"] = vec(s.stiffness.values);
    j["dampings"] = vec(s.damping.values);
    Vector amp(static_cast<Eigen::Index>(s.force.size())), freq(amp.size());
    for (std::size_t i = 0; i < s.force.size(); ++i) {
        amp(static_cast<Eigen::Index>(i)) = s.force[i].amplitude;
        freq(static_cast<Eigen::Index>(i)) = s.force[i].frequency;
    }
    j["force_amplitudes"] = vec(amp);
    j["force_frequencies"] = vec(freq);
    j["noise_sigmas"] = vec(s.noise_sigma);
    j["nonlinear_coeff"] = s.nonlinear_coeff;
    j["frozen"] = one_based(s.frozen_stiffness);
    j["assembly"] = s.assembly == Assembly::chain ? "chain" : "printed";
    return j;
}

/// Builds the named benchmark topology, then applies the listed values.
inline MdofSystem system_from_json(const json& j) {
    using namespace io_detail;
    check_keys(j,
               {"model", "masses", "stiffnesses", "dampings", "force_amplitudes", "force_frequencies",
                "noise_sigmas", "nonlinear_coeff", "frozen", "assembly"},
               "system");
    const std::string model = j.value("model", std::string("duffing_2dof"));
    MdofSystem s;
    const auto expect = [&](const char* key, std::size_t n) {
        if (j.contains(key) && j.at(key).size() != n) {
            throw ConfigError(std::string("system.") + key + " must have " + std::to_string(n) + " entries");
        }
    };
    try {
        if (model == "duffing_2dof") {
            for (auto k : {"masses", "stiffnesses", "dampings", "force_amplitudes", "force_frequencies", "noise_sigmas"})
                expect(k, 2);
            if (j.contains("assembly") && j.at("assembly") != "chain")
                throw ConfigError("the 2-DOF system only supports chain assembly");
            DuffingParams p;
            if (j.contains("masses")) { p.m1 = j["masses"][0]; p.m2 = j["masses"][1]; }
            if (j.contains("stiffnesses")) { p.k1 = j["stiffnesses"][0]; p.k2 = j["stiffnesses"][1]; }
            if (j.contains("dampings")) { p.c1 = j["dampings"][0]; p.c2 = j["dampings"][1]; }
            if (j.contains("force_amplitudes")) { p.lambda1 = j["force_amplitudes"][0]; p.lambda2 = j["force_amplitudes"][1]; }
            if (j.contains("force_frequencies")) { p.omega1 = j["force_frequencies"][0]; p.omega2 = j["force_frequencies"][1]; }
            if (j.contains("noise_sigmas")) { p.sigma1 = j["noise_sigmas"][0]; p.sigma2 = j["noise_sigmas"][1]; }
            read_if(j, "nonlinear_coeff", p.alpha);
            s = build_duffing_2dof(p);
        } else if (model == "dvp_7dof") {
            for (auto k : {"masses", "stiffnesses", "dampings", "force_amplitudes", "force_frequencies", "noise_sigmas"})
                expect(k, 7);
            DvpParams p;
            read_if(j, "masses", p.mass);
            read_if(j, "stiffnesses", p.stiffness);
            read_if(j, "dampings", p.damping);
            read_if(j, "nonlinear_coeff", p.alpha);
            if (j.contains("assembly")) {
                const auto a = j.at("assembly").get<std::string>();
                if (a == "chain") p.assembly = Assembly::chain;
                else if (a == "printed") p.assembly = Assembly::printed;
                else throw ConfigError("system.assembly must be 'chain' or 'printed'");
            }
            s = build_dvp_7dof(p);
            if (j.contains("force_amplitudes"))
                for (std::size_t i = 0; i < 7; ++i) s.force[i].amplitude = j["force_amplitudes"][i];
            if (j.contains("force_frequencies"))
                for (std::size_t i = 0; i < 7; ++i) s.force[i].frequency = j["force_frequencies"][i];
            if (j.contains("noise_sigmas")) s.noise_sigma = to_vec(j["noise_sigmas"]);
        } else {
            throw ConfigError("unknown system model '" + model + "' (expected duffing_2dof or dvp_7dof)");
        }
        if (j.contains("frozen")) s.frozen_stiffness = zero_based(j["frozen"], "system.frozen");
        s.validate();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("system: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidParameter& e) {
        throw ConfigError(std::string("system: ") + e.what());
    }
    return s;
}

// ---------------------------------------------------------------- config

inline json integrator_to_json(const IntegratorConfig& c) {
    return {{"dt", c.dt}, {"scheme", to_string(c.scheme)}, {"seed", c.seed}};
}

inline void integrator_from_json(const json& j, IntegratorConfig& c) {
    io_detail::check_keys(j, {"dt", "scheme", "seed"}, "integrator");
    io_detail::read_if(j, "dt", c.dt);
    if (j.contains("scheme")) c.scheme = scheme_from_string(j.at("scheme").get<std::string>());
    io_detail::read_if(j, "seed", c.seed);
}

inline json gp_config_to_json(const GpConfig& g) {
    return {{"family", to_string(g.family)},
            {"mean", to_string(g.mean)},
            {"standardize", g.standardize},
            {"fold_point_noise", g.fold_point_noise},
            {"restarts", g.restarts},
            {"max_iter", g.max_iter},
            {"tolerance", g.tolerance},
            {"seed", g.seed},
            {"start_lo", g.start_lo},
            {"start_hi", g.start_hi},
            {"log_variance_bounds", {g.log_variance_lo, g.log_variance_hi}},
            {"log_lengthscale_bounds", {g.log_lengthscale_lo, g.log_lengthscale_hi}},
            {"log_noise_bounds", {g.log_noise_lo, g.log_noise_hi}},
            {"jitter", g.jitter}};
}

inline void gp_config_from_json(const json& j, GpConfig& g) {
    using namespace io_detail;
    check_keys(j,
               {"family", "mean", "standardize", "fold_point_noise", "restarts", "max_iter", "tolerance", "seed",
                "start_lo", "start_hi", "log_variance_bounds", "log_lengthscale_bounds", "log_noise_bounds",
                "jitter"},
               "gp");
    if (j.contains("family")) g.family = kernel_family_from_string(j.at("family").get<std::string>());
    if (j.contains("mean")) g.mean = mean_spec_from_string(j.at("mean").get<std::string>());
    read_if(j, "standardize", g.standardize);
    read_if(j, "fold_point_noise", g.fold_point_noise);
    read_if(j, "restarts", g.restarts);
    read_if(j, "max_iter", g.max_iter);
    read_if(j, "tolerance", g.tolerance);
    read_if(j, "seed", g.seed);
    read_if(j, "start_lo", g.start_lo);
    read_if(j, "start_hi", g.start_hi);
    const auto pair = [&](const char* key, double& lo, double& hi) {
        if (!j.contains(key)) return;
        const auto& a = j.at(key);
        if (!a.is_array() || a.size() != 2) throw ConfigError(std::string("gp.") + key + " must be [lo, hi]");
        lo = a[0].get<double>();
        hi = a[1].get<double>();
    };
    pair("log_variance_bounds", g.log_variance_lo, g.log_variance_hi);
    pair("log_lengthscale_bounds", g.log_lengthscale_lo, g.log_lengthscale_hi);
    pair("log_noise_bounds", g.log_noise_lo, g.log_noise_hi);
    read_if(j, "jitter", g.jitter);
}

inline json ukf_to_json(const FilterSetup& f) {
    using namespace io_detail;
    json j = {{"alpha", f.ukf.alpha},
              {"beta", f.ukf.beta},
              {"kappa", f.ukf.kappa},
              {"dynamics", to_string(f.dynamics)},
              {"augment", one_based(f.augment)},
              {"initial_fraction", f.initial_fraction},
              {"state_variance", f.state_variance},
              {"parameter_sd_fraction", f.parameter_sd_fraction},
              {"frozen_sd_fraction", f.frozen_sd_fraction},
              {"carry", to_string(f.carry)},
              {"carry_inflation", f.carry_inflation},
              {"carry_min_sd_fraction", f.carry_min_sd_fraction},
              {"velocity_noise_scale", f.velocity_noise_scale},
              {"parameter_walk_fraction", f.parameter_walk_fraction}};
    j["measurement_variance"] = vec(f.measurement_variance);
    return j;
}

inline void ukf_from_json(const json& j, FilterSetup& f) {
    using namespace io_detail;
    check_keys(j,
               {"alpha", "beta", "kappa", "dynamics", "augment", "initial_fraction", "state_variance",
                "parameter_sd_fraction", "frozen_sd_fraction", "carry", "carry_inflation", "carry_min_sd_fraction",
                "velocity_noise_scale", "parameter_walk_fraction", "measurement_variance"},
               "ukf");
    read_if(j, "alpha", f.ukf.alpha);
    read_if(j, "beta", f.ukf.beta);
    read_if(j, "kappa", f.ukf.kappa);
    if (j.contains("dynamics")) f.dynamics = filter_dynamics_from_string(j.at("dynamics").get<std::string>());
    if (j.contains("augment")) f.augment = zero_based(j.at("augment"), "ukf.augment");
    read_if(j, "initial_fraction", f.initial_fraction);
    read_if(j, "state_variance", f.state_variance);
    read_if(j, "parameter_sd_fraction", f.parameter_sd_fraction);
    read_if(j, "frozen_sd_fraction", f.frozen_sd_fraction);
    if (j.contains("carry")) f.carry = covariance_carry_from_string(j.at("carry").get<std::string>());
    read_if(j, "carry_inflation", f.carry_inflation);
    read_if(j, "carry_min_sd_fraction", f.carry_min_sd_fraction);
    read_if(j, "velocity_noise_scale", f.velocity_noise_scale);
    read_if(j, "parameter_walk_fraction", f.parameter_walk_fraction);
    if (j.contains("measurement_variance")) f.measurement_variance = to_vec(j.at("measurement_variance"));
}

inline json campaign_to_json(const CampaignConfig& c) {
    using namespace io_detail;
    json j = {{"interval_days", c.interval_days},
              {"window_duration", c.window_duration},
              {"horizon_days", c.horizon_days},
              {"observed_dofs", one_based(c.observed_dofs)},
              {"accel_snr", c.accel_snr},
              {"force_snr", c.force_snr},
              {"degradation_rate", c.degradation_rate},
              {"gp_min_windows", c.gp_min_windows}};
    j["gp_cutoff_days"] = c.gp_cutoff_days ? json(*c.gp_cutoff_days) : json(nullptr);
    return j;
}

inline void campaign_from_json(const json& j, CampaignConfig& c) {
    using namespace io_detail;
    check_keys(j,
               {"interval_days", "window_duration", "horizon_days", "observed_dofs", "accel_snr", "force_snr",
                "degradation_rate", "gp_cutoff_days", "gp_min_windows"},
               "campaign");
    read_if(j, "interval_days", c.interval_days);
    read_if(j, "window_duration", c.window_duration);
    read_if(j, "horizon_days", c.horizon_days);
    if (j.contains("observed_dofs")) c.observed_dofs = zero_based(j.at("observed_dofs"), "campaign.observed_dofs");
    read_if(j, "accel_snr", c.accel_snr);
    read_if(j, "force_snr", c.force_snr);
    read_if(j, "degradation_rate", c.degradation_rate);
    if (j.contains("gp_cutoff_days")) {
        const auto& v = j.at("gp_cutoff_days");
        c.gp_cutoff_days = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    read_if(j, "gp_min_windows", c.gp_min_windows);
}

/// System plus campaign settings: the full contents of a config file.
struct TwinConfig {
    MdofSystem system = build_duffing_2dof();
    CampaignConfig campaign;
};

inline json config_to_json(const TwinConfig& c) {
    return {{"system", system_to_json(c.system)},
            {"campaign", campaign_to_json(c.campaign)},
            {"ukf", ukf_to_json(c.campaign.filter)},
            {"gp", gp_config_to_json(c.campaign.gp)},
            {"integrator", integrator_to_json(c.campaign.integrator)}};
}

inline TwinConfig config_from_json(const json& j) {
    io_detail::check_keys(j, {"system", "campaign", "ukf", "gp", "integrator"}, "config");
    TwinConfig c;
    try {
        if (j.contains("system")) c.system = system_from_json(j.at("system"));
        if (j.contains("campaign")) campaign_from_json(j.at("campaign"), c.campaign);
        if (j.contains("ukf")) ukf_from_json(j.at("ukf"), c.campaign.filter);
        if (j.contains("gp")) gp_config_from_json(j.at("gp"), c.campaign.gp);
        if (j.contains("integrator")) integrator_from_json(j.at("integrator"), c.campaign.integrator);
        c.campaign.validate();
        for (auto d : c.campaign.observed_dofs)
            if (d >= c.system.n_dof()) throw ConfigError("campaign.observed_dofs: DOF out of range");
        for (auto a : c.campaign.filter.augment)
            if (a >= c.system.n_stiffness()) throw ConfigError("ukf.augment: parameter out of range");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidParameter& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------- files

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + p.string() + "'");
    out << text;
}

inline json read_json(const std::filesystem::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in '" + p.string() + "': " + e.what());
    }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- GP / snapshot

inline json gp_model_to_json(const GpModel& m) {
    using namespace io_detail;
    const Kernel k = m.kernel();
    return {{"config", gp_config_to_json(m.config())},
            {"theta", vec(m.theta())},
            {"inputs", vec(m.inputs())},
            {"targets", vec(m.targets())},
            {"point_variance", vec(m.point_variance())},
            {"kernel", {{"family", to_string(k.family)}, {"variance", k.variance}, {"lengthscale", k.lengthscale}}},
            {"noise_variance", m.noise_variance()}};
}

inline GpModel gp_model_from_json(const json& j) {
    using namespace io_detail;
    GpConfig cfg;
    gp_config_from_json(j.at("config"), cfg);
    return GpModel(to_vec(j.at("inputs")), to_vec(j.at("targets")), to_vec(j.at("point_variance")), cfg,
                   to_vec(j.at("theta")));
}

inline json snapshot_to_json(const TwinSnapshot& s) {
    using namespace io_detail;
    json j;
    j["format"] = "dtwin-snapshot";
    j["version"] = s.version;
    j["config"] = config_to_json(TwinConfig{s.system, s.config});
    j["parameters"] = one_based(s.parameters);
    j["windows_processed"] = s.windows_processed();
    json hist = json::array();
    for (const auto& h : s.history) {
        hist.push_back({{"index", h.index},
                        {"t_s", h.t_s},
                        {"accepted", h.accepted},
                        {"message", h.message},
                        {"mean", vec(h.mean)},
                        {"stddev", vec(h.stddev)},
                        {"cov", mat(h.cov)},
                        {"repairs",
                         {{"psd_repairs", h.repairs.psd_repairs},
                          {"jitter_events", h.repairs.jitter_events},
                          {"max_repair_ratio", h.repairs.max_repair_ratio}}}});
    }
    j["history"] = std::move(hist);
    j["warm"] = s.warm ? json{{"mean", vec(s.warm->mean)}, {"cov", mat(s.warm->cov)}} : json(nullptr);
    json gps = json::array();
    for (const auto& g : s.gps) gps.push_back({{"parameter", g.parameter + 1}, {"model", gp_model_to_json(g.model)}});
    j["gps"] = std::move(gps);
    j["gp_message"] = s.gp_message;
    return j;
}

inline TwinSnapshot snapshot_from_json(const json& j) {
    using namespace io_detail;
    try {
        if (j.value("format", std::string()) != "dtwin-snapshot") throw ConfigError("not a twin snapshot");
        const int version = j.at("version").get<int>();
        if (version != TwinSnapshot::format_version) {
            throw ConfigError("unsupported snapshot version " + std::to_string(version));
        }
        const TwinConfig cfg = config_from_json(j.at("config"));
        TwinSnapshot s;
        s.version = version;
        s.system = cfg.system;
        s.config = cfg.campaign;
        s.parameters = zero_based(j.at("parameters"), "parameters");
        for (const auto& h : j.at("history")) {
            WindowEstimate e;
            e.index = h.at("index").get<std::size_t>();
            e.t_s = h.at("t_s").get<double>();
            e.accepted = h.at("accepted").get<bool>();
            e.message = h.at("message").get<std::string>();
            e.mean = to_vec(h.at("mean"));
            e.stddev = to_vec(h.at("stddev"));
            e.cov = to_mat(h.at("cov"));
            const auto& r = h.at("repairs");
            e.repairs.psd_repairs = r.at("psd_repairs").get<std::size_t>();
            e.repairs.jitter_events = r.at("jitter_events").get<std::size_t>();
            e.repairs.max_repair_ratio = r.at("max_repair_ratio").get<double>();
            s.history.push_back(std::move(e));
        }
        if (j.at("windows_processed").get<std::size_t>() != s.history.size()) {
            throw ConfigError("snapshot history length disagrees with windows_processed");
        }
        if (!j.at("warm").is_null()) s.warm = WarmStart{to_vec(j["warm"].at("mean")), to_mat(j["warm"].at("cov"))};
        for (const auto& g : j.at("gps")) {
            s.gps.push_back({g.at("parameter").get<std::size_t>() - 1, gp_model_from_json(g.at("model"))});
        }
        s.gp_message = j.at("gp_message").get<std::string>();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("snapshot: ") + e.what());
    }
}

inline void save_snapshot(const TwinSnapshot& s, const std::filesystem::path& p) {
    write_text(p, dump(snapshot_to_json(s)));
}

inline TwinSnapshot load_snapshot(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ConfigError("snapshot '" + p.string() + "' does not exist");
    return snapshot_from_json(read_json(p));
}

// ---------------------------------------------------------------- CSV

/// Shortest round-trip decimal form.
inline std::string format_number(double v) {
    char buf[64];
    if (v == 0.0) v = 0.0;
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Row-wise CSV builder with CRLF line endings.
class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header) : cols_(header.size()) { row(header); }

    void row(const std::vector<std::string>& fields) {
        require(fields.size() == cols_, "CSV row has the wrong number of fields");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << csv_field(fields[i]);
        }
        out_ << "\r\n";
    }

    void numbers(const std::vector<double>& values) {
        std::vector<std::string> f;
        f.reserve(values.size());
        for (double v : values) f.push_back(format_number(v));
        row(f);
    }

    std::string str() const { return out_.str(); }

private:
    std::size_t cols_;
    std::ostringstream out_;
};

/// Parsed CSV: header plus rows of fields.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ConfigError("CSV column '" + name + "' not found");
    }
};

inline CsvTable parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            rec.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                rec.push_back(std::move(field));
                records.push_back(std::move(rec));
            }
            rec.clear();
            field.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted) throw ConfigError("unterminated quoted CSV field");
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw ConfigError("empty CSV");
    CsvTable t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size()) {
            throw ConfigError("CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                              " fields, expected " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

inline double parse_number(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("invalid number '" + s + "'");
    return v;
}

/// time, state entries (model labels), a1..aN, f1..fN.
inline std::string trajectory_csv(const Trajectory& t, const StateSpaceModel& model) {
    std::vector<std::string> header{"time"};
    for (const auto& l : model.labels) header.push_back(l.name);
    const auto n = model.system->n_dof();
    for (std::size_t i = 0; i < n; ++i) header.push_back("a" + std::to_string(i + 1));
    for (std::size_t i = 0; i < n; ++i) header.push_back("f" + std::to_string(i + 1));
    CsvWriter w(header);
    for (std::size_t k = 0; k < t.size(); ++k) {
        std::vector<double> row{t.times[k]};
        for (Eigen::Index i = 0; i < t.states[k].size(); ++i) row.push_back(t.states[k](i));
        for (Eigen::Index i = 0; i < t.accelerations[k].size(); ++i) row.push_back(t.accelerations[k](i));
        for (Eigen::Index i = 0; i < t.forces[k].size(); ++i) row.push_back(t.forces[k](i));
        w.numbers(row);
    }
    return w.str();
}

/// Window CSV: time, f1..fN, then one acceleration column per observed DOF.
inline std::string window_csv(const MeasurementWindow& w) {
    std::vector<std::string> header{"time"};
    for (Eigen::Index i = 0; i < w.force.cols(); ++i) header.push_back("f" + std::to_string(i + 1));
    for (auto d : w.observed_dofs) header.push_back("a" + std::to_string(d + 1));
    CsvWriter out(header);
    for (std::size_t k = 0; k < w.samples(); ++k) {
        std::vector<double> row{w.times[k]};
        const auto r = static_cast<Eigen::Index>(k);
        for (Eigen::Index i = 0; i < w.force.cols(); ++i) row.push_back(w.force(r, i));
        for (Eigen::Index i = 0; i < w.accel.cols(); ++i) row.push_back(w.accel(r, i));
        out.numbers(row);
    }
    return out.str();
}

inline json window_sidecar(const MeasurementWindow& w, const std::string& csv_name) {
    json j = {{"t_s", w.t_s},
              {"csv", csv_name},
              {"observed_dofs", io_detail::one_based(w.observed_dofs)},
              {"accel_noise_variance", io_detail::vec(w.accel_noise_variance)}};
    if (w.provenance.kind == Provenance::Kind::synthetic) {
        j["provenance"] = {{"kind", "synthetic"}, {"seed", w.provenance.seed}};
    } else {
        j["provenance"] = {{"kind", "ingested"}, {"path", w.provenance.path}};
    }
    return j;
}

inline void save_window(const MeasurementWindow& w, const std::filesystem::path& csv_path) {
    write_text(csv_path, window_csv(w));
    std::filesystem::path side = csv_path;
    side.replace_extension(".json");
    write_text(side, dump(window_sidecar(w, csv_path.filename().string())));
}

/// Load a window from its JSON sidecar (which names the CSV next to it).
inline MeasurementWindow load_window(const std::filesystem::path& sidecar_path) {
    const json side = read_json(sidecar_path);
    try {
        io_detail::check_keys(side, {"t_s", "csv", "observed_dofs", "accel_noise_variance", "provenance"},
                              "window sidecar");
        const auto csv_path = sidecar_path.parent_path() / side.at("csv").get<std::string>();
        const CsvTable t = parse_csv(read_text(csv_path));
        MeasurementWindow w;
        w.t_s = side.at("t_s").get<double>();
        w.observed_dofs = io_detail::zero_based(side.at("observed_dofs"), "observed_dofs");
        if (side.contains("accel_noise_variance")) w.accel_noise_variance = io_detail::to_vec(side.at("accel_noise_variance"));
        const std::size_t tc = t.column("time");
        std::vector<std::size_t> fc, ac;
        for (std::size_t i = 0;; ++i) {
            const auto name = "f" + std::to_string(i + 1);
            if (std::find(t.header.begin(), t.header.end(), name) == t.header.end()) break;
            fc.push_back(t.column(name));
        }
        for (auto d : w.observed_dofs) ac.push_back(t.column("a" + std::to_string(d + 1)));
        const auto n = static_cast<Eigen::Index>(t.rows.size());
        w.force.resize(n, static_cast<Eigen::Index>(fc.size()));
        w.accel.resize(n, static_cast<Eigen::Index>(ac.size()));
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& row = t.rows[static_cast<std::size_t>(r)];
            w.times.push_back(parse_number(row[tc]));
            for (std::size_t i = 0; i < fc.size(); ++i) w.force(r, static_cast<Eigen::Index>(i)) = parse_number(row[fc[i]]);
            for (std::size_t i = 0; i < ac.size(); ++i) w.accel(r, static_cast<Eigen::Index>(i)) = parse_number(row[ac[i]]);
        }
        const auto prov = side.value("provenance", json::object());
        if (prov.value("kind", "") == "synthetic") {
            w.provenance.kind = Provenance::Kind::synthetic;
            w.provenance.seed = prov.at("seed").get<std::uint64_t>();
        } else {
            w.provenance.kind = Provenance::Kind::ingested;
            w.provenance.path = csv_path.string();
        }
        w.validate();
        return w;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("window sidecar: ") + e.what());
    }
}

/// time, then mean_<label> and sd_<label> per state entry.
inline std::string filter_csv(const FilterResult& r, const StateSpaceModel& model) {
    std::vector<std::string> header{"time"};
    for (const auto& l : model.labels) {
        header.push_back("mean_" + l.name);
        header.push_back("sd_" + l.name);
    }
    CsvWriter w(header);
    for (std::size_t k = 0; k < r.times.size(); ++k) {
        std::vector<double> row{r.times[k]};
        for (Eigen::Index i = 0; i < r.means[k].size(); ++i) {
            row.push_back(r.means[k](i));
            row.push_back(r.stddevs[k](i));
        }
        w.numbers(row);
    }
    return w.str();
}

/// t_s, then k<j>, sd<j> per tracked parameter; rejected windows leave them empty.
inline std::string estimates_csv(const TwinSnapshot& s) {
    std::vector<std::string> header{"t_s"};
    for (auto j : s.parameters) {
        header.push_back("k" + std::to_string(j + 1));
        header.push_back("sd" + std::to_string(j + 1));
    }
    CsvWriter w(header);
    for (const auto& h : s.history) {
        std::vector<std::string> row{format_number(h.t_s)};
        for (std::size_t a = 0; a < s.parameters.size(); ++a) {
            row.push_back(h.accepted ? format_number(h.mean(static_cast<Eigen::Index>(a))) : "");
            row.push_back(h.accepted ? format_number(h.stddev(static_cast<Eigen::Index>(a))) : "");
        }
        w.row(row);
    }
    return w.str();
}

/// Long format: parameter, t_s, mean, stddev, lower95, upper95.
inline std::string gp_track_csv(const std::vector<ParameterForecast>& forecasts) {
    CsvWriter w({"parameter", "t_s", "mean", "stddev", "lower95", "upper95"});
    for (const auto& f : forecasts) {
        const auto& p = f.prediction;
        const Vector sd = p.stddev(), lo = p.lower95(), hi = p.upper95();
        for (Eigen::Index i = 0; i < p.query.size(); ++i) {
            w.row({"k" + std::to_string(f.parameter + 1), format_number(p.query(i)), format_number(p.mean(i)),
                   format_number(sd(i)), format_number(lo(i)), format_number(hi(i))});
        }
    }
    return w.str();
}

}  // namespace dtwin
