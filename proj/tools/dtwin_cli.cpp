// dtwin command-line front end: simulate, filter, campaign, predict, report.

#include "dtwin.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dtwin;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_usage = 2;
constexpr int exit_numeric = 3;

struct CommonOptions {
    std::string config_path;
    std::string out_dir = "dtwin_out";
    std::optional<std::uint64_t> seed;
    std::string observe;
    std::optional<double> cutoff_days;
    bool verbose = false;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config_path, "JSON config with system/campaign/ukf/gp/integrator sections");
    sub->add_option("--out", o.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "master seed (overrides integrator.seed and gp.seed)");
    sub->add_option("--observe", o.observe, "comma-separated 1-based DOFs with acceleration sensors");
    sub->add_option("--cutoff-days", o.cutoff_days, "train GPs only on windows up to this slow time");
    sub->add_flag("--verbose", o.verbose, "progress on stderr");
}

std::vector<std::size_t> parse_dof_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(item, &used);
        } catch (const std::exception&) {
            throw ConfigError("--observe: '" + item + "' is not an integer");
        }
        if (used != item.size() || v < 1) throw ConfigError("--observe: DOFs are positive 1-based integers");
        out.push_back(static_cast<std::size_t>(v - 1));
    }
    if (out.empty()) throw ConfigError("--observe: empty DOF list");
    return out;
}

TwinConfig resolve_config(const CommonOptions& o) {
    TwinConfig c;
    if (!o.config_path.empty()) c = config_from_json(read_json(o.config_path));
    if (o.seed) {
        c.campaign.integrator.seed = *o.seed;
        c.campaign.gp.seed = *o.seed;
    }
    if (!o.observe.empty()) {
        c.campaign.observed_dofs = parse_dof_list(o.observe);
        for (auto d : c.campaign.observed_dofs)
            if (d >= c.system.n_dof()) throw ConfigError("--observe: DOF out of range");
    }
    if (o.cutoff_days) c.campaign.gp_cutoff_days = *o.cutoff_days;
    c.campaign.validate();
    return c;
}

void write_echo(const CommonOptions& o, const std::string& command, const TwinConfig& c, const json& extra = {}) {
    json j;
    j["command"] = command;
    j["config"] = config_to_json(c);
    if (!extra.is_null()) j["arguments"] = extra;
    write_text(fs::path(o.out_dir) / "config_echo.json", dump(j));
}

void log(const CommonOptions& o, const std::string& msg) {
    if (o.verbose) std::cerr << msg << '\n';
}

double relative_error(double est, double truth) { return (est - truth) / truth; }

// ------------------------------------------------------------- simulate

struct SimulateOptions {
    double t_days = 0.0;
};

int cmd_simulate(const CommonOptions& o, const SimulateOptions& so) {
    const TwinConfig c = resolve_config(o);
    write_echo(o, "simulate", c, {{"t_days", so.t_days}});
    const auto schedule = DegradationSchedule::for_system(c.system, c.campaign.degradation_rate);
    const auto syn = synthesize_window(c.system, schedule, c.campaign, so.t_days, c.campaign.integrator.seed);
    const MdofSystem truth = c.system.with_stiffness(degraded_stiffness(schedule, so.t_days));
    const auto model = to_state_space(truth);
    const fs::path out(o.out_dir);
    write_text(out / "trajectory.csv", trajectory_csv(syn.truth, model));
    save_window(syn.window, out / "window.csv");
    json meta = {{"samples", syn.truth.size()},
                 {"dt", c.campaign.integrator.dt},
                 {"scheme", to_string(c.campaign.integrator.scheme)},
                 {"seed", c.campaign.integrator.seed},
                 {"t_days", so.t_days},
                 {"true_stiffness", to_std(truth.stiffness.values)},
                 {"state_columns", model.dim},
                 {"acceleration_columns", truth.n_dof()}};
    write_text(out / "metadata.json", dump(meta));
    log(o, "simulated " + std::to_string(syn.truth.size()) + " samples");
    return exit_ok;
}

// ------------------------------------------------------------- filter

struct FilterOptions {
    std::string window;
};

int cmd_filter(const CommonOptions& o, const FilterOptions& fo) {
    const TwinConfig c = resolve_config(o);
    write_echo(o, "filter", c, {{"window", fo.window}});
    MeasurementWindow w;
    std::optional<Vector> truth;
    if (!fo.window.empty()) {
        w = load_window(fo.window);
    } else {
        const auto schedule = DegradationSchedule::for_system(c.system, c.campaign.degradation_rate);
        w = synthesize_window(c.system, schedule, c.campaign, 0.0, c.campaign.integrator.seed).window;
        truth = degraded_stiffness(schedule, 0.0);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = filter_window(c.system, w, c.campaign.filter);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto model = to_state_space(c.system, c.campaign.filter.augmented(c.system));
    const fs::path out(o.out_dir);
    write_text(out / "filter.csv", filter_csv(res, model));
    json summary;
    json params = json::array();
    for (std::size_t a = 0; a < res.parameter_indices.size(); ++a) {
        const auto ai = static_cast<Eigen::Index>(a);
        json p = {{"name", "k" + std::to_string(res.parameter_indices[a] + 1)},
                  {"estimate", res.parameter_mean(ai)},
                  {"stddev", std::sqrt(std::max(0.0, res.parameter_cov(ai, ai)))}};
        if (truth) {
            const double t = (*truth)(static_cast<Eigen::Index>(res.parameter_indices[a]));
            p["truth"] = t;
            p["relative_error"] = relative_error(res.parameter_mean(ai), t);
        }
        params.push_back(p);
    }
    summary["parameters"] = params;
    summary["parameter_covariance"] = io_detail::mat(res.parameter_cov);
    summary["psd_repairs"] = res.repairs.psd_repairs;
    summary["jitter_events"] = res.repairs.jitter_events;
    summary["max_repair_ratio"] = res.repairs.max_repair_ratio;
    summary["samples"] = w.samples();
    summary["config"] = config_to_json(c);
    write_text(out / "summary.json", dump(summary));
    write_text(out / "runtime.json", dump(json{{"filter_seconds", secs}}));
    for (const auto& p : params) log(o, p["name"].get<std::string>() + " = " + std::to_string(p["estimate"].get<double>()));
    return exit_ok;
}

// ------------------------------------------------------------- campaign

struct CampaignOptions {
    std::optional<std::size_t> max_windows;
    bool save_windows = false;
};

Vector dense_grid(double from, double to, double step) {
    const auto n = static_cast<Eigen::Index>(std::floor((to - from) / step + 1e-9)) + 1;
    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i) g(i) = from + static_cast<double>(i) * step;
    return g;
}

int cmd_campaign(const CommonOptions& o, const CampaignOptions& co) {
    const TwinConfig c = resolve_config(o);
    json args = {{"save_windows", co.save_windows}};
    args["max_windows"] = co.max_windows ? json(*co.max_windows) : json(nullptr);
    write_echo(o, "campaign", c, args);
    const fs::path out(o.out_dir);
    const auto schedule = DegradationSchedule::for_system(c.system, c.campaign.degradation_rate);
    auto count = c.campaign.window_times().size();
    if (co.max_windows) count = std::min(count, *co.max_windows);

    TwinSnapshot snap = make_twin(c.system, c.campaign);
    save_snapshot(snap, out / "snapshot.json");
    json runtime = json::array();
    for (std::size_t i = 0; i < count; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        MeasurementWindow w;
        try {
            w = generate_window(c.system, schedule, c.campaign, i);
        } catch (const NumericFailure&) {
            save_snapshot(snap, out / "snapshot.json");
            throw;
        }
        if (co.save_windows) {
            char name[32];
            std::snprintf(name, sizeof name, "window_%03zu.csv", i);
            save_window(w, out / "windows" / name);
        }
        snap = assimilate_window(snap, w);
        save_snapshot(snap, out / "snapshot.json");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        runtime.push_back({{"index", i}, {"seconds", secs}});
        const auto& h = snap.history.back();
        std::ostringstream msg;
        msg << "window " << i << " t_s=" << h.t_s << (h.accepted ? "" : " REJECTED: " + h.message);
        if (h.accepted) msg << " k=" << h.mean.transpose();
        log(o, msg.str());
    }
    write_text(out / "estimates.csv", estimates_csv(snap));
    CsvWriter truth_csv([&] {
        std::vector<std::string> h{"t_s"};
        for (std::size_t j = 0; j < c.system.n_stiffness(); ++j) h.push_back("k" + std::to_string(j + 1));
        return h;
    }());
    for (const auto& h : snap.history) {
        std::vector<double> row{h.t_s};
        const Vector k = degraded_stiffness(schedule, h.t_s);
        for (Eigen::Index j = 0; j < k.size(); ++j) row.push_back(k(j));
        truth_csv.numbers(row);
    }
    write_text(out / "truth.csv", truth_csv.str());
    if (!snap.gps.empty()) {
        const double end = std::max(c.campaign.horizon_days, c.campaign.interval_days) * 1.25;
        const auto grid = dense_grid(0.0, end, c.campaign.interval_days / 5.0);
        write_text(out / "gp_track.csv", gp_track_csv(predict_parameters(snap, grid)));
    }
    write_text(out / "runtime.json", dump(json{{"windows", runtime}}));
    return exit_ok;
}

// ------------------------------------------------------------- predict

struct PredictOptions {
    std::string snapshot;
    std::vector<double> at;
    double duration = 5.0;
    std::size_t ensemble = 0;
};

int cmd_predict(const CommonOptions& o, const PredictOptions& po) {
    const TwinSnapshot snap = load_snapshot(po.snapshot);
    TwinConfig c{snap.system, snap.config};
    if (o.seed) c.campaign.integrator.seed = *o.seed;
    write_echo(o, "predict", c,
               {{"snapshot", po.snapshot}, {"at", po.at}, {"duration", po.duration}, {"ensemble", po.ensemble}});
    if (po.at.empty()) throw ConfigError("predict needs at least one --at DAYS");
    if (snap.gps.empty()) throw ConfigError("snapshot has no trained GP models");
    const fs::path out(o.out_dir);
    write_text(out / "parameter_forecast.csv", gp_track_csv(predict_parameters(snap, from_std(po.at))));
    const auto view = to_state_space(snap.system);
    for (std::size_t i = 0; i < po.at.size(); ++i) {
        const auto pred = predict_response(snap, po.at[i], po.duration, c.campaign.integrator.seed, po.ensemble);
        const std::string tag = "t" + format_number(po.at[i]);
        write_text(out / ("response_" + tag + ".csv"), trajectory_csv(pred.trajectory, view));
        if (pred.ensemble) {
            const auto& e = *pred.ensemble;
            std::vector<std::string> header{"time"};
            for (Eigen::Index d = 0; d < e.mean.cols(); ++d) {
                const auto x = "x" + std::to_string(d + 1);
                for (const char* s : {"_mean", "_sd", "_q05", "_q95"}) header.push_back(x + s);
            }
            CsvWriter w(header);
            for (std::size_t k = 0; k < e.times.size(); ++k) {
                const auto r = static_cast<Eigen::Index>(k);
                std::vector<double> row{e.times[k]};
                for (Eigen::Index d = 0; d < e.mean.cols(); ++d) {
                    row.insert(row.end(), {e.mean(r, d), e.stddev(r, d), e.q05(r, d), e.q95(r, d)});
                }
                w.numbers(row);
            }
            write_text(out / ("ensemble_" + tag + ".csv"), w.str());
        }
        log(o, "predicted response at t=" + format_number(po.at[i]) + " days");
    }
    return exit_ok;
}

// ------------------------------------------------------------- report

struct ReportOptions {
    std::string snapshot;
};

json build_report(const TwinSnapshot& snap) {
    json r;
    r["windows_processed"] = snap.windows_processed();
    const auto accepted = snap.accepted();
    r["windows_accepted"] = accepted.size();
    if (snap.history.empty()) {
        r["status"] = "no windows processed";
        return r;
    }
    r["status"] = "ok";
    const auto schedule = DegradationSchedule::for_system(snap.system, snap.config.degradation_rate);
    std::size_t repairs = 0, jitter = 0;
    double worst_ratio = 0.0;
    for (const auto& h : snap.history) {
        repairs += h.repairs.psd_repairs;
        jitter += h.repairs.jitter_events;
        worst_ratio = std::max(worst_ratio, h.repairs.max_repair_ratio);
    }
    r["psd_repairs"] = repairs;
    r["jitter_events"] = jitter;
    r["max_repair_ratio"] = worst_ratio;
    json params = json::array();
    if (!accepted.empty()) {
        const WindowEstimate& last = *accepted.back();
        const Vector truth = degraded_stiffness(schedule, last.t_s);
        for (std::size_t a = 0; a < snap.parameters.size(); ++a) {
            const std::size_t j = snap.parameters[a];
            const double est = last.mean(static_cast<Eigen::Index>(a));
            const double t = truth(static_cast<Eigen::Index>(j));
            const double err = relative_error(est, t);
            json p = {{"name", "k" + std::to_string(j + 1)},
                      {"t_s", last.t_s},
                      {"estimate", est},
                      {"truth", t},
                      {"relative_error", err},
                      {"accuracy_percent", 100.0 * (1.0 - std::abs(err))},
                      {"frozen", snap.system.is_frozen(j)}};
            if (const auto* g = snap.gp_for(j)) {
                json held = json::array();
                double worst = 0.0;
                for (const auto* h : accepted) {
                    if (!snap.config.gp_cutoff_days || h->t_s <= *snap.config.gp_cutoff_days + 1e-9) continue;
                    Vector q(1);
                    q << h->t_s;
                    const auto pr = g->model.predict(q);
                    const double tv = degraded_stiffness(schedule, h->t_s)(static_cast<Eigen::Index>(j));
                    const double e = relative_error(pr.mean(0), tv);
                    worst = std::max(worst, std::abs(e));
                    held.push_back({{"t_s", h->t_s},
                                    {"gp_mean", pr.mean(0)},
                                    {"gp_stddev", std::sqrt(pr.variance(0))},
                                    {"truth", tv},
                                    {"relative_error", e}});
                }
                p["gp_heldout"] = held;
                p["gp_heldout_max_abs_error"] = worst;
                const Kernel k = g->model.kernel();
                p["gp_kernel"] = {{"family", to_string(k.family)},
                                  {"variance", k.variance},
                                  {"lengthscale_days", k.lengthscale},
                                  {"noise_variance", g->model.noise_variance()}};
            }
            params.push_back(p);
        }
    }
    r["parameters"] = params;
    r["gp_cutoff_days"] = snap.config.gp_cutoff_days ? json(*snap.config.gp_cutoff_days) : json(nullptr);
    if (!snap.gp_message.empty()) r["gp_message"] = snap.gp_message;
    return r;
}

std::string report_text(const json& r) {
    std::ostringstream s;
    s << "windows processed: " << r["windows_processed"].get<std::size_t>() << "\n";
    if (r["status"] != "ok") {
        s << "no windows processed\n";
        return s.str();
    }
    s << "windows accepted:  " << r["windows_accepted"].get<std::size_t>() << "\n";
    s << "PSD repairs: " << r["psd_repairs"].get<std::size_t>() << ", jitter events: "
      << r["jitter_events"].get<std::size_t>() << "\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-6s %12s %12s %10s %10s %12s\n", "param", "estimate", "truth", "rel.err",
                  "accuracy", "gp held-out");
    s << line;
    for (const auto& p : r["parameters"]) {
        const std::string held = p.contains("gp_heldout_max_abs_error") && !p["gp_heldout"].empty()
                                     ? format_number(std::round(p["gp_heldout_max_abs_error"].get<double>() * 1e6) / 1e4) + "%"
                                     : "-";
        std::snprintf(line, sizeof line, "%-6s %12.3f %12.3f %9.3f%% %9.2f%% %12s\n",
                      p["name"].get<std::string>().c_str(), p["estimate"].get<double>(), p["truth"].get<double>(),
                      100.0 * p["relative_error"].get<double>(), p["accuracy_percent"].get<double>(), held.c_str());
        s << line;
    }
    return s.str();
}

int cmd_report(const CommonOptions& o, const ReportOptions& ro) {
    const TwinSnapshot snap = load_snapshot(ro.snapshot);
    write_echo(o, "report", TwinConfig{snap.system, snap.config}, {{"snapshot", ro.snapshot}});
    json r = build_report(snap);
    const fs::path runtime = fs::path(ro.snapshot).parent_path() / "runtime.json";
    if (fs::exists(runtime)) r["runtime"] = read_json(runtime);
    const fs::path out(o.out_dir);
    write_text(out / "report.json", dump(r));
    const std::string text = report_text(r);
    write_text(out / "report.txt", text);
    std::cout << text;
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Digital-twin engine for stochastic MDOF systems"};
    app.require_subcommand(1);

    CommonOptions common;
    SimulateOptions sim;
    FilterOptions filt;
    CampaignOptions camp;
    PredictOptions pred;
    ReportOptions rep;

    auto* s_sim = app.add_subcommand("simulate", "simulate one window: trajectory.csv, window.csv/.json, metadata.json");
    add_common(s_sim, common);
    s_sim->add_option("--t-days", sim.t_days, "slow time of the simulated window (stiffness degraded to it)");

    auto* s_filt = app.add_subcommand("filter", "run the UKF on one window: filter.csv, summary.json");
    add_common(s_filt, common);
    s_filt->add_option("--window", filt.window, "window sidecar JSON (default: synthesize one at t_s = 0)");

    auto* s_camp = app.add_subcommand("campaign", "synthetic campaign: snapshot.json, estimates.csv, gp_track.csv");
    add_common(s_camp, common);
    s_camp->add_option("--max-windows", camp.max_windows, "process at most this many windows");
    s_camp->add_flag("--save-windows", camp.save_windows, "also write every window as CSV + JSON sidecar");

    auto* s_pred = app.add_subcommand("predict", "forecast parameters and responses from a snapshot");
    add_common(s_pred, common);
    s_pred->add_option("--snapshot", pred.snapshot, "snapshot JSON")->required();
    s_pred->add_option("--at", pred.at, "future slow times in days")->required();
    s_pred->add_option("--duration", pred.duration, "response duration in seconds")->capture_default_str();
    s_pred->add_option("--ensemble", pred.ensemble, "number of GP parameter draws for response quantiles");

    auto* s_rep = app.add_subcommand("report", "accuracy summary: report.json, report.txt");
    add_common(s_rep, common);
    s_rep->add_option("--snapshot", rep.snapshot, "snapshot JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (s_sim->parsed()) return cmd_simulate(common, sim);
        if (s_filt->parsed()) return cmd_filter(common, filt);
        if (s_camp->parsed()) return cmd_campaign(common, camp);
        if (s_pred->parsed()) return cmd_predict(common, pred);
        if (s_rep->parsed()) return cmd_report(common, rep);
    } catch (const InvalidParameter& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return exit_numeric;
    }
    return exit_usage;
}
