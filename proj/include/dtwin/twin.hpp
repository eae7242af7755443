#pragma once

// Slow-timescale digital-twin loop: synthetic measurement campaigns,
// per-window assimilation, parameter tracking and forward prediction.

#include "dtwin/common.hpp"
#include "dtwin/gpr.hpp"
#include "dtwin/model.hpp"
#include "dtwin/sde.hpp"
#include "dtwin/state_space.hpp"
#include "dtwin/ukf.hpp"
#include "dtwin/window.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace dtwin {

/// splitmix64 of (seed, stream): independent sub-streams from one seed.
inline std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Map `fn` over [0, count) on up to hardware_concurrency threads, keeping order.
template <class Fn>
auto parallel_map(std::size_t count, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using T = decltype(fn(std::size_t{}));
    std::vector<T> out;
    out.reserve(count);
    const std::size_t width = std::max(1u, std::thread::hardware_concurrency());
    for (std::size_t start = 0; start < count; start += width) {
        std::vector<std::future<T>> batch;
        for (std::size_t i = start; i < std::min(count, start + width); ++i) {
            batch.push_back(std::async(std::launch::async, [&fn, i] { return fn(i); }));
        }
        for (auto& f : batch) out.push_back(f.get());
    }
    return out;
}

enum class CovarianceCarry {
    reset,  ///< every window starts from the configured prior covariance
    carry,  ///< terminal parameter covariance of the previous window, inflated and floored
};

inline std::string to_string(CovarianceCarry c) { return c == CovarianceCarry::reset ? "reset" : "carry"; }

inline CovarianceCarry covariance_carry_from_string(const std::string& s) {
    if (s == "reset") return CovarianceCarry::reset;
    if (s == "carry") return CovarianceCarry::carry;
    throw InvalidParameter("unknown covariance carry mode '" + s + "'");
}

/// How one window's filter is initialised and tuned.
struct FilterSetup {
    UkfParams ukf;
    FilterDynamics dynamics = FilterDynamics::euler_second_order;
    std::vector<std::size_t> augment;  // stiffness indices in the state; empty means all
    double initial_fraction = 0.8;     // first-window guess relative to nominal
    double state_variance = 1e-6;      // displacement and velocity prior variance
    double parameter_sd_fraction = 0.1;
    double frozen_sd_fraction = 1e-3;
    CovarianceCarry carry = CovarianceCarry::reset;
    double carry_inflation = 1.0;
    double carry_min_sd_fraction = 0.005;  // of the carried estimate
    double velocity_noise_scale = 1.0;     // element-wise factor on Q velocity entries
    double parameter_walk_fraction = 0.0;  // per-step random-walk sd of parameters, relative to nominal
    Vector measurement_variance;           // used when a window carries none

    void validate() const {
        require(initial_fraction > 0.0, "initial parameter fraction must be positive");
        require(state_variance > 0.0 && parameter_sd_fraction > 0.0 && frozen_sd_fraction > 0.0,
                "prior variances must be positive");
        require(carry_inflation > 0.0 && carry_min_sd_fraction >= 0.0, "covariance carry settings are invalid");
        require(velocity_noise_scale >= 0.0 && parameter_walk_fraction >= 0.0, "process-noise scaling is invalid");
    }

    std::vector<std::size_t> augmented(const MdofSystem& sys) const {
        if (!augment.empty()) return augment;
        std::vector<std::size_t> all(sys.n_stiffness());
        for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
        return all;
    }
};

/// Previous window's terminal parameter belief.
struct WarmStart {
    Vector mean;
    Matrix cov;
};

/// Prior over the augmented state for one window.
inline GaussianBelief initial_belief(const StateSpaceModel& model, const FilterSetup& fs,
                                     const std::optional<WarmStart>& warm) {
    const MdofSystem& sys = *model.system;
    GaussianBelief b;
    b.mean = Vector::Zero(model.dim);
    b.cov = Matrix::Zero(model.dim, model.dim);
    for (auto i : model.index.displacement) b.cov(i, i) = fs.state_variance;
    for (auto i : model.index.velocity) b.cov(i, i) = fs.state_variance;
    const auto np = model.index.parameters.size();
    if (warm) require(warm->mean.size() == static_cast<Eigen::Index>(np), "warm start has wrong parameter count");
    for (std::size_t a = 0; a < np; ++a) {
        const std::size_t j = model.index.parameters[a];
        const auto pa = model.index.parameter[a];
        const double nominal = sys.stiffness.values(static_cast<Eigen::Index>(j));
        const bool frozen = sys.is_frozen(j);
        const double sd = (frozen ? fs.frozen_sd_fraction : fs.parameter_sd_fraction) * nominal;
        if (warm) {
            b.mean(pa) = warm->mean(static_cast<Eigen::Index>(a));
        } else {
            b.mean(pa) = frozen ? nominal : fs.initial_fraction * nominal;
        }
        if (!warm || fs.carry == CovarianceCarry::reset) b.cov(pa, pa) = sd * sd;
    }
    if (warm && fs.carry == CovarianceCarry::carry) {
        for (std::size_t a = 0; a < np; ++a) {
            for (std::size_t c = 0; c < np; ++c) {
                b.cov(model.index.parameter[a], model.index.parameter[c]) =
                    fs.carry_inflation * warm->cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
            }
        }
        for (std::size_t a = 0; a < np; ++a) {
            const auto pa = model.index.parameter[a];
            const double floor = std::pow(fs.carry_min_sd_fraction * warm->mean(static_cast<Eigen::Index>(a)), 2);
            b.cov(pa, pa) = std::max(b.cov(pa, pa), floor);
        }
    }
    return b;
}

/// Run the UKF on one window against the nominal system `sys`.
inline FilterResult filter_window(const MdofSystem& sys, const MeasurementWindow& window, const FilterSetup& fs,
                                  const std::optional<WarmStart>& warm = std::nullopt) {
    fs.validate();
    window.validate();
    const auto model = to_state_space(sys, fs.augmented(sys));
    const GaussianBelief init = initial_belief(model, fs, warm);

    ProcessNoiseScaling scaling;
    scaling.scale = Vector::Ones(model.dim);
    for (auto i : model.index.velocity) scaling.scale(i) = fs.velocity_noise_scale;
    scaling.floor = Vector::Zero(model.dim);
    for (std::size_t a = 0; a < model.index.parameters.size(); ++a) {
        const double k = sys.stiffness.values(static_cast<Eigen::Index>(model.index.parameters[a]));
        scaling.floor(model.index.parameter[a]) = std::pow(fs.parameter_walk_fraction * k, 2);
    }

    Vector r = window.accel_noise_variance.size() > 0 ? window.accel_noise_variance : fs.measurement_variance;
    require(r.size() == window.accel.cols(), "measurement noise variance unknown for this window");
    require((r.array() > 0.0).all(), "measurement noise variance must be positive");
    const NoiseModel noise{build_process_noise(model, window.dt(), scaling), Matrix(r.asDiagonal())};
    return run_filter(model, window, init, noise, fs.ukf, fs.dynamics);
}

/// Slow-time campaign and per-window processing settings.
struct CampaignConfig {
    double interval_days = 50.0;
    double window_duration = 5.0;  // s
    double horizon_days = 2000.0;
    std::vector<std::size_t> observed_dofs;  // 0-based; empty means all
    double accel_snr = 50.0;
    double force_snr = 20.0;
    IntegratorConfig integrator;  // seed is the campaign master seed
    double degradation_rate = 0.5e-4;
    std::optional<double> gp_cutoff_days;  // GP trained on windows with t_s ≤ cutoff
    std::size_t gp_min_windows = 3;
    FilterSetup filter;
    GpConfig gp = tracking_gp_config();

    static GpConfig tracking_gp_config() {
        GpConfig g;
        g.mean = MeanSpec::linear;
        return g;
    }

    void validate() const {
        require(interval_days > 0.0, "window interval must be positive");
        require(window_duration > 0.0, "window duration must be positive");
        require(horizon_days >= 0.0, "horizon must be non-negative");
        require(accel_snr > 0.0 && force_snr > 0.0, "SNR values must be positive");
        require(integrator.dt > 0.0, "integrator dt must be positive");
        require(degradation_rate >= 0.0, "degradation rate must be non-negative");
        require(gp_min_windows >= 3, "GP tracking needs at least three windows");
        filter.validate();
        gp.validate();
    }

    std::vector<std::size_t> observed(const MdofSystem& sys) const {
        if (!observed_dofs.empty()) return observed_dofs;
        std::vector<std::size_t> all(sys.n_dof());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }

    std::vector<double> window_times() const {
        const auto n = static_cast<std::size_t>(std::floor(horizon_days / interval_days + 1e-9)) + 1;
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(i) * interval_days;
        return t;
    }
};

/// Ground-truth trajectory and the noisy record derived from it.
struct SyntheticWindow {
    Trajectory truth;  // states, clean accelerations, driving force
    MeasurementWindow window;
};

/// One synthetic record at slow time t_s: stiffness degraded to t_s, noisy
/// force at `force_snr` driving a simulation from rest, accelerations of the
/// observed DOFs corrupted at `accel_snr`. Sub-streams of `seed`: 0 Brownian
/// path, 1 force noise, 2 acceleration noise.
inline SyntheticWindow synthesize_window(const MdofSystem& system, const DegradationSchedule& schedule,
                                         const CampaignConfig& cfg, double t_s, std::uint64_t seed) {
    const MdofSystem truth = system.with_stiffness(degraded_stiffness(schedule, t_s));
    const auto model = to_state_space(truth);
    const std::size_t n = sample_count(cfg.window_duration, cfg.integrator.dt);

    Matrix clean_force(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(truth.n_dof()));
    for (std::size_t k = 0; k < n; ++k) {
        clean_force.row(static_cast<Eigen::Index>(k)) = truth.force_at(static_cast<double>(k) * cfg.integrator.dt);
    }
    const Matrix force = corrupt_with_snr(clean_force, cfg.force_snr, split_seed(seed, 1));

    IntegratorConfig ic = cfg.integrator;
    ic.seed = split_seed(seed, 0);
    SyntheticWindow out;
    out.truth = simulate_with_input(model, Vector::Zero(model.dim), force, ic);

    const auto obs = cfg.observed(system);
    const Matrix acc_all = stack_rows(out.truth.accelerations);
    Matrix acc(acc_all.rows(), static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) {
        acc.col(static_cast<Eigen::Index>(i)) = acc_all.col(static_cast<Eigen::Index>(obs[i]));
    }

    MeasurementWindow& w = out.window;
    w.t_s = t_s;
    w.times = out.truth.times;
    w.accel = corrupt_with_snr(acc, cfg.accel_snr, split_seed(seed, 2));
    w.force = force;
    w.observed_dofs = obs;
    w.accel_noise_variance = snr_noise_variance(acc, cfg.accel_snr);
    w.provenance.kind = Provenance::Kind::synthetic;
    w.provenance.seed = seed;
    return out;
}

/// Campaign window `index`: t_s = index · interval, seed = master seed + index.
inline MeasurementWindow generate_window(const MdofSystem& system, const DegradationSchedule& schedule,
                                         const CampaignConfig& cfg, std::size_t index) {
    const double t_s = static_cast<double>(index) * cfg.interval_days;
    try {
        return synthesize_window(system, schedule, cfg, t_s, cfg.integrator.seed + index).window;
    } catch (const NumericFailure& e) {
        throw NumericFailure(std::string(e.what()) + " (window " + std::to_string(index) + ")");
    }
}

/// All windows on the campaign grid, simulated in parallel.
inline std::vector<MeasurementWindow> generate_campaign(const MdofSystem& system, const DegradationSchedule& schedule,
                                                        const CampaignConfig& cfg) {
    cfg.validate();
    const auto count = cfg.window_times().size();
    return parallel_map(count, [&](std::size_t i) { return generate_window(system, schedule, cfg, i); });
}

/// Terminal filter output of one window.
struct WindowEstimate {
    std::size_t index = 0;
    double t_s = 0.0;
    bool accepted = true;
    std::string message;  // failure reason when rejected
    Vector mean;          // augmented parameters
    Vector stddev;
    Matrix cov;
    RepairStats repairs;
};

/// GP over one stiffness element.
struct GpTrack {
    std::size_t parameter = 0;  // stiffness element index
    GpModel model;
};

/// Accumulated state of the twin.
struct TwinSnapshot {
    static constexpr int format_version = 1;
    int version = format_version;
    MdofSystem system;
    CampaignConfig config;
    std::vector<std::size_t> parameters;  // augmented stiffness indices
    std::vector<WindowEstimate> history;
    std::optional<WarmStart> warm;
    std::vector<GpTrack> gps;
    std::string gp_message;  // last GP training failure, if any

    std::size_t windows_processed() const { return history.size(); }

    std::vector<const WindowEstimate*> accepted() const {
        std::vector<const WindowEstimate*> out;
        for (const auto& h : history)
            if (h.accepted) out.push_back(&h);
        return out;
    }

    const GpTrack* gp_for(std::size_t parameter) const {
        for (const auto& g : gps)
            if (g.parameter == parameter) return &g;
        return nullptr;
    }
};

inline TwinSnapshot make_twin(const MdofSystem& system, const CampaignConfig& cfg) {
    system.validate();
    cfg.validate();
    TwinSnapshot s;
    s.system = system;
    s.config = cfg;
    s.parameters = cfg.filter.augmented(system);
    return s;
}

/// Retrain one GP per tracked non-frozen parameter on accepted windows up to
/// the cutoff. Keeps the previous models when training fails.
inline void refresh_gps(TwinSnapshot& snap) {
    std::vector<const WindowEstimate*> use;
    for (const auto* h : snap.accepted()) {
        if (!snap.config.gp_cutoff_days || h->t_s <= *snap.config.gp_cutoff_days + 1e-9) use.push_back(h);
    }
    if (use.size() < snap.config.gp_min_windows) return;
    std::vector<ParameterSeries> series;
    std::vector<std::size_t> which;
    for (std::size_t a = 0; a < snap.parameters.size(); ++a) {
        const std::size_t j = snap.parameters[a];
        if (snap.system.is_frozen(j)) continue;
        ParameterSeries s;
        s.name = "k" + std::to_string(j + 1);
        s.t_s.resize(static_cast<Eigen::Index>(use.size()));
        s.value.resize(s.t_s.size());
        s.stddev.resize(s.t_s.size());
        for (std::size_t i = 0; i < use.size(); ++i) {
            s.t_s(static_cast<Eigen::Index>(i)) = use[i]->t_s;
            s.value(static_cast<Eigen::Index>(i)) = use[i]->mean(static_cast<Eigen::Index>(a));
            s.stddev(static_cast<Eigen::Index>(i)) = use[i]->stddev(static_cast<Eigen::Index>(a));
        }
        series.push_back(std::move(s));
        which.push_back(j);
    }
    try {
        auto models = track_parameters(series, snap.config.gp);
        std::vector<GpTrack> tracks;
        for (std::size_t i = 0; i < models.size(); ++i) tracks.push_back({which[i], std::move(models[i])});
        snap.gps = std::move(tracks);
        snap.gp_message.clear();
    } catch (const Error& e) {
        snap.gp_message = e.what();
    }
}

/// Filter one window (warm-started from the last accepted one), append its
/// estimate and refresh the GPs. A filter failure appends a rejected entry
/// and leaves the warm start untouched. Out-of-order windows throw.
inline TwinSnapshot assimilate_window(const TwinSnapshot& snapshot, const MeasurementWindow& window) {
    if (!snapshot.history.empty()) {
        require(window.t_s > snapshot.history.back().t_s,
                "window at t_s=" + std::to_string(window.t_s) + " is not later than the last processed window");
    }
    TwinSnapshot snap = snapshot;
    FilterSetup fs = snap.config.filter;
    fs.augment = snap.parameters;

    WindowEstimate est;
    est.index = snap.history.size();
    est.t_s = window.t_s;
    try {
        const auto res = filter_window(snap.system, window, fs, snap.warm);
        est.mean = res.parameter_mean;
        est.cov = res.parameter_cov;
        est.stddev = res.parameter_cov.diagonal().cwiseMax(0.0).cwiseSqrt();
        est.repairs = res.repairs;
        snap.warm = WarmStart{res.parameter_mean, res.parameter_cov};
    } catch (const NumericFailure& e) {
        est.accepted = false;
        est.message = e.what();
    }
    snap.history.push_back(std::move(est));
    if (snap.history.back().accepted) refresh_gps(snap);
    return snap;
}

/// GP prediction of one parameter.
struct ParameterForecast {
    std::size_t parameter = 0;
    GpPrediction prediction;
};

inline std::vector<ParameterForecast> predict_parameters(const TwinSnapshot& snap, const Vector& future_ts) {
    if (snap.gps.empty()) throw InvalidParameter("no trained GP models in the snapshot");
    std::vector<ParameterForecast> out;
    for (const auto& g : snap.gps) out.push_back({g.parameter, g.model.predict(future_ts)});
    return out;
}

/// Stiffness at t̃: GP means for tracked parameters, nominal values otherwise.
inline Vector predicted_stiffness(const TwinSnapshot& snap, double t, Vector* variance = nullptr) {
    Vector k = snap.system.stiffness.values;
    if (variance) *variance = Vector::Zero(k.size());
    Vector q(1);
    q << t;
    for (const auto& g : snap.gps) {
        const auto p = g.model.predict(q);
        k(static_cast<Eigen::Index>(g.parameter)) = p.mean(0);
        if (variance) (*variance)(static_cast<Eigen::Index>(g.parameter)) = p.variance(0);
    }
    return k;
}

/// Per-time displacement statistics over an ensemble of parameter draws.
struct ResponseEnsemble {
    std::vector<double> times;
    Matrix mean;    // samples × N
    Matrix stddev;  // samples × N
    Matrix q05;
    Matrix q95;
    std::vector<Vector> stiffness_draws;
};

struct ResponsePrediction {
    Vector stiffness;
    Trajectory trajectory;  // at the GP-mean stiffness
    std::optional<ResponseEnsemble> ensemble;
};

/// Forward high-fidelity simulation of `system` at stiffness `k` from rest
/// under the deterministic harmonic force.
inline Trajectory simulate_at_stiffness(const MdofSystem& system, const Vector& k, double duration,
                                        const IntegratorConfig& ic) {
    const MdofSystem s = system.with_stiffness(k);
    const auto model = to_state_space(s);
    return simulate_window(model, s, Vector::Zero(model.dim), duration, ic);
}

inline ResponseEnsemble summarize_ensemble(const std::vector<Trajectory>& runs, const StateSpaceModel& view) {
    ResponseEnsemble e;
    const std::size_t n = runs.front().size();
    const auto dofs = static_cast<Eigen::Index>(view.index.displacement.size());
    e.times = runs.front().times;
    e.mean.resize(static_cast<Eigen::Index>(n), dofs);
    e.stddev.resize(e.mean.rows(), dofs);
    e.q05.resize(e.mean.rows(), dofs);
    e.q95.resize(e.mean.rows(), dofs);
    std::vector<double> vals(runs.size());
    for (std::size_t k = 0; k < n; ++k) {
        for (Eigen::Index d = 0; d < dofs; ++d) {
            for (std::size_t r = 0; r < runs.size(); ++r) vals[r] = runs[r].states[k](view.index.displacement[static_cast<std::size_t>(d)]);
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= static_cast<double>(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mean) * (v - mean);
            var /= static_cast<double>(std::max<std::size_t>(1, vals.size() - 1));
            std::sort(vals.begin(), vals.end());
            const auto quant = [&](double q) {
                const double pos = q * static_cast<double>(vals.size() - 1);
                const auto lo = static_cast<std::size_t>(std::floor(pos));
                const auto hi = std::min(lo + 1, vals.size() - 1);
                return vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
            };
            const auto row = static_cast<Eigen::Index>(k);
            e.mean(row, d) = mean;
            e.stddev(row, d) = std::sqrt(var);
            e.q05(row, d) = quant(0.05);
            e.q95(row, d) = quant(0.95);
        }
    }
    return e;
}

/// Simulate the response at t̃ with GP-mean stiffness; with `ensemble > 0`,
/// also draw stiffness from the GP marginals (stream seed+1) and summarise.
inline ResponsePrediction predict_response(const TwinSnapshot& snap, double t, double duration, std::uint64_t seed,
                                           std::size_t ensemble = 0) {
    IntegratorConfig ic = snap.config.integrator;
    ic.seed = seed;
    ResponsePrediction out;
    Vector var;
    out.stiffness = predicted_stiffness(snap, t, &var);
    out.trajectory = simulate_at_stiffness(snap.system, out.stiffness, duration, ic);
    if (ensemble > 0) {
        std::mt19937_64 rng(split_seed(seed, 1));
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<Vector> draws;
        for (std::size_t r = 0; r < ensemble; ++r) {
            Vector k = out.stiffness;
            for (Eigen::Index j = 0; j < k.size(); ++j) k(j) += std::sqrt(var(j)) * normal(rng);
            k = k.cwiseMax(1e-6 * out.stiffness);
            draws.push_back(k);
        }
        const auto runs = parallel_map(ensemble, [&](std::size_t r) {
            IntegratorConfig c = ic;
            c.seed = split_seed(seed, 2 + r);
            return simulate_at_stiffness(snap.system, draws[r], duration, c);
        });
        out.ensemble = summarize_ensemble(runs, to_state_space(snap.system));
        out.ensemble->stiffness_draws = std::move(draws);
    }
    return out;
}

}  // namespace dtwin
