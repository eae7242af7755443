#pragma once

// One-dimensional Gaussian-process regression over slow time: kernels,
// maximum-likelihood hyperparameter training and predictive moments.

#include "dtwin/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dtwin {

enum class KernelFamily { squared_exponential, matern52 };

inline std::string to_string(KernelFamily f) {
    return f == KernelFamily::squared_exponential ? "squared-exponential" : "matern-5/2";
}

inline KernelFamily kernel_family_from_string(const std::string& s) {
    if (s == "squared-exponential" || s == "se") return KernelFamily::squared_exponential;
    if (s == "matern-5/2" || s == "matern52") return KernelFamily::matern52;
    throw InvalidParameter("unknown kernel family '" + s + "'");
}

/// Stationary kernel κ(a, b) = σ² ρ(|a − b| / ℓ).
struct Kernel {
    KernelFamily family = KernelFamily::squared_exponential;
    double variance = 1.0;
    double lengthscale = 1.0;

    double operator()(double a, double b) const {
        const double r = std::abs(a - b) / lengthscale;
        if (family == KernelFamily::squared_exponential) return variance * std::exp(-0.5 * r * r);
        const double s = std::sqrt(5.0) * r;
        return variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
    }

    /// ∂κ/∂log ℓ (∂κ/∂log σ² is κ itself).
    double dlog_lengthscale(double a, double b) const {
        const double r = std::abs(a - b) / lengthscale;
        if (family == KernelFamily::squared_exponential) return variance * std::exp(-0.5 * r * r) * r * r;
        const double s = std::sqrt(5.0) * r;
        return variance * s * s * (1.0 + s) / 3.0 * std::exp(-s);
    }

    Matrix gram(const Vector& x) const { return cross(x, x); }

    Matrix cross(const Vector& a, const Vector& b) const {
        Matrix k(a.size(), b.size());
        for (Eigen::Index i = 0; i < a.size(); ++i)
            for (Eigen::Index j = 0; j < b.size(); ++j) k(i, j) = (*this)(a(i), b(j));
        return k;
    }
};

/// Mean function Φ(τ)β with β estimated by generalized least squares.
enum class MeanSpec {
    zero,      ///< Φ empty
    constant,  ///< Φ = [1]
    linear,    ///< Φ = [1, τ]
};

inline std::string to_string(MeanSpec m) {
    switch (m) {
        case MeanSpec::zero: return "zero";
        case MeanSpec::constant: return "constant";
        case MeanSpec::linear: return "linear";
    }
    return "zero";
}

inline MeanSpec mean_spec_from_string(const std::string& s) {
    if (s == "zero") return MeanSpec::zero;
    if (s == "constant") return MeanSpec::constant;
    if (s == "linear") return MeanSpec::linear;
    throw InvalidParameter("unknown GP mean basis '" + s + "'");
}

/// Rows φ(τ)ᵀ of the mean basis.
inline Matrix mean_basis(MeanSpec m, const Vector& x) {
    const Eigen::Index cols = m == MeanSpec::zero ? 0 : (m == MeanSpec::constant ? 1 : 2);
    Matrix phi(x.size(), cols);
    if (cols >= 1) phi.col(0).setOnes();
    if (cols >= 2) phi.col(1) = x;
    return phi;
}

/// Training options. Bounds are natural-log bounds in the internal
/// (standardized) units.
struct GpConfig {
    KernelFamily family = KernelFamily::squared_exponential;
    MeanSpec mean = MeanSpec::constant;
    bool standardize = true;        // targets to zero mean, unit variance
    bool fold_point_noise = false;  // add per-point variances to the diagonal
    int restarts = 5;
    int max_iter = 500;
    double tolerance = 1e-6;  // on ‖Δθ‖²
    std::uint64_t seed = 0;
    double start_lo = 1e-2, start_hi = 1e2;  // multi-start range for σ² and ℓ
    double log_variance_lo = std::log(1e-4), log_variance_hi = std::log(1e4);
    double log_lengthscale_lo = std::log(1e-2), log_lengthscale_hi = std::log(1e2);
    double log_noise_lo = std::log(1e-10), log_noise_hi = std::log(1e1);
    double jitter = 1e-10;  // relative to σ²

    void validate() const {
        require(restarts >= 1, "GP training needs at least one start");
        require(max_iter >= 1 && tolerance > 0.0, "GP iteration cap and tolerance must be positive");
        require(start_lo > 0.0 && start_hi > start_lo, "GP multi-start range is invalid");
        require(log_variance_lo < log_variance_hi && log_lengthscale_lo < log_lengthscale_hi &&
                    log_noise_lo < log_noise_hi,
                "GP hyperparameter bounds are empty");
    }
};

/// Negative log marginal likelihood and its gradient in θ = (log σ², log ℓ, log σ_n²).
struct NllResult {
    double value = 0.0;
    Vector gradient;
};

namespace detail {

struct Factorized {
    Eigen::LLT<Matrix> llt;
    Vector alpha;          // K⁻¹ r
    Vector beta;           // GLS mean coefficients (standardized units)
    Matrix phi;            // n × p
    Matrix kinv_phi;       // K⁻¹Φ
    Eigen::LLT<Matrix> a;  // ΦᵀK⁻¹Φ
    double log_det = 0.0;
    Vector residual;
};

inline Matrix training_covariance(const Kernel& k, const Vector& x, double noise, const Vector& point_noise,
                                  double jitter) {
    Matrix c = k.gram(x);
    c.diagonal().array() += noise + jitter * k.variance;
    if (point_noise.size() > 0) c.diagonal() += point_noise;
    return c;
}

inline std::optional<Factorized> factorize(const Kernel& k, const Vector& x, const Vector& y, double noise,
                                           const Vector& point_noise, MeanSpec mean, double jitter) {
    Factorized f;
    f.llt.compute(training_covariance(k, x, noise, point_noise, jitter));
    if (f.llt.info() != Eigen::Success) return std::nullopt;
    f.phi = mean_basis(mean, x);
    f.beta = Vector::Zero(f.phi.cols());
    f.residual = y;
    if (f.phi.cols() > 0) {
        f.kinv_phi = f.llt.solve(f.phi);
        f.a.compute(f.phi.transpose() * f.kinv_phi);
        if (f.a.info() != Eigen::Success) return std::nullopt;
        f.beta = f.a.solve(f.kinv_phi.transpose() * y);
        f.residual = y - f.phi * f.beta;
    }
    f.alpha = f.llt.solve(f.residual);
    const Matrix l = f.llt.matrixL();
    f.log_det = 2.0 * l.diagonal().array().log().sum();
    if (!std::isfinite(f.log_det) || !f.alpha.allFinite()) return std::nullopt;
    return f;
}

inline Kernel kernel_from_theta(KernelFamily fam, const Vector& theta) {
    return {fam, std::exp(theta(0)), std::exp(theta(1))};
}

}  // namespace detail

/// ½ rᵀK⁻¹r + ½ log|K| + (n/2) log 2π with K = κ(X, X) + σ_n² I (+ point noise),
/// r = y − Φβ̂ (β̂ by GLS, empty for the zero mean). The gradient treats β̂ as fixed,
/// which is exact at the GLS optimum.
inline NllResult negative_log_likelihood(KernelFamily family, MeanSpec mean, const Vector& theta, const Vector& x,
                                         const Vector& y, const Vector& point_noise = Vector(),
                                         double jitter = 1e-10) {
    require(theta.size() == 3, "GP hyperparameter vector must have three entries");
    const Kernel k = detail::kernel_from_theta(family, theta);
    const double noise = std::exp(theta(2));
    const auto f = detail::factorize(k, x, y, noise, point_noise, mean, jitter);
    if (!f) throw NumericFailure("GP covariance is not positive definite");
    const auto n = static_cast<double>(x.size());
    NllResult out;
    out.value = 0.5 * f->residual.dot(f->alpha) + 0.5 * f->log_det + 0.5 * n * std::log(2.0 * std::numbers::pi);

    // ∂/∂θ_j = ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ_j)
    const Matrix w = f->llt.solve(Matrix::Identity(x.size(), x.size())) - f->alpha * f->alpha.transpose();
    Matrix d_var = k.gram(x);
    d_var.diagonal().array() += jitter * k.variance;
    Matrix d_len(x.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        for (Eigen::Index j = 0; j < x.size(); ++j) d_len(i, j) = k.dlog_lengthscale(x(i), x(j));
    out.gradient.resize(3);
    out.gradient(0) = 0.5 * w.cwiseProduct(d_var).sum();
    out.gradient(1) = 0.5 * w.cwiseProduct(d_len).sum();
    out.gradient(2) = 0.5 * noise * w.trace();
    return out;
}

struct GpPrediction {
    Vector query;
    Vector mean;
    Vector variance;
    std::size_t clipped = 0;  // negative variances set to zero

    Vector stddev() const { return variance.cwiseSqrt(); }
    Vector lower95() const { return mean - 1.96 * stddev(); }
    Vector upper95() const { return mean + 1.96 * stddev(); }
};

/// Trained GP for one scalar series. Immutable after construction.
class GpModel {
public:
    GpModel() = default;

    /// Build with fixed internal hyperparameters θ = (log σ², log ℓ, log σ_n²).
    GpModel(const Vector& inputs, const Vector& targets, const Vector& point_variance, const GpConfig& cfg,
            const Vector& theta)
        : cfg_(cfg), x_raw_(inputs), y_raw_(targets), point_var_raw_(point_variance), theta_(theta) {
        require(inputs.size() == targets.size() && inputs.size() >= 1, "GP inputs and targets differ in length");
        require(point_variance.size() == 0 || point_variance.size() == inputs.size(),
                "GP point variances need one entry per input");
        require(theta.size() == 3 && theta.allFinite(), "GP hyperparameters must be three finite numbers");
        for (Eigen::Index i = 1; i < inputs.size(); ++i) {
            require(inputs(i) > inputs(i - 1), "GP training inputs must be strictly increasing");
        }
        standardize();
        const auto f = detail::factorize(kernel_internal(), x_, y_, noise_internal(), point_var_, cfg_.mean,
                                         cfg_.jitter);
        if (!f) throw NumericFailure("GP covariance is not positive definite at the given hyperparameters");
        fact_ = *f;
    }

    const GpConfig& config() const { return cfg_; }
    const Vector& theta() const { return theta_; }
    const Vector& inputs() const { return x_raw_; }
    const Vector& targets() const { return y_raw_; }
    const Vector& point_variance() const { return point_var_raw_; }
    double nll() const {
        return negative_log_likelihood(cfg_.family, cfg_.mean, theta_, x_, y_, point_var_, cfg_.jitter).value;
    }

    /// Kernel in original units (days, target units²).
    Kernel kernel() const {
        return {cfg_.family, std::exp(theta_(0)) * y_scale_ * y_scale_, std::exp(theta_(1)) * x_scale_};
    }
    double noise_variance() const { return std::exp(theta_(2)) * y_scale_ * y_scale_; }
    /// GLS mean coefficients in standardized units (inputs centred and scaled).
    const Vector& mean_coefficients() const { return fact_.beta; }

    /// Same hyperparameters and factorization recipe on new targets.
    GpModel with_targets(const Vector& targets) const {
        return GpModel(x_raw_, targets, point_var_raw_, cfg_, theta_);
    }

    /// Latent predictive mean and variance (measurement noise excluded), with
    /// the GLS correction uᵀ(ΦᵀK⁻¹Φ)⁻¹u, u = φ* − ΦᵀK⁻¹k*, for estimated means.
    GpPrediction predict(const Vector& query) const {
        const Kernel k = kernel_internal();
        Vector xq = (query.array() - x_shift_) / x_scale_;
        const Matrix ks = k.cross(x_, xq);  // n × m
        const Matrix v = fact_.llt.solve(ks);

        GpPrediction p;
        p.query = query;
        p.mean.resize(query.size());
        p.variance.resize(query.size());
        const Matrix phi_q = mean_basis(cfg_.mean, xq);
        for (Eigen::Index j = 0; j < query.size(); ++j) {
            double m = ks.col(j).dot(fact_.alpha);
            double s2 = k.variance - ks.col(j).dot(v.col(j));
            if (phi_q.cols() > 0) {
                m += phi_q.row(j).dot(fact_.beta);
                const Vector u = phi_q.row(j).transpose() - fact_.phi.transpose() * v.col(j);
                s2 += u.dot(fact_.a.solve(u));
            }
            if (s2 < 0.0) {
                s2 = 0.0;
                ++p.clipped;
            }
            p.mean(j) = y_shift_ + m * y_scale_;
            p.variance(j) = s2 * y_scale_ * y_scale_;
        }
        return p;
    }

private:
    void standardize() {
        const auto n = static_cast<double>(x_raw_.size());
        x_shift_ = x_raw_.mean();
        const double xsd = std::sqrt((x_raw_.array() - x_shift_).square().sum() / n);
        x_scale_ = xsd > 0.0 ? xsd : 1.0;
        x_ = (x_raw_.array() - x_shift_) / x_scale_;
        if (cfg_.standardize) {
            y_shift_ = y_raw_.mean();
            const double ysd = std::sqrt((y_raw_.array() - y_shift_).square().sum() / n);
            y_scale_ = ysd > 0.0 ? ysd : 1.0;
        } else {
            y_shift_ = 0.0;
            y_scale_ = 1.0;
        }
        y_ = (y_raw_.array() - y_shift_) / y_scale_;
        if (cfg_.fold_point_noise && point_var_raw_.size() > 0) {
            point_var_ = point_var_raw_ / (y_scale_ * y_scale_);
        } else {
            point_var_.resize(0);
        }
    }

    Kernel kernel_internal() const { return detail::kernel_from_theta(cfg_.family, theta_); }
    double noise_internal() const { return std::exp(theta_(2)); }

    GpConfig cfg_;
    Vector x_raw_, y_raw_, point_var_raw_;
    Vector theta_;
    Vector x_, y_, point_var_;
    double x_shift_ = 0.0, x_scale_ = 1.0, y_shift_ = 0.0, y_scale_ = 1.0;
    detail::Factorized fact_;

    friend GpModel train_gp(const Vector&, const Vector&, const GpConfig&, const Vector&);
};

namespace detail {

struct OptimizeOutcome {
    Vector theta;
    double value = std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
};

/// Projected BFGS with Armijo backtracking. Stops when iter ≥ n_max or
/// ε = ‖Δθ‖² ≤ ε_t.
template <class Objective>
OptimizeOutcome minimize_box(Objective&& fg, Vector theta, const Vector& lo, const Vector& hi, int max_iter,
                             double tol) {
    const auto clamp = [&](Vector v) { return v.cwiseMax(lo).cwiseMin(hi); };
    theta = clamp(theta);
    NllResult cur = fg(theta);
    const Eigen::Index d = theta.size();
    Matrix h_inv = Matrix::Identity(d, d);
    OptimizeOutcome out;
    for (int iter = 1; iter <= max_iter; ++iter) {
        out.iterations = iter;
        Vector dir = -h_inv * cur.gradient;
        if (dir.dot(cur.gradient) >= 0.0) {
            h_inv.setIdentity();
            dir = -cur.gradient;
        }
        double step = 1.0;
        Vector next;
        NllResult trial;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls) {
            next = clamp(theta + step * dir);
            try {
                trial = fg(next);
                if (std::isfinite(trial.value) &&
                    trial.value <= cur.value + 1e-4 * cur.gradient.dot(next - theta)) {
                    accepted = true;
                    break;
                }
            } catch (const NumericFailure&) {
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No descent along the projected direction: a (bound-)stationary point.
            out.converged = cur.gradient.norm() < 1e-3 || (theta - clamp(theta - cur.gradient)).norm() < 1e-3;
            break;
        }
        const Vector s = next - theta;
        const Vector yv = trial.gradient - cur.gradient;
        theta = next;
        cur = trial;
        const double eps = s.squaredNorm();
        if (eps <= tol) {
            out.converged = true;
            break;
        }
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const double rho = 1.0 / sy;
            const Matrix i = Matrix::Identity(d, d);
            h_inv = (i - rho * s * yv.transpose()) * h_inv * (i - rho * yv * s.transpose()) +
                    rho * s * s.transpose();
        }
    }
    out.theta = theta;
    out.value = cur.value;
    return out;
}

/// Latin-hypercube samples in [lo, hi]^d (log-uniform), one row per start.
inline Matrix latin_hypercube_log(int count, const Vector& log_lo, const Vector& log_hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Index d = log_lo.size();
    Matrix out(count, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        std::vector<int> perm(static_cast<std::size_t>(count));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int i = 0; i < count; ++i) {
            const double u = (perm[static_cast<std::size_t>(i)] + unit(rng)) / count;
            out(i, j) = log_lo(j) + u * (log_hi(j) - log_lo(j));
        }
    }
    return out;
}

}  // namespace detail

/// Maximum-likelihood training with Latin-hypercube multi-start.
/// `point_variance` (optional) holds per-target variances in target units².
inline GpModel train_gp(const Vector& inputs, const Vector& targets, const GpConfig& cfg,
                        const Vector& point_variance = Vector()) {
    cfg.validate();
    require(inputs.size() >= 3, "GP training needs at least three points");
    // Standardization and validation through a provisional model.
    GpModel proto(inputs, targets, point_variance, cfg, Vector::Zero(3));
    const Vector& x = proto.x_;
    const Vector& y = proto.y_;
    const Vector& pv = proto.point_var_;

    Vector lo(3), hi(3);
    lo << cfg.log_variance_lo, cfg.log_lengthscale_lo, cfg.log_noise_lo;
    hi << cfg.log_variance_hi, cfg.log_lengthscale_hi, cfg.log_noise_hi;
    Vector start_lo(3), start_hi(3);
    start_lo << std::log(cfg.start_lo), std::log(cfg.start_lo), std::log(1e-6);
    start_hi << std::log(cfg.start_hi), std::log(cfg.start_hi), std::log(1e-1);
    const Matrix starts = detail::latin_hypercube_log(cfg.restarts, start_lo, start_hi, cfg.seed);

    const auto objective = [&](const Vector& th) {
        return negative_log_likelihood(cfg.family, cfg.mean, th, x, y, pv, cfg.jitter);
    };

    detail::OptimizeOutcome best;
    detail::OptimizeOutcome best_any;
    for (int r = 0; r < cfg.restarts; ++r) {
        detail::OptimizeOutcome res;
        try {
            res = detail::minimize_box(objective, Vector(starts.row(r).transpose()), lo, hi, cfg.max_iter,
                                       cfg.tolerance);
        } catch (const NumericFailure&) {
            continue;
        }
        if (res.value < best_any.value) best_any = res;
        if (res.converged && res.value < best.value) best = res;
    }
    if (!std::isfinite(best.value)) {
        throw TrainingError("GP training did not converge on any restart",
                            best_any.theta.size() ? best_any.theta : Vector(starts.row(0).transpose()),
                            best_any.value);
    }
    return GpModel(inputs, targets, point_variance, cfg, best.theta);
}

/// One parameter's slow-time series.
struct ParameterSeries {
    std::string name;
    Vector t_s;
    Vector value;
    Vector stddev;  // may be empty
};

/// Independent GP per series, trained concurrently.
inline std::vector<GpModel> track_parameters(const std::vector<ParameterSeries>& series, const GpConfig& cfg) {
    std::vector<std::future<GpModel>> jobs;
    jobs.reserve(series.size());
    for (const auto& s : series) {
        require(s.t_s.size() >= 3, "parameter tracking needs at least three windows");
        jobs.push_back(std::async(std::launch::async, [&s, &cfg] {
            const Vector pv = s.stddev.size() > 0 ? Vector(s.stddev.array().square()) : Vector();
            return train_gp(s.t_s, s.value, cfg, pv);
        }));
    }
    std::vector<GpModel> out;
    out.reserve(series.size());
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

}  // namespace dtwin
