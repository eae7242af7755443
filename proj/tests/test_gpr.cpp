#include "dtwin/gpr.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace dtwin;

namespace {

Vector sorted_uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(rng);
    std::sort(v.begin(), v.end());
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1]) v[i] = v[i - 1] + 1e-6;
    return from_std(v);
}

Vector grid(double lo, double step, Eigen::Index n) {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = lo + step * static_cast<double>(i);
    return x;
}

Vector decay(const Vector& t, double k0 = 1000.0, double rate = 0.5e-4) {
    return (k0 * (-rate * t.array()).exp()).matrix();
}

double se(double a, double b, double var, double len) {
    return var * std::exp(-(a - b) * (a - b) / (2 * len * len));
}

double matern(double a, double b, double var, double len) {
    const double r = std::abs(a - b) / len;
    return var * (1 + std::sqrt(5.0) * r + 5.0 * r * r / 3.0) * std::exp(-std::sqrt(5.0) * r);
}

// Direct evaluation: r = y − Φβ̂, β̂ = (ΦᵀK⁻¹Φ)⁻¹ΦᵀK⁻¹y, ½rᵀK⁻¹r + ½log|K| + n/2 log 2π.
double nll_oracle(KernelFamily fam, MeanSpec mean, const Vector& theta, const Vector& x, const Vector& y,
                  double jitter) {
    const auto n = x.size();
    const double var = std::exp(theta(0)), len = std::exp(theta(1)), noise = std::exp(theta(2));
    Matrix k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            k(i, j) = fam == KernelFamily::squared_exponential ? se(x(i), x(j), var, len) : matern(x(i), x(j), var, len);
    k.diagonal().array() += noise + jitter * var;
    const Matrix kinv = k.inverse();
    Vector r = y;
    if (mean != MeanSpec::zero) {
        Matrix phi(n, mean == MeanSpec::constant ? 1 : 2);
        phi.col(0).setOnes();
        if (mean == MeanSpec::linear) phi.col(1) = x;
        const Vector beta = (phi.transpose() * kinv * phi).inverse() * phi.transpose() * kinv * y;
        r = y - phi * beta;
    }
    return 0.5 * r.dot(kinv * r) + 0.5 * std::log(k.determinant()) +
           0.5 * static_cast<double>(n) * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST(Kernel, HandValuesBothFamilies) {
    const Kernel s{KernelFamily::squared_exponential, 2.0, 3.0};
    EXPECT_DOUBLE_EQ(s(1.0, 1.0), 2.0);
    EXPECT_NEAR(s(0.0, 3.0), 2.0 * std::exp(-0.5), 1e-15);
    const Kernel m{KernelFamily::matern52, 2.0, 3.0};
    EXPECT_NEAR(m(0.0, 3.0), matern(0.0, 3.0, 2.0, 3.0), 1e-15);
    EXPECT_DOUBLE_EQ(m(4.0, 4.0), 2.0);
    for (const Kernel& k : {s, m}) {
        const double h = 1e-6;
        const Kernel kp{k.family, k.variance, k.lengthscale * std::exp(h)};
        const Kernel km{k.family, k.variance, k.lengthscale * std::exp(-h)};
        EXPECT_NEAR(k.dlog_lengthscale(0.3, 2.2), (kp(0.3, 2.2) - km(0.3, 2.2)) / (2 * h), 1e-7);
    }
}

TEST(Kernel, FamilyNames) {
    EXPECT_EQ(kernel_family_from_string("squared-exponential"), KernelFamily::squared_exponential);
    EXPECT_EQ(kernel_family_from_string(to_string(KernelFamily::matern52)), KernelFamily::matern52);
    EXPECT_THROW(kernel_family_from_string("rbf2"), InvalidParameter);
    EXPECT_EQ(mean_spec_from_string(to_string(MeanSpec::linear)), MeanSpec::linear);
}

TEST(Kernel, GramMatricesArePsd) {
    std::mt19937_64 rng(1);
    for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
        for (Eigen::Index n : {2, 5, 17, 60, 200}) {
            const Vector x = sorted_uniform(rng, n, 0.0, 100.0);
            const Kernel k{fam, 3.0, 7.0};
            Matrix g = k.gram(x);
            EXPECT_TRUE(g.isApprox(g.transpose(), 0.0));
            g.diagonal().array() += 1e-10 * k.variance;
            const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(g).eigenvalues().minCoeff();
            EXPECT_GE(lo, -1e-12 * k.variance * static_cast<double>(n)) << to_string(fam) << " n=" << n;
        }
    }
}

TEST(NegativeLogLikelihood, ValueMatchesDirectFormula) {
    std::mt19937_64 rng(2);
    const Vector x = sorted_uniform(rng, 12, -2.0, 2.0);
    const Vector y = (x.array().sin() + 0.3 * x.array()).matrix();
    for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
        for (auto mean : {MeanSpec::zero, MeanSpec::constant, MeanSpec::linear}) {
            const Vector theta = Eigen::Vector3d(0.3, -0.2, std::log(0.05));
            const double v = negative_log_likelihood(fam, mean, theta, x, y).value;
            EXPECT_NEAR(v, nll_oracle(fam, mean, theta, x, y, 1e-10), 1e-8 * (1 + std::abs(v)));
        }
    }
}

TEST(NegativeLogLikelihood, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (auto fam : {KernelFamily::squared_exponential, KernelFamily::matern52}) {
        for (auto mean : {MeanSpec::zero, MeanSpec::constant, MeanSpec::linear}) {
            for (int trial = 0; trial < 5; ++trial) {
                const Vector x = sorted_uniform(rng, 15, -2.0, 2.0);
                Vector y(x.size());
                for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = std::cos(2 * x(i)) + 0.1 * u(rng);
                const Vector theta = Eigen::Vector3d(u(rng), 0.5 * u(rng), -3.0 + u(rng));
                const auto g = negative_log_likelihood(fam, mean, theta, x, y).gradient;
                const double h = 1e-5;
                for (Eigen::Index j = 0; j < 3; ++j) {
                    Vector tp = theta, tm = theta;
                    tp(j) += h;
                    tm(j) -= h;
                    const double fd = (negative_log_likelihood(fam, mean, tp, x, y).value -
                                       negative_log_likelihood(fam, mean, tm, x, y).value) / (2 * h);
                    EXPECT_NEAR(g(j), fd, 1e-5 * std::max(1.0, std::abs(fd)))
                        << to_string(fam) << " " << to_string(mean) << " j=" << j;
                }
            }
        }
    }
}

TEST(GpModel, NoiseFreeInterpolation) {
    const Vector x = grid(0.0, 1.0, 8);
    const Vector y = (x.array() * 0.7).sin().matrix();
    GpConfig cfg;
    cfg.mean = MeanSpec::zero;
    const GpModel gp(x, y, Vector(), cfg, Eigen::Vector3d(0.0, std::log(0.5), std::log(1e-12)));
    const auto p = gp.predict(x);
    EXPECT_LT((p.mean - y).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(p.variance.maxCoeff(), 1e-6 * gp.kernel().variance);
}

TEST(GpModel, PriorVarianceRecoveredFarFromData) {
    const Vector x = grid(0.0, 1.0, 10);
    const Vector y = (x.array() * 0.5).cos().matrix();
    GpConfig cfg;
    cfg.mean = MeanSpec::zero;
    const GpModel gp(x, y, Vector(), cfg, Eigen::Vector3d(std::log(2.0), std::log(0.4), std::log(1e-4)));
    const Kernel k = gp.kernel();
    Vector far(2);
    far << x.maxCoeff() + 10 * k.lengthscale, x.minCoeff() - 12 * k.lengthscale;
    const auto p = gp.predict(far);
    for (Eigen::Index i = 0; i < 2; ++i) EXPECT_NEAR(p.variance(i), k.variance, 0.01 * k.variance);
}

TEST(GpModel, VarianceNonNegativeAndSmallestNearData) {
    std::mt19937_64 rng(4);
    const Vector x = sorted_uniform(rng, 20, 0.0, 10.0);
    const Vector y = (x.array() * 0.3).sin().matrix();
    for (auto mean : {MeanSpec::zero, MeanSpec::constant, MeanSpec::linear}) {
        GpConfig cfg;
        cfg.mean = mean;
        const GpModel gp(x, y, Vector(), cfg, Eigen::Vector3d(0.0, std::log(0.3), std::log(1e-3)));
        const auto at = gp.predict(x);
        const auto q = gp.predict(grid(-20.0, 0.05, 1000));
        EXPECT_GE(q.variance.minCoeff(), 0.0);
        Vector distant(1);
        distant << 40.0;
        EXPECT_LE(at.variance.maxCoeff(), gp.predict(distant).variance(0));
        EXPECT_LE(at.variance.maxCoeff(), gp.noise_variance() + 1e-9);
        EXPECT_TRUE((at.upper95() - at.lower95()).isApprox(2 * 1.96 * at.stddev()));
    }
}

TEST(GpModel, PosteriorMeanLinearInTargets) {
    std::mt19937_64 rng(5);
    const Vector x = sorted_uniform(rng, 15, 0.0, 100.0);
    const Vector v1 = (x.array() * 0.05).sin().matrix();
    const Vector v2 = (x.array() * 0.01).exp().matrix();
    const Vector q = grid(-10.0, 7.5, 20);
    for (bool standardize : {false, true}) {
        for (auto mean : {MeanSpec::zero, MeanSpec::constant, MeanSpec::linear}) {
            GpConfig cfg;
            cfg.standardize = standardize;
            cfg.mean = mean;
            const GpModel base(x, v1, Vector(), cfg, Eigen::Vector3d(0.2, -0.5, std::log(1e-2)));
            const Vector sum = base.with_targets(v1 + v2).predict(q).mean;
            const Vector parts = base.predict(q).mean + base.with_targets(v2).predict(q).mean;
            EXPECT_LT((sum - parts).cwiseAbs().maxCoeff(), 1e-8 * (1 + parts.cwiseAbs().maxCoeff()))
                << "standardize=" << standardize << " mean=" << to_string(mean);
        }
    }
}

TEST(GpModel, RejectsBadInputs) {
    GpConfig cfg;
    EXPECT_THROW(GpModel(Eigen::Vector3d(0, 2, 1), Eigen::Vector3d(1, 2, 3), Vector(), cfg, Vector::Zero(3)),
                 InvalidParameter);
    EXPECT_THROW(train_gp(Eigen::Vector2d(0, 1), Eigen::Vector2d(1, 2), cfg), InvalidParameter);
}

TEST(TrainGp, ConstantTargets) {
    const Vector x = grid(0.0, 50.0, 10);
    const Vector y = Vector::Constant(10, 750.0);
    GpConfig cfg;
    cfg.mean = MeanSpec::zero;
    const auto gp = train_gp(x, y, cfg);
    const auto p = gp.predict(grid(0.0, 5.0, 90));
    EXPECT_LT((p.mean.array() - 750.0).abs().maxCoeff(), 1e-6 * 750.0);
}

TEST(TrainGp, LeaveOneOutOnDecaySeries) {
    const Vector t = grid(0.0, 50.0, 41);
    const Vector v = decay(t);
    GpConfig cfg;
    double sq = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        Vector tr(t.size() - 1), vr(t.size() - 1);
        for (Eigen::Index j = 0, k = 0; j < t.size(); ++j) {
            if (j == i) continue;
            tr(k) = t(j);
            vr(k++) = v(j);
        }
        const auto gp = train_gp(tr, vr, cfg);
        Vector q(1);
        q << t(i);
        const double e = gp.predict(q).mean(0) - v(i);
        sq += e * e;
    }
    EXPECT_LT(std::sqrt(sq / static_cast<double>(t.size())), 0.005 * 1000.0);
}

TEST(TrainGp, ScaleEquivarianceWithoutStandardization) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 0.05);
    const Vector x = grid(0.0, 0.5, 25);
    Vector y(x.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = std::sin(x(i)) + n(rng);
    GpConfig cfg;
    cfg.standardize = false;
    cfg.restarts = 8;
    const auto a = train_gp(x, y, cfg);
    const auto b = train_gp(x, Vector(2 * y), cfg);
    EXPECT_NEAR(b.theta()(0) - a.theta()(0), std::log(4.0), 0.05);
    EXPECT_NEAR(b.theta()(1), a.theta()(1), 0.05);
    EXPECT_NEAR(b.theta()(2) - a.theta()(2), std::log(4.0), 0.05);
}

TEST(TrainGp, ReproducibleForIdenticalSeeds) {
    const Vector t = grid(0.0, 50.0, 20);
    Vector v = decay(t);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 3.0 * std::sin(1.7 * static_cast<double>(i));
    GpConfig cfg;
    cfg.seed = 77;
    EXPECT_EQ(train_gp(t, v, cfg).theta(), train_gp(t, v, cfg).theta());
}

TEST(TrainGp, NonConvergenceCarriesBestTheta) {
    const Vector t = grid(0.0, 50.0, 20);
    Vector v = decay(t);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += 3.0 * std::sin(1.7 * static_cast<double>(i));
    GpConfig cfg;
    cfg.max_iter = 1;
    cfg.tolerance = 1e-300;
    try {
        train_gp(t, v, cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_EQ(e.best_log_theta().size(), 3);
        EXPECT_TRUE(std::isfinite(e.best_nll()));
    }
}

TEST(TrackParameters, OneModelPerSeriesAndConstantSeries) {
    const Vector t = grid(0.0, 50.0, 40);
    std::vector<ParameterSeries> series;
    series.push_back({"k1", t, decay(t), Vector::Constant(40, 3.0)});
    Vector flat = Vector::Constant(40, 1000.0);
    for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) += 0.01 * std::sin(3.1 * static_cast<double>(i));
    series.push_back({"k4", t, flat, Vector()});
    const auto models = track_parameters(series, GpConfig{});
    ASSERT_EQ(models.size(), 2u);
    const auto p = models[1].predict(grid(0.0, 10.0, 300));
    EXPECT_LT((p.mean.array() / 1000.0 - 1.0).abs().maxCoeff(), 1e-3);
}

TEST(TrackParameters, GpCorrectsNoisyBiasedSeries) {
    const Vector t = grid(0.0, 50.0, 30);
    const Vector truth = decay(t, 1000.0);
    double gp_err = 0.0, raw_err = 0.0;
    GpConfig cfg;
    cfg.mean = MeanSpec::linear;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n(0.0, 0.02);
        Vector est(t.size());
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const double bias = 0.08 * std::exp(-static_cast<double>(i) / 3.0);
            est(i) = truth(i) * (1.0 - bias + n(rng));
        }
        const auto models = track_parameters({{"k6", t, est, Vector()}}, cfg);
        Vector q(1);
        q << t(t.size() - 1);
        gp_err += std::abs(models[0].predict(q).mean(0) - truth(t.size() - 1));
        raw_err += std::abs(est(t.size() - 1) - truth(t.size() - 1));
    }
    EXPECT_LT(gp_err, raw_err);
}
