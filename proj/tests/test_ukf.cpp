#include "dtwin/sde.hpp"
#include "dtwin/state_space.hpp"
#include "dtwin/twin.hpp"
#include "dtwin/ukf.hpp"

#include <gtest/gtest.h>

#include "oracles/kalman.hpp"

#include <random>

using namespace dtwin;

using namespace oracle;

TEST(SigmaPoints, ScalarHandValues) {
    const GaussianBelief b{Vector::Zero(1), Matrix::Identity(1, 1)};
    const UkfParams p;
    EXPECT_NEAR(p.lambda(1), 1e-6 - 1.0, 1e-18);
    const auto sp = sigma_points(b, p);
    ASSERT_EQ(sp.count(), 3);
    EXPECT_NEAR(sp.points(0, 0), 0.0, 1e-18);
    EXPECT_NEAR(sp.points(0, 1), 1e-3, 1e-15);
    EXPECT_NEAR(sp.points(0, 2), -1e-3, 1e-15);
    EXPECT_NEAR(sp.w_mean(0), 1.0 - 1e6, 1e-6);
    EXPECT_NEAR(sp.w_mean(1), 5e5, 1e-6);
    EXPECT_NEAR(sp.w_mean(2), 5e5, 1e-6);
    EXPECT_NEAR(sp.w_mean.sum(), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(sp.cov_offset, 2.999999);
    EXPECT_NEAR(sp.w_cov(0) - sp.w_mean(0), 2.999999, 1e-9);
    EXPECT_EQ(sp.w_cov(1), sp.w_mean(1));
}

TEST(SigmaPoints, WeightIdentityAndSymmetry) {
    std::mt19937_64 rng(1);
    for (Eigen::Index l = 1; l <= 21; ++l) {
        const GaussianBelief b{random_matrix(rng, l, 1), random_spd(rng, l)};
        const auto sp = sigma_points(b, UkfParams{});
        EXPECT_NEAR(sp.w_mean.sum(), 1.0, 1e-12) << "L=" << l;
        const Vector recovered = sp.points * sp.w_mean;
        EXPECT_LT((recovered - b.mean).norm(), 1e-8 * (1 + b.mean.norm())) << "L=" << l;
        for (Eigen::Index i = 0; i < l; ++i) {
            EXPECT_TRUE(((sp.points.col(1 + i) + sp.points.col(1 + l + i)) / 2).isApprox(b.mean, 1e-12));
        }
    }
}

TEST(SigmaPoints, RejectsInvalidParameters) {
    const GaussianBelief b{Vector::Zero(2), Matrix::Identity(2, 2)};
    UkfParams p;
    p.alpha = 0.0;
    EXPECT_THROW(sigma_points(b, p), InvalidParameter);
}

TEST(RobustCholesky, JitterAndFailure) {
    Matrix singular(2, 2);
    singular << 1.0, 1.0, 1.0, 1.0;
    RepairStats st;
    const Matrix l = robust_cholesky(singular, &st);
    EXPECT_EQ(st.jitter_events, 1u);
    EXPECT_LT((l * l.transpose() - singular).norm(), 1e-5);
    Matrix indefinite(2, 2);
    indefinite << 1.0, 0.0, 0.0, -1.0;
    EXPECT_THROW(robust_cholesky(indefinite), NumericFailure);
}

TEST(RepairCovariance, ClipsNegativeEigenvalues) {
    Matrix p(2, 2);
    p << 1.0, 0.0, 0.0, -1e-9;
    RepairStats st;
    repair_covariance(p, st);
    EXPECT_EQ(st.psd_repairs, 1u);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(p).eigenvalues().minCoeff(), -1e-15);
    EXPECT_LE(st.max_repair_ratio, 1e-6);
    Matrix good = Matrix::Identity(3, 3);
    repair_covariance(good, st);
    EXPECT_EQ(st.psd_repairs, 1u);
}

TEST(Predict, IdentityDynamicsKeepsBelief) {
    std::mt19937_64 rng(2);
    const GaussianBelief b{random_matrix(rng, 4, 1), random_spd(rng, 4)};
    const auto out = predict(b, [](const Vector& y) { return y; }, Matrix(Matrix::Zero(4, 4)), UkfParams{});
    EXPECT_TRUE(out.mean.isApprox(b.mean, 1e-12));
    EXPECT_LT((out.cov - b.cov).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Predict, NonFiniteImageNamesSigmaIndex) {
    const GaussianBelief b{Vector::Zero(2), Matrix::Identity(2, 2)};
    try {
        predict(b, [](const Vector& y) { return y(0) > 0 ? Vector(y / 0.0) : y; },
                Matrix(Matrix::Zero(2, 2)), UkfParams{});
        FAIL() << "expected NumericFailure";
    } catch (const NumericFailure& e) {
        EXPECT_NE(std::string(e.what()).find("sigma point"), std::string::npos);
    }
}

TEST(UnscentedTransform, ExactForRandomAffineMaps) {
    std::mt19937_64 rng(3);
    for (Eigen::Index l = 1; l <= 6; ++l) {
        for (int trial = 0; trial < 10; ++trial) {
            const Eigen::Index out_dim = 1 + trial % 4;
            const Matrix a = random_matrix(rng, out_dim, l);
            const Vector c = random_matrix(rng, out_dim, 1);
            const GaussianBelief b{random_matrix(rng, l, 1), random_spd(rng, l)};
            const auto sp = sigma_points(b, UkfParams{});
            const auto mom = unscented_transform(sp, [&](const Vector& y) { return Vector(a * y + c); });
            const Vector m = a * b.mean + c;
            const Matrix s = a * b.cov * a.transpose();
            EXPECT_LT((mom.mean - m).norm(), 1e-8 * (1 + m.norm()));
            EXPECT_LT((mom.cov - s).norm(), 1e-8 * (1 + s.norm()));
            EXPECT_LT((mom.cross - b.cov * a.transpose()).norm(), 1e-8 * (1 + s.norm()));
        }
    }
}

TEST(Predict, LinearDynamicsMatchClosedForm) {
    std::mt19937_64 rng(4);
    for (Eigen::Index l = 2; l <= 6; ++l) {
        const Matrix a = random_matrix(rng, l, l);
        const Matrix q = random_spd(rng, l, 0.01) * 0.01;
        const GaussianBelief b{random_matrix(rng, l, 1), random_spd(rng, l)};
        const auto out = predict(b, [&](const Vector& y) { return Vector(a * y); }, q, UkfParams{});
        EXPECT_LT((out.mean - a * b.mean).norm(), 1e-8);
        EXPECT_LT((out.cov - (a * b.cov * a.transpose() + q)).norm(), 1e-8 * (1 + out.cov.norm()));
    }
}

TEST(Update, ZeroInnovationAndKalmanEquivalence) {
    std::mt19937_64 rng(5);
    const Eigen::Index l = 4;
    const Matrix h = random_matrix(rng, 2, l);
    const Matrix r = random_spd(rng, 2, 0.1);
    const GaussianBelief b{random_matrix(rng, l, 1), random_spd(rng, l)};
    const auto hf = [&](const Vector& y) { return Vector(h * y); };
    const auto same = update(b, hf, Vector(h * b.mean), r, UkfParams{});
    EXPECT_LT((same.mean - b.mean).norm(), 1e-10 * (1 + b.mean.norm()));

    const Vector z = random_matrix(rng, 2, 1);
    const auto u = update(b, hf, z, r, UkfParams{});
    const auto kf = kf_update({b.mean, b.cov}, h, z, r);
    EXPECT_LT((u.mean - kf.m).norm(), 1e-8);
    EXPECT_LT((u.cov - kf.p).norm(), 1e-8);
    EXPECT_LE(u.cov.trace(), b.cov.trace() + 1e-12);

    const auto tight = update(b, hf, z, Matrix(Matrix::Identity(2, 2) * 1e-12), UkfParams{});
    EXPECT_LE(tight.cov.trace(), b.cov.trace());
}

TEST(Ukf, MatchesKalmanFilterOnRandomLinearSystems) {
    std::mt19937_64 rng(6);
    for (Eigen::Index l = 2; l <= 6; ++l) {
        Matrix a = random_matrix(rng, l, l);
        a /= 1.1 * Eigen::EigenSolver<Matrix>(a).eigenvalues().cwiseAbs().maxCoeff();
        const Eigen::Index mdim = 1 + l / 2;
        const Matrix h = random_matrix(rng, mdim, l);
        const Matrix q = random_spd(rng, l, 0.01) * 0.05;
        const Matrix r = random_spd(rng, mdim, 0.1) * 0.1;
        GaussianBelief ukf{random_matrix(rng, l, 1), random_spd(rng, l)};
        KfState kf{ukf.mean, ukf.cov};
        Vector x = random_matrix(rng, l, 1);
        double mean_dev = 0.0, cov_dev = 0.0;
        for (int k = 0; k < 50; ++k) {
            x = a * x;
            const Vector z = h * x + random_matrix(rng, mdim, 1, 0.3);
            ukf = predict(ukf, [&](const Vector& y) { return Vector(a * y); }, q, UkfParams{});
            ukf = update(ukf, [&](const Vector& y) { return Vector(h * y); }, z, r, UkfParams{});
            kf = kf_update(kf_predict(kf, a, q), h, z, r);
            mean_dev = std::max(mean_dev, (ukf.mean - kf.m).cwiseAbs().maxCoeff());
            cov_dev = std::max(cov_dev, (ukf.cov - kf.p).cwiseAbs().maxCoeff());
        }
        EXPECT_LT(mean_dev, 1e-6) << "L=" << l;
        EXPECT_LT(cov_dev, 1e-6) << "L=" << l;
    }
}

TEST(ProcessNoise, Duffing2DofHandValues) {
    const auto m = to_state_space(build_duffing_2dof(), {0, 1});
    const auto q = build_process_noise(m, 1e-3);
    Vector y = Vector::Zero(6);
    y(4) = 1000;
    y(5) = 500;
    const Matrix qm = q(y);
    EXPECT_NEAR(qm(2, 2), std::pow(0.1 * std::sqrt(1e-3) / 20.0, 2), 1e-20);
    EXPECT_NEAR(qm(2, 2), 2.5e-8, 1e-20);
    EXPECT_NEAR(qm(3, 3), std::pow(0.1 * std::sqrt(1e-3) / 10.0, 2), 1e-20);
    EXPECT_TRUE(qm.bottomRows(2).isZero(0.0));
    EXPECT_TRUE(qm.rightCols(2).isZero(0.0));
    EXPECT_TRUE(qm.topRows(2).isZero(0.0));

    ProcessNoiseScaling sc;
    sc.scale = Vector::Ones(6);
    sc.scale(2) = 3.0;
    sc.floor = Vector::Zero(6);
    sc.floor(4) = 1.0;
    const Matrix scaled = build_process_noise(m, 1e-3, sc)(y);
    EXPECT_NEAR(scaled(2, 2), 9.0 * qm(2, 2), 1e-20);
    EXPECT_EQ(scaled(4, 4), 1.0);
}

TEST(ProcessNoise, DvpStateDependentEntry) {
    const auto m = to_state_space(build_dvp_7dof(), {0, 1, 2, 3, 4, 5, 6});
    const auto q = build_process_noise(m, 1e-3);
    Vector y = Vector::Zero(21);
    y(6) = 0.1;
    const double q1 = q(y)(7, 7);
    y(6) = 0.3;
    const double q3 = q(y)(7, 7);
    EXPECT_NEAR(q3 / q1, 9.0, 1e-12);
    EXPECT_NEAR(q1, 1e-3 * std::pow(0.1 / 10.0 * 0.1, 2), 1e-20);
    EXPECT_TRUE(q(y).bottomRows(7).isZero(0.0));
}

TEST(Predict, AugmentedParametersStayConstant) {
    const auto sys = build_duffing_2dof();
    const auto m = to_state_space(sys, {0, 1});
    GaussianBelief b;
    b.mean = Vector::Zero(6);
    b.mean(4) = 800;
    b.mean(5) = 400;
    b.cov = Matrix::Identity(6, 6) * 1e-6;
    b.cov(4, 4) = b.cov(5, 5) = 100.0;
    const Vector u = Eigen::Vector2d(1.0, 2.0);
    const auto q = build_process_noise(m, 1e-3);
    for (int k = 0; k < 100; ++k) {
        b = predict(b, [&](const Vector& y) { return Vector(y + m.drift(y, u) * 1e-3); }, q, UkfParams{});
        EXPECT_NEAR(b.mean(4), 800.0, 1e-8);
        EXPECT_NEAR(b.mean(5), 400.0, 1e-8);
    }
}

TEST(RunFilter, NoiseFreeLinearOneDofTracksStates) {
    MdofSystem s;
    s.name = "linear_1dof";
    s.mass = Vector::Constant(1, 2.0);
    s.stiffness = {Vector::Constant(1, 200.0), detail::chain_basis(1)};
    s.damping = {Vector::Constant(1, 1.0), detail::chain_basis(1)};
    s.force = {{5.0, 7.0}};
    s.noise_sigma = Vector::Zero(1);
    s.noise_multiplier = {std::nullopt};
    s.validate();
    const auto m = to_state_space(s);
    IntegratorConfig ic;
    const auto truth = simulate_window(m, s, Vector::Zero(2), 5.0, ic);

    MeasurementWindow w;
    w.times = truth.times;
    w.accel = stack_rows(truth.accelerations);
    w.force = stack_rows(truth.forces);
    w.observed_dofs = {0};
    const GaussianBelief init{Vector::Zero(2), Matrix::Identity(2, 2) * 1e-6};
    const NoiseModel noise{build_process_noise(m, ic.dt), Matrix::Identity(1, 1) * 1e-8};
    const auto res = run_filter(m, w, init, noise, UkfParams{}, FilterDynamics::euler_second_order);
    double err = 0.0, ref = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        err += (res.means[k] - truth.states[k]).squaredNorm();
        ref += truth.states[k].squaredNorm();
    }
    EXPECT_LT(std::sqrt(err / ref), 0.01);
    EXPECT_EQ(res.parameter_mean.size(), 0);
}

TEST(RunFilter, RelabelingLeavesParameterEstimatesUnchanged) {
    const auto sys = build_duffing_2dof();
    CampaignConfig cfg;
    cfg.integrator.seed = 21;
    const auto w = synthesize_window(sys, DegradationSchedule::for_system(sys), cfg, 0.0, 21).window;
    FilterSetup fs;
    const auto blocked = filter_window(sys, w, fs);
    auto inter = sys;
    inter.layout = StateLayout::interleaved;
    const auto interleaved = filter_window(inter, w, fs);
    EXPECT_TRUE(blocked.parameter_mean.isApprox(interleaved.parameter_mean, 1e-6))
        << blocked.parameter_mean.transpose() << " vs " << interleaved.parameter_mean.transpose();
}

TEST(FilterDynamicsNames, RoundTrip) {
    for (auto d : {FilterDynamics::euler, FilterDynamics::euler_second_order}) {
        EXPECT_EQ(filter_dynamics_from_string(to_string(d)), d);
    }
    EXPECT_THROW(filter_dynamics_from_string("rk4"), InvalidParameter);
}
