#include "horn/integrator.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace horn;

namespace {

Model make_model(double beta, int d = 1, double s0 = 1.0, double c0 = 1.0, FieldKind kind = FieldKind::rotated,
                 double a_inf = 1.0) {
    ProfileParams p;
    p.d = d;
    p.beta = beta;
    p.a_inf = a_inf;
    return Model{DomainProfile(p), CovarianceSpec(CovarianceParams{}, d), ReflectionSpec({s0, c0, kind})};
}

Point pt(double x, double y) {
    Vec v(1);
    v << y;
    return {x, v};
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
}

double stderr_of(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1) / v.size());
}

}  // namespace

TEST(AdaptiveDt, Examples) {
    StepConfig cfg;
    cfg.eta = 0.01;
    cfg.dt_max = 1e-3;
    const Model strip = make_model(0.0);
    EXPECT_DOUBLE_EQ(adaptive_dt(cfg, strip.profile, strip.cov, Point::on_axis(5.0, 1)), 1e-3);
    const Model thin = make_model(-2.0);
    EXPECT_NEAR(adaptive_dt(cfg, thin.profile, thin.cov, Point::on_axis(10.0, 1)), 1e-6, 1e-20);
    EXPECT_NEAR(adaptive_dt(cfg, thin.profile, thin.cov, Point::on_axis(100.0, 1)), 1e-10, 1e-24);
}

TEST(ProposeStep, ZeroNoiseAndUnitKick) {
    const Model m = make_model(0.0);
    const Point z = pt(3.0, 0.2);
    Vec xi = Vec::Zero(2);
    const Point same = propose_step(m.cov, z, 0.01, xi);
    EXPECT_EQ(same.x, z.x);
    EXPECT_EQ(same.y(0), z.y(0));
    xi << 1.0, 0.0;
    const Point moved = propose_step(m.cov, z, 0.01, xi);
    EXPECT_NEAR(moved.x, 3.1, 1e-15);
    EXPECT_EQ(moved.y(0), 0.2);
}

TEST(ProposeStep, CovarianceMatchesSigmaMonteCarlo) {
    ProfileParams p;
    p.d = 2;
    CovarianceParams cp;
    cp.kind = CovarianceKind::diagonal_profile;
    cp.axial = {2.0, 1.0, 1.0};
    cp.transverse = {0.5, -0.2, 1.0};
    const CovarianceSpec cov(cp, 2);
    PathState s = start_path(Point::on_axis(1.0, 2), 17, 0);
    const double dt = 0.04;
    const int n = 1'000'000;
    Eigen::Matrix3d acc = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) {
        const Point q = propose_step(cov, s, dt);
        Eigen::Vector3d v(q.x - 1.0, q.y(0), q.y(1));
        v /= std::sqrt(dt);
        acc += v * v.transpose();
    }
    acc /= n;
    const Mat sig = cov.matrix(1.0);  // diag(2.5, 0.4, 0.4)
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            EXPECT_NEAR(acc(i, j), sig(i, j), 0.01 * sig.diagonal().maxCoeff()) << i << "," << j;
        }
        EXPECT_NEAR(acc(i, i) / sig(i, i), 1.0, 0.01);
    }
}

TEST(Reflection, InteriorAndBoundaryProposalsUnchanged) {
    const Model m = make_model(0.0, 1, 1.0, 1.0, FieldKind::additive);
    StepConfig cfg;
    for (double y : {0.3, 1.0}) {
        const auto out = resolve_reflection(m.profile, m.refl, pt(10.0, 0.0), pt(10.0, y), cfg);
        EXPECT_TRUE(out.ok);
        EXPECT_EQ(out.dL, 0.0);
        EXPECT_EQ(out.z.y(0), y);
    }
}

TEST(Reflection, FlatWallAdditiveFieldExample) {
    const Model m = make_model(0.0, 1, 1.0, 1.0, FieldKind::additive);
    StepConfig cfg;
    const auto out = resolve_reflection(m.profile, m.refl, pt(10.0, 0.9), pt(10.0, 1.2), cfg);
    ASSERT_TRUE(out.ok);
    // Linear crossing: 1.2 - 2 lambda = 1.
    EXPECT_NEAR(out.dL, 0.1, 1e-10);
    EXPECT_NEAR(out.z.x, 10.1, 1e-10);
    EXPECT_NEAR(out.z.y(0), 1.0, 1e-10);
    EXPECT_TRUE(contains(m.profile, out.z));
}

TEST(Reflection, FlatWallRotatedField) {
    const Model m = make_model(0.0, 1, 0.5, 2.0);
    StepConfig cfg;
    // phi = (s0, -c0) on the upper wall: 1.2 - 2 lambda = 1.
    const auto out = resolve_reflection(m.profile, m.refl, pt(10.0, 0.9), pt(10.0, 1.2), cfg);
    ASSERT_TRUE(out.ok);
    EXPECT_NEAR(out.dL, 0.1, 1e-10);
    EXPECT_NEAR(out.z.x, 10.05, 1e-10);
    EXPECT_NEAR(out.z.y(0), 1.0, 1e-10);
}

TEST(Reflection, CurvedWallMatchesBisectionOracle) {
    const Model m = make_model(0.5);
    StepConfig cfg;
    for (double x : {4.0, 9.0, 30.0}) {
        const double b = m.profile.b(x);
        const Point star = pt(x, b + 0.05);
        const auto out = resolve_reflection(m.profile, m.refl, pt(x, 0.0), star, cfg);
        ASSERT_TRUE(out.ok);
        // Oracle: phi at the nearest foot, then bisection on |y| - b(x) along the ray.
        const BoundaryFoot foot = nearest_boundary(m.profile, star);
        const Vec f = phi(m.refl, m.profile, foot.x, foot.u);
        auto excess = [&](double lam) { return std::abs(star.y(0) + lam * f(1)) - m.profile.b(star.x + lam * f(0)); };
        double lo = 0.0, hi = 1.0;
        ASSERT_GT(excess(lo), 0.0);
        ASSERT_LT(excess(hi), 0.0);
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (excess(mid) > 0.0 ? lo : hi) = mid;
        }
        EXPECT_NEAR(out.dL, hi, 1e-9) << "x=" << x;
        EXPECT_TRUE(contains(m.profile, out.z));
    }
}

TEST(Reflection, NegativeAxialProposalPushedBack) {
    const Model m = make_model(0.5);
    StepConfig cfg;
    const auto out = resolve_reflection(m.profile, m.refl, pt(0.01, 0.0), pt(-0.02, 0.01), cfg);
    ASSERT_TRUE(out.ok);
    EXPECT_GE(out.z.x, 0.0);
    EXPECT_TRUE(contains(m.profile, out.z));
    EXPECT_GT(out.dL, 0.0);
}

TEST(Reflection, IterationOverflowIsAnError) {
    const Model m = make_model(0.5);
    StepConfig cfg;
    cfg.max_reflect_iters = 0;
    const auto out = resolve_reflection(m.profile, m.refl, pt(4.0, 0.0), pt(4.0, 5.0), cfg);
    EXPECT_FALSE(out.ok);
    EXPECT_NE(out.error.find("did not resolve"), std::string::npos);
}

TEST(AdvancePath, StartAboveTargetStopsImmediately) {
    const Model m = make_model(0.0);
    StepConfig cfg;
    cfg.r_max = 2.0;
    PassageTracker tr({1.0, 2.0, 4.0});
    PathState s = start_path(Point::on_axis(3.0, 1), 1, 0);
    advance_path(s, m, cfg, tr);
    EXPECT_EQ(s.status, PathStatus::reached_level);
    EXPECT_EQ(s.steps, 0u);
    ASSERT_TRUE(tr.hit_times()[0] && tr.hit_times()[1]);
    EXPECT_EQ(*tr.hit_times()[0], 0.0);
    EXPECT_EQ(*tr.hit_times()[1], 0.0);
    EXPECT_FALSE(tr.hit_times()[2]);
}

TEST(AdvancePath, ZeroNoiseNeverMoves) {
    const Model m = make_model(0.5, 2);
    StepConfig cfg;
    cfg.zero_noise = true;
    cfg.t_max = 1.0;
    PassageTracker tr;
    Point z0 = Point::on_axis(2.0, 2);
    z0.y(0) = 0.3;
    PathState s = start_path(z0, 1, 0);
    advance_path(s, m, cfg, tr);
    EXPECT_EQ(s.status, PathStatus::time_budget);
    EXPECT_EQ(s.L, 0.0);
    EXPECT_EQ(s.z.x, 2.0);
    EXPECT_EQ(s.z.y(0), 0.3);
    EXPECT_NEAR(s.t, 1.0, 1e-12);
}

TEST(AdvancePath, StaysInsideDomain) {
    for (double beta : {0.5, 0.0, -1.0}) {
        for (int d : {1, 2}) {
          for (bool bridge : {false, true}) {
            const Model m = make_model(beta, d, 1.0, 0.7);
            StepConfig cfg;
            cfg.bridge_local_time = bridge;
            cfg.t_max = 5.0;
            cfg.eta = 0.05;
            cfg.dt_max = 0.01;
            cfg.record_stride = 1;
            for (std::uint64_t p = 0; p < (bridge ? 3u : 8u); ++p) {
                PassageTracker tr;
                std::vector<TrajectoryRecord> rec;
                PathState s = start_path(Point::on_axis(1.0, d), 5, p);
                advance_path(s, m, cfg, tr, &rec);
                ASSERT_EQ(s.status, PathStatus::time_budget) << s.error;
                for (const auto& r : rec) {
                    ASSERT_GE(r.x, 0.0);
                    const double b = m.profile.b(r.x);
                    ASSERT_LE(r.y_norm, b + tol_boundary(b)) << "beta=" << beta << " t=" << r.t;
                }
                EXPECT_GT(s.reflections, 0u);
            }
          }
        }
    }
}

TEST(AdvancePath, LocalTimeOnlyOnExitingProposals) {
    const Model m = make_model(0.0, 1, 1.0, 1.0);
    StepConfig cfg;
    cfg.dt_max = 0.02;
    cfg.eta = 1.0;
    PathState s = start_path(pt(5.0, 0.8), 3, 0);
    int exits = 0, stays = 0;
    for (int k = 0; k < 3000; ++k) {
        PathState before = s;
        const double dt = adaptive_dt(cfg, m.profile, m.cov, s.z);
        const Point prop = propose_step(m.cov, before, dt);
        cfg.t_max = s.t + dt;
        PassageTracker tr;
        const double L0 = s.L;
        advance_path(s, m, cfg, tr);
        ASSERT_EQ(s.steps, static_cast<std::uint64_t>(k + 1));
        s.status = PathStatus::running;
        const double excess = std::abs(prop.y(0)) - m.profile.b(prop.x);
        if (s.L > L0) {
            ++exits;
            EXPECT_GT(excess, -1e-12);
        } else {
            ++stays;
            EXPECT_LE(excess, 1e-12);
            EXPECT_NEAR(s.z.x, prop.x, 1e-12);
            EXPECT_NEAR(s.z.y(0), prop.y(0), 1e-12);
        }
    }
    EXPECT_GT(exits, 50);
    EXPECT_GT(stays, 50);
}

TEST(AdvancePath, DriftlessInterior) {
    const Model m = make_model(0.0, 1, 1.0, 1.0, FieldKind::rotated, 100.0);
    StepConfig cfg;
    cfg.t_max = 1.0;
    cfg.dt_max = 0.01;
    EnsembleSpec spec;
    spec.z0 = Point::on_axis(500.0, 1);
    spec.n_paths = 10000;
    spec.seed = 8;
    const auto runs = run_ensemble(m, cfg, spec);
    std::vector<double> dx;
    for (const auto& r : runs) {
        ASSERT_EQ(r.state.reflections, 0u);
        dx.push_back(r.state.z.x - 500.0);
    }
    EXPECT_LT(std::abs(mean(dx)), 3.0 * stderr_of(dx));
    EXPECT_NEAR(stderr_of(dx) * std::sqrt(10000.0), 1.0, 0.05);
}

TEST(Ensemble, ThreadCountDoesNotChangeResults) {
    const Model m = make_model(0.5, 2);
    StepConfig cfg;
    cfg.t_max = 3.0;
    cfg.record_stride = 7;
    EnsembleSpec spec;
    spec.z0 = Point::on_axis(1.0, 2);
    spec.n_paths = 24;
    spec.seed = 99;
    spec.levels = {2.0, 4.0};
    const auto a = run_ensemble(m, cfg, spec);
    spec.threads = 4;
    const auto b = run_ensemble(m, cfg, spec);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].index, b[i].index);
        EXPECT_EQ(a[i].state.z.x, b[i].state.z.x);
        EXPECT_EQ(a[i].state.z.y, b[i].state.z.y);
        EXPECT_EQ(a[i].state.L, b[i].state.L);
        EXPECT_EQ(a[i].state.steps, b[i].state.steps);
        EXPECT_EQ(a[i].tracker.hit_times(), b[i].tracker.hit_times());
        ASSERT_EQ(a[i].records.size(), b[i].records.size());
        for (std::size_t k = 0; k < a[i].records.size(); ++k) {
            EXPECT_EQ(a[i].records[k].x, b[i].records[k].x);
            EXPECT_EQ(a[i].records[k].L, b[i].records[k].L);
        }
    }
}

TEST(Ensemble, IndexOffsetSelectsStreams) {
    const Model m = make_model(0.0);
    StepConfig cfg;
    cfg.t_max = 0.5;
    EnsembleSpec spec;
    spec.z0 = Point::on_axis(1.0, 1);
    spec.n_paths = 4;
    spec.seed = 3;
    const auto a = run_ensemble(m, cfg, spec);
    spec.n_paths = 2;
    spec.index_offset = 2;
    const auto b = run_ensemble(m, cfg, spec);
    EXPECT_EQ(b[0].index, 2u);
    EXPECT_EQ(a[2].state.z.x, b[0].state.z.x);
    EXPECT_EQ(a[3].state.L, b[1].state.L);
}

TEST(Ensemble, HalvingStepSizeKeepsStripSpeed) {
    const Model m = make_model(0.0);
    auto speed = [&](double eta) {
        StepConfig cfg;
        cfg.dt_max = 1.0;
        cfg.eta = eta;
        cfg.t_max = 200.0;
        EnsembleSpec spec;
        spec.z0 = Point::on_axis(1.0, 1);
        spec.n_paths = 50;
        spec.seed = 21;
        std::vector<double> v;
        for (const auto& r : run_ensemble(m, cfg, spec)) v.push_back(r.state.z.x / r.state.t);
        return std::make_pair(mean(v), stderr_of(v));
    };
    const auto [m1, s1] = speed(0.002);
    const auto [m2, s2] = speed(0.001);
    const double ci_width = 2.0 * 1.96 * std::hypot(s1, s2);
    EXPECT_LT(std::abs(m1 - m2), ci_width) << m1 << " vs " << m2;
}

TEST(AdvancePath, BridgeRecoversLocalTimeAtCoarseSteps) {
    // Strip b = 1 with dt = 0.01: plain push-back loses about 5% of the local time
    // (the wall is effectively shifted out by 0.58 sqrt(dt) on each side).
    const Model m = make_model(0.0);
    auto rate = [&](bool bridge) {
        StepConfig cfg;
        cfg.dt_max = 0.01;
        cfg.eta = 1.0;
        cfg.t_max = 200.0;
        cfg.bridge_local_time = bridge;
        EnsembleSpec spec;
        spec.z0 = Point::on_axis(5.0, 1);
        spec.n_paths = 40;
        spec.seed = 8;
        std::vector<double> v;
        for (const auto& r : run_ensemble(m, cfg, spec)) v.push_back(r.state.L / r.state.t);
        return std::make_pair(mean(v), stderr_of(v));
    };
    const auto [plain, se_plain] = rate(false);
    const auto [bridged, se_bridged] = rate(true);
    EXPECT_LT(std::abs(bridged - 0.5), 4.0 * se_bridged) << bridged;
    EXPECT_LT(plain, 0.5 - 4.0 * se_plain) << plain;
    EXPECT_NEAR(plain, 1.0 / (2.0 + 2.0 * 0.5826 * 0.1), 4.0 * se_plain);
}

TEST(Explosion, StripProbeDoesNotConverge) {
    const Model m = make_model(0.0);
    StepConfig cfg;
    cfg.r_max = 32.0;
    cfg.t_max = 1e4;
    cfg.dt_max = 0.01;
    cfg.eta = 0.01;
    const auto probe = explosion_probe(m, cfg, Point::on_axis(2.0, 1), 1.0, 4, 0);
    EXPECT_FALSE(probe.converged);
    ASSERT_TRUE(probe.tracker.hit_times()[0]);
    EXPECT_EQ(*probe.tracker.hit_times()[0], 0.0);  // r0 below x0
    ASSERT_GE(probe.increments.size(), 4u);
    // Passage increments grow with the level (roughly like B(r_k) in the strip).
    EXPECT_GT(probe.increments.back(), probe.increments[1]);
}
