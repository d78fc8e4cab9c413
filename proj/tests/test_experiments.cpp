#include "horn/experiments.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace horn;

namespace {

ExperimentConfig base(double beta) {
    ExperimentConfig c;
    c.profile.beta = beta;
    c.n_paths = 8;
    c.seed = 42;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Aggregate, ExactMeanAndInterval) {
    const auto a = aggregate({1.0, 2.0, 3.0, 4.0});
    EXPECT_EQ(a.mean, 2.5);
    EXPECT_DOUBLE_EQ(a.stderr_, std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0 / 4.0));
    EXPECT_DOUBLE_EQ(a.ci_lo, 2.5 - 1.96 * a.stderr_);
    EXPECT_DOUBLE_EQ(a.ci_hi, 2.5 + 1.96 * a.stderr_);
    EXPECT_EQ(a.n, 4u);
    EXPECT_TRUE(a.covers(2.0));
    EXPECT_FALSE(a.covers(5.0));
    const auto one = aggregate({7.0});
    EXPECT_EQ(one.mean, 7.0);
    EXPECT_TRUE(std::isnan(one.stderr_));
}

TEST(Aggregate, MeanIsPlainArithmeticMean) {
    std::vector<double> v;
    for (int i = 0; i < 1000; ++i) v.push_back(std::sin(i) * 1e3 + i * 1e-3);
    double s = 0.0;
    for (double x : v) s += x;
    EXPECT_EQ(aggregate(v).mean, s / 1000.0);
}

TEST(Targets, ClosedFormRates) {
    EXPECT_DOUBLE_EQ(rate_targets(base(0.0).build_model()).rate, 0.5);
    EXPECT_NEAR(rate_targets(base(0.5).build_model()).rate, std::pow(0.75, 2.0 / 3.0), 1e-15);
    EXPECT_NEAR(std::pow(0.75, 2.0 / 3.0), 0.8255, 1e-4);
    const auto inv = rate_targets(base(-1.0).build_model());
    EXPECT_TRUE(inv.exponential);
    EXPECT_DOUBLE_EQ(inv.rate, 0.5);
    ExperimentConfig c = base(0.0);
    c.reflection.s0 = 2.0;
    EXPECT_DOUBLE_EQ(1.0 / c.build_model().clock_rate(), 1.0);
    EXPECT_DOUBLE_EQ(1.0 / base(0.0).build_model().clock_rate(), 2.0);
}

TEST(Targets, AdditiveFieldUsesItsTransverseLimit) {
    ExperimentConfig c = base(0.0);
    c.reflection.field = FieldKind::additive;
    EXPECT_DOUBLE_EQ(c.build_model().clock_rate(), 0.25);
}

TEST(Regimes, StrongLawsRefuseExplosiveProfiles) {
    EXPECT_THROW(exp_lln(base(-2.0)), std::invalid_argument);
    EXPECT_THROW(exp_passage(base(-2.0)), std::invalid_argument);
    EXPECT_THROW(exp_explosion(base(0.0)), std::invalid_argument);
    EXPECT_THROW(exp_explosion(base(-1.0)), std::invalid_argument);
}

TEST(Regimes, DispatchRejectsUnknownNamesAndSingletons) {
    EXPECT_THROW(run_experiment("nope", base(0.0)), std::invalid_argument);
    ExperimentConfig c = base(0.0);
    c.n_paths = 1;
    EXPECT_THROW(run_experiment("lln", c), std::invalid_argument);
    EXPECT_NO_THROW(run_experiment("ode", c));
}

TEST(Ode, FirstIntegralHolds) {
    for (double beta : {0.5, 0.0, -1.0, -2.0}) {
        ExperimentConfig c = base(beta);
        c.x_target = 50.0;
        c.step.r_max = 1e3;
        const auto res = exp_ode_heuristic(c);
        EXPECT_LT(res.details["max_relative_identity_residual"].get<double>(), 1e-8) << "beta=" << beta;
    }
}

TEST(Ode, StripIsLinear) {
    const Model m = base(0.0).build_model();
    const auto sol = solve_averaged_ode(m, 3.0, 100.0, std::numeric_limits<double>::infinity());
    for (const auto& [t, x] : sol.tx) EXPECT_NEAR(x, 3.0 + 0.5 * t, 1e-9 * (1 + t));
}

TEST(Ode, ExplosiveProfileReachesLevelNearBlowUpTime) {
    ExperimentConfig c = base(-2.0);
    c.step.r_max = 1e6;
    const auto res = exp_ode_heuristic(c);
    const Model m = c.build_model();
    const double t_star = (m.profile.B_infinity() - m.profile.B(1.0)) / m.clock_rate();
    EXPECT_DOUBLE_EQ(res.details["t_star"].get<double>(), t_star);
    EXPECT_NEAR(res.details["t_stop"].get<double>(), res.details["t_at_r_max_exact"].get<double>(), 1e-8);
    EXPECT_NEAR(res.details["t_stop"].get<double>(), t_star, 2.0 * 1e-6 / m.clock_rate());
}

TEST(Horizon, OdeSurrogateReachesTarget) {
    ExperimentConfig c = base(0.5);
    const Model m = c.build_model();
    const double T = horizon(c, m);
    EXPECT_NEAR(T, (m.profile.B(1e3) - m.profile.B(1.0)) / 0.5, 1e-9 * T);
    c.t_horizon = 17.0;
    EXPECT_EQ(horizon(c, m), 17.0);
}

TEST(Lln, SmallStripRun) {
    ExperimentConfig c = base(0.0);
    c.t_horizon = 40.0;
    c.levels = {5.0, 10.0};
    c.step.record_stride = 100;
    const auto res = exp_lln(c);
    EXPECT_EQ(res.path_errors, 0u);
    ASSERT_NE(res.find("B(X_T)/T"), nullptr);
    ASSERT_NE(res.find("T^(-1/(1+beta)) X_T"), nullptr);
    ASSERT_NE(res.find("s0*L_T/X_T"), nullptr);
    ASSERT_NE(res.find("E[sigma_r]/B(r) r=10"), nullptr);
    EXPECT_EQ(res.find("T^(-1/(1+beta)) X_T")->target, 0.5);
    EXPECT_EQ(res.trajectories.size(), 8u);
    EXPECT_EQ(res.paths.size(), 8u);
    for (const auto& p : res.paths) EXPECT_EQ(p.values.size(), res.path_columns.size());
}

TEST(Lln, ExponentialRegimeNamesLogRate) {
    ExperimentConfig c = base(-1.0);
    c.t_horizon = 2.0;
    c.n_paths = 2;
    const auto res = exp_lln(c);
    ASSERT_NE(res.find("log(X_T)/T"), nullptr);
}

TEST(Passage, StartAtLevelGivesZero) {
    ExperimentConfig c = base(0.0);
    c.x0 = 4.0;
    c.levels = {4.0};
    c.n_paths = 4;
    const auto res = exp_passage(c);
    const Estimate* e = res.estimates.empty() ? nullptr : &res.estimates.front();
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->agg.mean, 0.0);
}

TEST(Strip, RateCloseToTarget) {
    ExperimentConfig c = base(0.0);
    c.n_paths = 16;
    c.strip_dt = 1e-3;
    c.strip_t = 50.0;
    const auto res = exp_strip_local_time(c);
    const Estimate* e = res.find("L_T/T");
    ASSERT_NE(e, nullptr);
    EXPECT_EQ(e->target, 0.5);
    EXPECT_LT(std::abs(e->agg.mean - 0.5), 4 * e->agg.stderr_ + 0.05);
    c.reflection.c0 = 2.0;
    EXPECT_EQ(exp_strip_local_time(c).find("L_T/T")->target, 0.25);
}

TEST(Strip, BridgeRemovesCoarseStepBias) {
    ExperimentConfig c = base(0.0);
    c.n_paths = 40;
    c.strip_dt = 1e-2;
    c.strip_t = 200.0;
    const Estimate plain = *exp_strip_local_time(c).find("L_T/T");
    c.step.bridge_local_time = true;
    const Estimate bridged = *exp_strip_local_time(c).find("L_T/T");
    EXPECT_TRUE(bridged.agg.covers(0.5)) << bridged.agg.mean;
    EXPECT_LT(plain.agg.ci_hi, 0.49) << plain.agg.mean;
}

TEST(Strip, RejectsHigherDimension) {
    ExperimentConfig c = base(0.0);
    c.profile.d = 2;
    EXPECT_THROW(exp_strip_local_time(c), std::invalid_argument);
}

TEST(ExitBound, SmallGridIncludingCusp) {
    ExperimentConfig c = base(0.0);
    c.r_target = 6.0;
    c.exit_x0 = {0.1, 1.0, 6.0};
    c.n_paths = 6;
    c.step.t_max = 1e4;
    const auto res = exp_exit_bound(c);
    EXPECT_EQ(res.path_errors, 0u);
    EXPECT_EQ(res.estimates.size(), 9u);
    for (const auto& e : res.estimates) EXPECT_TRUE(std::isfinite(e.agg.mean)) << e.name;
    const Estimate* at_r = res.find("E[sigma_r] x0=6 axis");
    ASSERT_NE(at_r, nullptr);
    EXPECT_EQ(at_r->agg.mean, 0.0);
    EXPECT_EQ(res.details["boundary_over_axis"].size(), 3u);
}

TEST(Explosion, SmallRunIsConsistent) {
    ExperimentConfig c = base(-2.0);
    c.n_paths = 6;
    c.step.r_max = 1e3;
    c.step.b_handoff = 0.004;
    c.step.t_max = 100.0;
    const auto res = exp_explosion(c);
    EXPECT_EQ(res.path_errors, 0u);
    EXPECT_EQ(res.details["unreached"].get<std::size_t>(), 0u);
    const auto* a = res.find("tau_E axis");
    const auto* a2 = res.find("tau_E axis (2 r_max)");
    ASSERT_TRUE(a && a2);
    EXPECT_GE(a2->agg.mean, a->agg.mean);
    EXPECT_LT(res.details["stability"].get<double>(), 0.05);
    EXPECT_EQ(res.paths.size(), 12u);
    // Streams of the two starts are disjoint.
    EXPECT_EQ(res.paths[6].index, 6u);
}

TEST(Gates, FlagTargetsAndErrors) {
    ExperimentConfig c = base(0.0);
    c.gate_rel_tol = 0.1;
    c.gate_ci = true;
    EnsembleResult r;
    r.estimates.push_back({"good", aggregate({0.49, 0.51, 0.5}), 0.5});
    r.estimates.push_back({"bad", aggregate({0.8, 0.81, 0.79}), 0.5});
    r.estimates.push_back({"untargeted", aggregate({1.0, 2.0}), kNaN});
    apply_gates(c, r);
    ASSERT_EQ(r.gate_failures.size(), 2u);
    EXPECT_NE(r.gate_failures[0].find("bad"), std::string::npos);
    EnsembleResult e;
    e.path_errors = 3;
    apply_gates(base(0.0), e);
    EXPECT_EQ(e.gate_failures.size(), 1u);
}

TEST(Output, FormattingAndHash) {
    EXPECT_EQ(fmt_double(kNaN), "nan");
    EXPECT_EQ(fmt_double(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(std::stod(fmt_double(0.1)), 0.1);
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("q\"x,"), "\"q\"\"x,\"");
    ExperimentConfig a = base(0.0), b = base(0.0);
    b.threads = 8;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 7;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(hex64(fnv1a64("")), "cbf29ce484222325");
    EXPECT_EQ(hex64(fnv1a64("a")), "af63dc4c8601ec8c");
}

TEST(Output, RepeatedRunsAreByteIdentical) {
    ExperimentConfig c = base(0.5);
    c.t_horizon = 5.0;
    c.levels = {2.0, 4.0};
    const auto dir = std::filesystem::temp_directory_path() / "horn_test_bytes";
    std::filesystem::remove_all(dir);
    write_outputs(dir / "a", exp_lln(c), "h");
    c.threads = 3;
    write_outputs(dir / "b", exp_lln(c), "h");
    for (const char* f : {"results.csv", "paths.csv", "details.json", "curves/passage_ratio.csv"}) {
        const std::string sa = slurp(dir / "a" / f), sb = slurp(dir / "b" / f);
        EXPECT_FALSE(sa.empty()) << f;
        EXPECT_EQ(sa, sb) << f;
    }
    const std::string res = slurp(dir / "a" / "results.csv");
    EXPECT_EQ(res.rfind("# manifest_hash=h seed=42\nexperiment,estimate,mean,stderr,ci_lo,ci_hi,n,target,rel_error\n", 0),
              0u);
    std::filesystem::remove_all(dir);
}

TEST(Diagnose, RequiresRecording) {
    ExperimentConfig c = base(0.0);
    c.step.record_stride = 0;
    EXPECT_THROW(run_diagnose(c), std::invalid_argument);
}

TEST(Diagnose, ThetaSideFollowsGamma) {
    ExperimentConfig c = base(0.0);
    c.t_horizon = 20.0;
    c.step.record_stride = 100;
    const auto d = run_diagnose(c);
    ASSERT_EQ(d.per_gamma.size(), 2u);
    EXPECT_EQ(d.per_gamma[0].expected, DriftVerdict::submartingale);
    EXPECT_DOUBLE_EQ(d.per_gamma[0].drift.theta, 0.25 - 0.2);
    EXPECT_EQ(d.per_gamma[1].expected, DriftVerdict::supermartingale);
    EXPECT_DOUBLE_EQ(d.per_gamma[1].drift.theta, 2.0 + 0.2);
    EXPECT_TRUE(d.per_gamma[1].sign.x1.has_value());
    const auto j = d.to_json("h", 42);
    EXPECT_EQ(j["diagnostics"].size(), 2u);
}
