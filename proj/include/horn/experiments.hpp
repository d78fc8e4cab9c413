#pragma once

// Monte Carlo experiments: strong-law rates, passage-time ratios, explosion times,
// the strip local-time benchmark, uniform exit bounds and the averaged ODE.
// Results carry per-path rows, aggregates with 95% intervals and plot-ready curves.

#include "horn/diagnostics.hpp"
#include "horn/dynamics.hpp"
#include "horn/geometry.hpp"
#include "horn/integrator.hpp"
#include "horn/random.hpp"

#include <boost/numeric/odeint.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace horn {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Aggregate {
    double mean = kNaN;
    double stderr_ = kNaN;
    double ci_lo = kNaN;
    double ci_hi = kNaN;
    std::size_t n = 0;

    [[nodiscard]] bool covers(double v) const { return ci_lo <= v && v <= ci_hi; }
};

/// Mean, standard error over values and the interval mean +- 1.96 stderr.
inline Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    a.n = v.size();
    if (v.empty()) return a;
    double s = 0.0;
    for (double x : v) s += x;
    a.mean = s / static_cast<double>(v.size());
    if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.stderr_ = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
        a.ci_lo = a.mean - 1.96 * a.stderr_;
        a.ci_hi = a.mean + 1.96 * a.stderr_;
    }
    return a;
}

struct Estimate {
    std::string name;
    Aggregate agg;
    double target = kNaN;

    [[nodiscard]] double rel_error() const { return std::abs(agg.mean - target) / std::abs(target); }
    [[nodiscard]] bool has_target() const { return !std::isnan(target); }
};

struct Curve {
    std::string name;
    std::string x_label;
    std::string y_label;
    std::vector<std::array<double, 2>> points;
};

struct PathRow {
    std::uint64_t index = 0;
    std::string status;
    std::vector<double> values;
};

struct ExperimentConfig {
    std::string name = "lln";
    ProfileParams profile;
    CovarianceParams covariance;
    ReflectionParams reflection;
    StepConfig step;

    // Lyapunov diagnostics
    std::vector<double> gammas{0.25, 2.0};
    double theta_margin = 0.2;
    double drift_level = 10.0;
    std::size_t drift_lag = 10;
    std::size_t min_segments = 30;

    std::size_t n_paths = 200;
    std::uint64_t seed = 42;
    unsigned threads = 1;
    double x0 = 1.0;
    double boundary_offset = 1e-3;  // distance from the boundary of near-boundary starts

    double t_horizon = 0.0;  // 0: horizon where the averaged ODE reaches x_target
    double x_target = 1e3;
    std::vector<double> levels;  // passage levels
    double r_target = 0.0;       // passage/exit level
    std::vector<double> exit_x0{0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0};

    double strip_b = 1.0;
    double strip_dt = 1e-4;
    double strip_t = 200.0;

    // Opt-in acceptance gates
    std::optional<double> gate_rel_tol;
    bool gate_ci = false;
    std::optional<double> gate_stability;
    std::optional<double> gate_qv_max;
    bool gate_verdicts = false;

    [[nodiscard]] Model build_model() const {
        DomainProfile prof(profile);
        return Model{prof, CovarianceSpec(covariance, profile.d), ReflectionSpec(reflection)};
    }
};

struct EnsembleResult {
    std::string experiment;
    std::uint64_t seed = 0;
    double runtime_s = 0.0;
    std::vector<Estimate> estimates;
    std::vector<std::string> path_columns;
    std::vector<PathRow> paths;
    std::vector<Curve> curves;
    nlohmann::json details = nlohmann::json::object();
    std::vector<std::string> warnings;
    std::size_t path_errors = 0;
    std::vector<std::vector<TrajectoryRecord>> trajectories;
    std::vector<std::string> gate_failures;

    [[nodiscard]] const Estimate* find(const std::string& name) const {
        for (const auto& e : estimates) {
            if (e.name == name) return &e;
        }
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

inline double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

inline std::string level_tag(double r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", r);
    return buf;
}

inline void collect_errors(EnsembleResult& res, const std::vector<PathResult>& runs) {
    for (const auto& r : runs) {
        if (r.state.status == PathStatus::error) {
            ++res.path_errors;
            res.warnings.push_back("path " + std::to_string(r.index) + ": " + r.state.error);
        }
    }
}

/// Ensemble mean of f(records) on a common time grid (linear interpolation per path).
template <class F>
Curve mean_curve(const std::string& name, const std::string& ylab,
                 const std::vector<std::vector<TrajectoryRecord>>& paths, double t_end, F f, int n = 50) {
    Curve c{name, "t", ylab, {}};
    if (paths.empty() || !(t_end > 0.0)) return c;
    for (int k = 1; k <= n; ++k) {
        const double t = t_end * k / n;
        double s = 0.0;
        std::size_t m = 0;
        for (const auto& recs : paths) {
            if (recs.empty() || recs.back().t < t) continue;
            const auto it = std::lower_bound(recs.begin(), recs.end(), t,
                                             [](const TrajectoryRecord& r, double s_) { return r.t < s_; });
            const std::size_t j = static_cast<std::size_t>(it - recs.begin());
            if (j == 0) {
                s += f(recs[0], t);
            } else {
                const double w = (t - recs[j - 1].t) / (recs[j].t - recs[j - 1].t);
                s += (1.0 - w) * f(recs[j - 1], t) + w * f(recs[j], t);
            }
            ++m;
        }
        if (m > 0) c.points.push_back({t, s / static_cast<double>(m)});
    }
    return c;
}

inline std::vector<double> passage_column(const std::vector<PathResult>& runs, std::size_t k) {
    std::vector<double> v;
    for (const auto& r : runs) {
        const auto& h = r.tracker.hit_times();
        if (k < h.size() && h[k]) v.push_back(*h[k]);
    }
    return v;
}

}  // namespace detail

/// Time at which the averaged ODE dX/dt = s0 sigma^2 / (2 c0 b(X)) started at x0 reaches x_target.
inline double ode_horizon(const Model& model, double x0, double x_target) {
    return (model.profile.B(x_target) - model.profile.B(x0)) / model.clock_rate();
}

inline double horizon(const ExperimentConfig& cfg, const Model& model) {
    return cfg.t_horizon > 0.0 ? cfg.t_horizon : ode_horizon(model, cfg.x0, cfg.x_target);
}

/// Near-boundary start at axial position x: distance `offset` (capped at b/2) from the wall along e_1.
inline Point near_boundary_start(const DomainProfile& prof, double x, double offset) {
    Point z = Point::on_axis(x, prof.d());
    const double b = prof.b(x);
    z.y(0) = b - std::min(offset, 0.5 * b);
    return z;
}

/// Closed-form strong-law targets for the power tail.
struct RateTargets {
    double clock;      // lim B(X_t)/t
    double rate;       // lim t^{-1/(1+beta)} X_t, or lim log(X_t)/t when beta = -1
    bool exponential;  // beta == -1
};

inline RateTargets rate_targets(const Model& model) {
    const double beta = model.profile.params().beta;
    const double a = model.profile.params().a_inf;
    const double clock = model.clock_rate();
    if (beta == -1.0) return {clock, clock / a, true};
    return {clock, std::pow((1.0 + beta) * clock / a, 1.0 / (1.0 + beta)), false};
}

// ---------------------------------------------------------------------------
// Experiments

/// Strong laws at a fixed horizon: B(X_T)/T, the power-law or exponential rate of X_T,
/// and s0 L_T / X_T. Passage ratios are reported for any configured levels.
inline EnsembleResult exp_lln(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    if (model.profile.B_finite_at_infinity()) {
        throw std::invalid_argument("lln: B(infinity) is finite for beta < -1 (explosive regime); use the explosion experiment");
    }
    EnsembleResult res;
    res.experiment = "lln";
    res.seed = cfg.seed;
    const double T = horizon(cfg, model);
    StepConfig sc = cfg.step;
    sc.t_max = T;
    sc.r_max = std::numeric_limits<double>::infinity();

    EnsembleSpec es{Point::on_axis(cfg.x0, cfg.profile.d), cfg.n_paths, cfg.seed, cfg.levels, cfg.threads, 0};
    auto runs = run_ensemble(model, sc, es);
    detail::collect_errors(res, runs);

    const RateTargets tg = rate_targets(model);
    const double s0 = model.refl.axial_limit();
    const std::string rate_name = tg.exponential ? "log(X_T)/T" : "T^(-1/(1+beta)) X_T";
    const double expo = 1.0 / (1.0 + cfg.profile.beta);

    res.path_columns = {"t", "x", "y_norm", "L", "B(X_T)/T", rate_name, "s0*L_T/X_T", "steps", "reflections",
                        "cusp_steps", "averaged_steps"};
    for (double r : cfg.levels) res.path_columns.push_back("sigma_r=" + detail::level_tag(r));
    std::vector<double> clock_v, rate_v, lt_v;
    for (const auto& r : runs) {
        const PathState& s = r.state;
        PathRow row{r.index, to_string(s.status), {}};
        const double X = s.z.x;
        const double clock = model.profile.B(X) / s.t;
        const double rate = tg.exponential ? std::log(X) / s.t : std::pow(s.t, -expo) * X;
        const double lt = s0 * s.L / X;
        row.values = {s.t, X, s.z.y.norm(), s.L, clock, rate, lt, static_cast<double>(s.steps),
                      static_cast<double>(s.reflections), static_cast<double>(s.cusp_steps),
                      static_cast<double>(s.averaged_steps)};
        for (const auto& h : r.tracker.hit_times()) row.values.push_back(h ? *h : kNaN);
        res.paths.push_back(std::move(row));
        if (s.status == PathStatus::error) continue;
        clock_v.push_back(clock);
        rate_v.push_back(rate);
        lt_v.push_back(lt);
    }
    res.estimates.push_back({"B(X_T)/T", aggregate(clock_v), tg.clock});
    res.estimates.push_back({rate_name, aggregate(rate_v), tg.rate});
    res.estimates.push_back({"s0*L_T/X_T", aggregate(lt_v), 1.0});

    Curve pr{"passage_ratio", "r", "E[sigma_r]/B(r)", {}};
    for (std::size_t k = 0; k < cfg.levels.size(); ++k) {
        const double r = cfg.levels[k];
        const auto hits = detail::passage_column(runs, k);
        std::vector<double> ratio;
        for (double h : hits) ratio.push_back(h / model.profile.B(r));
        if (hits.size() < runs.size()) {
            res.warnings.push_back("level " + detail::level_tag(r) + " reached by " + std::to_string(hits.size()) +
                                   " of " + std::to_string(runs.size()) + " paths before T");
        }
        res.estimates.push_back({"E[sigma_r]/B(r) r=" + detail::level_tag(r), aggregate(ratio), 1.0 / tg.clock});
        if (!ratio.empty()) pr.points.push_back({r, aggregate(ratio).mean});
    }
    if (!pr.points.empty()) res.curves.push_back(pr);

    if (sc.record_stride > 0) {
        for (auto& r : runs) res.trajectories.push_back(std::move(r.records));
        const DomainProfile& prof = model.profile;
        res.curves.push_back(detail::mean_curve("clock", "mean B(X_t)/t", res.trajectories, T,
                                                [&](const TrajectoryRecord& rec, double t) { return prof.B(rec.x) / t; }));
    }
    res.details = {{"horizon", T}, {"x_target", cfg.x_target}, {"clock_target", tg.clock},
                   {"rate_target", tg.rate}, {"beta", cfg.profile.beta}};
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// E[sigma_r] / B(r) over a grid of levels; the target is 2 c0 / (s0 sigma^2).
inline EnsembleResult exp_passage(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    if (model.profile.B_finite_at_infinity()) {
        throw std::invalid_argument("passage: B(infinity) is finite for beta < -1; ratios to B(r) do not diverge");
    }
    EnsembleResult res;
    res.experiment = "passage";
    res.seed = cfg.seed;
    std::vector<double> levels = cfg.levels;
    if (levels.empty()) {
        if (!(cfg.r_target > cfg.x0)) throw std::invalid_argument("passage: need levels or r_target > x0");
        for (double r = cfg.r_target; r > cfg.x0 && levels.size() < 64; r /= 2.0) levels.insert(levels.begin(), r);
    }
    StepConfig sc = cfg.step;
    sc.r_max = levels.back();
    EnsembleSpec es{Point::on_axis(cfg.x0, cfg.profile.d), cfg.n_paths, cfg.seed, levels, cfg.threads, 0};
    auto runs = run_ensemble(model, sc, es);
    detail::collect_errors(res, runs);

    const double target = 1.0 / model.clock_rate();
    res.path_columns = {"t", "x", "L", "steps"};
    for (double r : levels) res.path_columns.push_back("sigma_r=" + detail::level_tag(r));
    for (const auto& r : runs) {
        PathRow row{r.index, to_string(r.state.status),
                    {r.state.t, r.state.z.x, r.state.L, static_cast<double>(r.state.steps)}};
        for (const auto& h : r.tracker.hit_times()) row.values.push_back(h ? *h : kNaN);
        res.paths.push_back(std::move(row));
    }
    Curve pr{"passage_ratio", "r", "E[sigma_r]/B(r)", {}};
    std::vector<double> gaps;
    for (std::size_t k = 0; k < levels.size(); ++k) {
        const double r = levels[k];
        const auto hits = detail::passage_column(runs, k);
        if (hits.size() < runs.size()) {
            res.warnings.push_back("level " + detail::level_tag(r) + " reached by " + std::to_string(hits.size()) +
                                   " of " + std::to_string(runs.size()) + " paths within t_max");
        }
        std::vector<double> ratio;
        for (double h : hits) ratio.push_back(h / model.profile.B(r));
        const Aggregate a = aggregate(ratio);
        res.estimates.push_back({"E[sigma_r]/B(r) r=" + detail::level_tag(r), a, target});
        pr.points.push_back({r, a.mean});
        gaps.push_back(std::abs(a.mean - target));
    }
    res.curves.push_back(pr);
    if (gaps.size() >= 3) {
        const std::size_t n = gaps.size();
        if (gaps[n - 1] > gaps[n - 2] || gaps[n - 2] > gaps[n - 3]) {
            res.warnings.push_back("passage ratio is not monotonically approaching its target over the last three levels");
        }
    }
    res.details = {{"target", target}, {"levels", levels}};
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// Explosion times tau_E ~ sigma_{r_max} from an axis start and a near-boundary start,
/// with the relative change of the mean when r_max doubles.
inline EnsembleResult exp_explosion(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    if (!model.profile.B_finite_at_infinity()) {
        throw std::invalid_argument("explosion: B(infinity) is infinite for beta >= -1 (non-explosive regime)");
    }
    EnsembleResult res;
    res.experiment = "explosion";
    res.seed = cfg.seed;
    const double r_max = cfg.step.r_max;
    std::vector<double> levels{2.0 * r_max};
    for (double r = r_max; r > cfg.x0; r /= 2.0) levels.insert(levels.begin(), r);
    const std::size_t k_rmax = levels.size() - 2;
    StepConfig sc = cfg.step;
    sc.r_max = 2.0 * r_max;

    const std::array<Point, 2> starts{Point::on_axis(cfg.x0, cfg.profile.d),
                                      near_boundary_start(model.profile, cfg.x0, cfg.boundary_offset)};
    const std::array<const char*, 2> tags{"axis", "boundary"};
    res.path_columns = {"start", "t", "x", "L", "steps", "averaged_steps", "tau_r_max", "tau_2r_max", "converged"};
    std::array<Aggregate, 2> tau{};
    std::size_t unreached = 0;
    std::size_t converged = 0;
    Curve tau_curve{"tau_vs_r", "r", "mean sigma_r (axis start)", {}};
    for (int s = 0; s < 2; ++s) {
        EnsembleSpec es{starts[s], cfg.n_paths, cfg.seed, levels, cfg.threads, static_cast<std::uint64_t>(s) * cfg.n_paths};
        auto runs = run_ensemble(model, sc, es);
        detail::collect_errors(res, runs);
        std::vector<double> t1, t2;
        for (auto& r : runs) {
            const auto& h = r.tracker.hit_times();
            if (h[k_rmax]) r.tracker.tau_E_estimate = *h[k_rmax];
            bool conv = false;
            if (h[k_rmax] && k_rmax >= 2 && h[k_rmax - 2]) {
                conv = (*h[k_rmax] - *h[k_rmax - 2]) < 0.02 * *h[k_rmax];
            }
            converged += conv ? 1 : 0;
            const bool reached = h[k_rmax].has_value();
            if (!reached) ++unreached;
            const double a = reached ? *h[k_rmax] : kNaN;
            const double b = h[k_rmax + 1] ? *h[k_rmax + 1] : kNaN;
            if (reached) t1.push_back(a);
            if (h[k_rmax + 1]) t2.push_back(b);
            res.paths.push_back({r.index, reached ? "exploded" : to_string(r.state.status),
                                 {static_cast<double>(s), r.state.t, r.state.z.x, r.state.L,
                                  static_cast<double>(r.state.steps), static_cast<double>(r.state.averaged_steps), a, b,
                                  conv ? 1.0 : 0.0}});
        }
        if (s == 0) {
            for (std::size_t k = 0; k < levels.size(); ++k) {
                const auto hits = detail::passage_column(runs, k);
                if (!hits.empty()) tau_curve.points.push_back({levels[k], aggregate(hits).mean});
            }
        }
        tau[s] = aggregate(t1);
        res.estimates.push_back({std::string("tau_E ") + tags[s], tau[s], kNaN});
        res.estimates.push_back({std::string("tau_E ") + tags[s] + " (2 r_max)", aggregate(t2), kNaN});
    }
    const Estimate* a2 = res.find("tau_E axis (2 r_max)");
    const double stability = std::abs(a2->agg.mean - tau[0].mean) / tau[0].mean;
    const double joint_hw = 1.96 * std::hypot(tau[0].stderr_, tau[1].stderr_);
    const double start_gap = std::abs(tau[0].mean - tau[1].mean);
    const double clock = model.clock_rate();
    const double heuristic = (model.profile.B_infinity() - model.profile.B(cfg.x0)) / clock;
    res.details = {{"r_max", r_max},
                   {"unreached", unreached},
                   {"stability", stability},
                   {"start_gap", start_gap},
                   {"joint_ci_halfwidth", joint_hw},
                   {"start_gap_in_joint_ci_units", joint_hw > 0 ? start_gap / joint_hw : kNaN},
                   {"heuristic_tau", heuristic},
                   {"heuristic_band", {0.75 * heuristic, 1.25 * heuristic}},
                   {"heuristic_band_contains_mean", tau[0].mean >= 0.75 * heuristic && tau[0].mean <= 1.25 * heuristic},
                   {"converged_paths", converged},
                   {"b_handoff", cfg.step.b_handoff}};
    res.curves.push_back(tau_curve);
    if (unreached > 0) res.warnings.push_back(std::to_string(unreached) + " paths did not reach r_max within t_max");
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// Transverse coordinate alone: reflected diffusion on [-b, b] pushed back with
/// transverse magnitude c0. Estimates L_T/T against sigma^2 / (2 c0 b).
inline EnsembleResult exp_strip_local_time(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    if (cfg.profile.d != 1) throw std::invalid_argument("strip: the benchmark is one-dimensional (d = 1)");
    EnsembleResult res;
    res.experiment = "strip";
    res.seed = cfg.seed;
    const double b = cfg.strip_b;
    const double c0 = model.refl.transverse_limit();
    const double sigma_sq = model.cov.sigma_sq_limit();
    const double sd = std::sqrt(sigma_sq * cfg.strip_dt);
    const auto n_steps = static_cast<std::uint64_t>(std::llround(cfg.strip_t / cfg.strip_dt));
    const double T = static_cast<double>(n_steps) * cfg.strip_dt;
    const bool bridge = cfg.step.bridge_local_time;
    res.path_columns = {"T", "y", "L", "L_T/T", "reflections"};
    std::vector<double> rate(cfg.n_paths);
    std::vector<PathRow> rows(cfg.n_paths);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cfg.n_paths) break;
            PathStream rng(cfg.seed, i);
            double y = 0.0, L = 0.0;
            std::uint64_t refl = 0;
            for (std::uint64_t k = 0; k < n_steps; ++k) {
                const double dy = sd * rng.normal();
                if (bridge) {
                    // Bridge maximum towards the nearer wall; see StepConfig::bridge_local_time.
                    const double side = y >= 0.0 ? 1.0 : -1.0;
                    const double h0 = b - std::abs(y);
                    if (h0 < 8.0 * sd) {
                        const double w = side * dy;
                        const double M = 0.5 * (w + std::sqrt(w * w - 2.0 * sd * sd * std::log(rng.uniform())));
                        if (M > h0) {
                            L += (M - h0) / c0;
                            y -= side * (M - h0);
                            ++refl;
                        }
                    }
                }
                y += dy;
                if (y > b) {
                    L += (y - b) / c0;
                    y = b;
                    ++refl;
                } else if (y < -b) {
                    L += (-b - y) / c0;
                    y = -b;
                    ++refl;
                }
            }
            rate[i] = L / T;
            rows[i] = {i, "time_budget", {T, y, L, L / T, static_cast<double>(refl)}};
        }
    };
    const unsigned nw = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.n_paths)));
    if (nw == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < nw; ++w) pool.emplace_back(worker);
    }
    res.paths = std::move(rows);
    const double target = sigma_sq / (2.0 * c0 * b);
    res.estimates.push_back({"L_T/T", aggregate(rate), target});
    res.details = {{"b", b}, {"c0", c0}, {"sigma_sq", sigma_sq}, {"dt", cfg.strip_dt}, {"T", T}, {"target", target},
                   {"bridge_local_time", bridge}};
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// E_z sigma_r over a grid of starting points: axis, half-width and near-boundary
/// positions at each x0. Flags cells above five times the grid median.
inline EnsembleResult exp_exit_bound(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    const double r = cfg.r_target;
    if (!(r > 0.0)) throw std::invalid_argument("exit: r_target must be positive");
    EnsembleResult res;
    res.experiment = "exit";
    res.seed = cfg.seed;
    StepConfig sc = cfg.step;
    sc.r_max = r;
    res.path_columns = {"cell", "x0", "y0", "sigma_r", "status_code"};
    struct Cell {
        double x0, y0;
        const char* where;
        Aggregate agg;
        std::size_t unreached;
    };
    std::vector<Cell> cells;
    std::uint64_t offset = 0;
    for (double x0 : cfg.exit_x0) {
        const double b = model.profile.b(x0);
        const std::array<std::pair<double, const char*>, 3> ys{
            {{0.0, "axis"}, {0.5 * b, "mid"}, {near_boundary_start(model.profile, x0, cfg.boundary_offset).y(0), "boundary"}}};
        for (const auto& [y0, where] : ys) {
            Point z = Point::on_axis(x0, cfg.profile.d);
            z.y(0) = y0;
            EnsembleSpec es{z, cfg.n_paths, cfg.seed, {r}, cfg.threads, offset};
            offset += cfg.n_paths;
            auto runs = run_ensemble(model, sc, es);
            detail::collect_errors(res, runs);
            std::vector<double> v;
            std::size_t miss = 0;
            for (const auto& pr : runs) {
                const auto& h = pr.tracker.hit_times()[0];
                if (h) {
                    v.push_back(*h);
                } else {
                    ++miss;
                }
                res.paths.push_back({pr.index, to_string(pr.state.status),
                                     {static_cast<double>(cells.size()), x0, y0, h ? *h : kNaN,
                                      static_cast<double>(static_cast<int>(pr.state.status))}});
            }
            cells.push_back({x0, y0, where, aggregate(v), miss});
        }
    }
    std::vector<double> means;
    for (const auto& c : cells) means.push_back(c.agg.mean);
    std::vector<double> sorted = means;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted.empty() ? kNaN
                          : (sorted.size() % 2 ? sorted[sorted.size() / 2]
                                               : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]));
    nlohmann::json table = nlohmann::json::array();
    std::size_t flagged = 0;
    Curve c{"exit_means", "x0", "mean sigma_r (axis start)", {}};
    for (const auto& cell : cells) {
        const bool flag = cell.agg.mean > 5.0 * median;
        flagged += flag ? 1 : 0;
        table.push_back({{"x0", cell.x0}, {"y0", cell.y0}, {"start", cell.where}, {"mean", cell.agg.mean},
                         {"stderr", cell.agg.stderr_}, {"unreached", cell.unreached}, {"flagged", flag}});
        res.estimates.push_back({std::string("E[sigma_r] x0=") + detail::level_tag(cell.x0) + " " + cell.where,
                                 cell.agg, kNaN});
        if (std::string(cell.where) == "axis") c.points.push_back({cell.x0, cell.agg.mean});
    }
    res.curves.push_back(c);
    nlohmann::json ratios = nlohmann::json::array();
    for (std::size_t i = 0; i + 2 < cells.size(); i += 3) {
        ratios.push_back({{"x0", cells[i].x0}, {"boundary_over_axis", cells[i + 2].agg.mean / cells[i].agg.mean}});
    }
    res.details = {{"r", r}, {"median", median}, {"flagged_cells", flagged}, {"cells", table},
                   {"boundary_over_axis", ratios}};
    if (flagged > 0) res.warnings.push_back(std::to_string(flagged) + " cells exceed 5x the grid median");
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

struct OdeSolution {
    std::vector<std::array<double, 2>> tx;  // (t, X_t)
    double t_stop = 0.0;
    double x_stop = 0.0;
    bool reached_level = false;
};

/// Adaptive Dormand-Prince integration of dX/dt = clock / b(X) until t_end or X >= x_stop.
inline OdeSolution solve_averaged_ode(const Model& model, double x0, double t_end, double x_stop,
                                      double abs_tol = 1e-12, double rel_tol = 1e-12) {
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 1>;
    const double clock = model.clock_rate();
    const DomainProfile& prof = model.profile;
    auto rhs = [&](const State& x, State& dxdt, double) { dxdt[0] = clock / prof.b(std::max(x[0], 1e-300)); };
    auto stepper = odeint::make_controlled(abs_tol, rel_tol, odeint::runge_kutta_dopri5<State>());
    OdeSolution out;
    State x{x0};
    double t = 0.0;
    double dt = 1e-6;
    out.tx.push_back({t, x[0]});
    for (int it = 0; it < 10'000'000 && t < t_end && x[0] < x_stop; ++it) {
        const State prev = x;
        const double t_prev = t;
        dt = std::min(dt, t_end - t);
        if (stepper.try_step(rhs, x, t, dt) == odeint::fail) continue;
        if (x[0] >= x_stop) {
            // Land on x_stop: bisect the size of a single dopri5 step from the previous state.
            odeint::runge_kutta_dopri5<State> single;
            double lo = 0.0, hi = t - t_prev;
            for (int k = 0; k < 200 && hi - lo > 1e-15 * std::max(1.0, t_prev); ++k) {
                const double h = 0.5 * (lo + hi);
                State trial;
                single.do_step(rhs, prev, t_prev, trial, h);
                (trial[0] < x_stop ? lo : hi) = h;
            }
            t = t_prev + hi;
            x[0] = x_stop;
            out.reached_level = true;
        }
        out.tx.push_back({t, x[0]});
    }
    out.t_stop = t;
    out.x_stop = x[0];
    return out;
}

/// Averaged ODE and its first integral B(X_t) - clock t = B(x0).
inline EnsembleResult exp_ode_heuristic(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    EnsembleResult res;
    res.experiment = "ode";
    res.seed = cfg.seed;
    const double clock = model.clock_rate();
    const DomainProfile& prof = model.profile;
    const bool explosive = prof.B_finite_at_infinity();
    const double t_end = explosive ? std::numeric_limits<double>::infinity() : horizon(cfg, model);
    const double x_stop = explosive ? cfg.step.r_max : std::numeric_limits<double>::infinity();
    const OdeSolution sol = solve_averaged_ode(model, cfg.x0, t_end, x_stop);
    const double B0 = prof.B(cfg.x0);
    Curve cx{"ode_X", "t", "X_t", {}};
    Curve cb{"ode_B", "t", "B(X_t)", {}};
    Curve cc{"ode_clock", "t", "B(x0) + clock t", {}};
    double max_res = 0.0;
    for (const auto& [t, x] : sol.tx) {
        const double bx = prof.B(x);
        cx.points.push_back({t, x});
        cb.points.push_back({t, bx});
        cc.points.push_back({t, B0 + clock * t});
        max_res = std::max(max_res, std::abs(bx - clock * t - B0) / std::max(1.0, bx));
        res.paths.push_back({res.paths.size(), "ode", {t, x, bx, clock * t, bx - clock * t}});
    }
    res.path_columns = {"t", "X", "B(X)", "clock*t", "B(X)-clock*t"};
    res.curves = {cx, cb, cc};
    res.details = {{"clock", clock}, {"x0", cfg.x0}, {"B_x0", B0}, {"t_stop", sol.t_stop}, {"x_stop", sol.x_stop},
                   {"max_relative_identity_residual", max_res}, {"steps", sol.tx.size() - 1}};
    if (explosive) {
        res.details["t_star"] = (prof.B_infinity() - B0) / clock;
        res.details["t_at_r_max_exact"] = (prof.B(cfg.step.r_max) - B0) / clock;
    }
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// Raw ensemble from the axis start at x0 with the configured step settings; keeps
/// trajectories (when record_stride > 0) and per-path terminal rows.
inline EnsembleResult exp_simulate(const ExperimentConfig& cfg) {
    const double t0 = detail::now_seconds();
    const Model model = cfg.build_model();
    EnsembleResult res;
    res.experiment = "simulate";
    res.seed = cfg.seed;
    EnsembleSpec es{Point::on_axis(cfg.x0, cfg.profile.d), cfg.n_paths, cfg.seed, cfg.levels, cfg.threads, 0};
    auto runs = run_ensemble(model, cfg.step, es);
    detail::collect_errors(res, runs);
    res.path_columns = {"t", "x", "y_norm", "L", "steps", "reflections", "cusp_steps", "apex_pushes"};
    for (double r : cfg.levels) res.path_columns.push_back("sigma_r=" + detail::level_tag(r));
    for (auto& r : runs) {
        const PathState& s = r.state;
        PathRow row{r.index, to_string(s.status),
                    {s.t, s.z.x, s.z.y.norm(), s.L, static_cast<double>(s.steps), static_cast<double>(s.reflections),
                     static_cast<double>(s.cusp_steps), static_cast<double>(s.apex_pushes)}};
        for (const auto& h : r.tracker.hit_times()) row.values.push_back(h ? *h : kNaN);
        res.paths.push_back(std::move(row));
        res.trajectories.push_back(std::move(r.records));
    }
    res.runtime_s = detail::now_seconds() - t0;
    return res;
}

/// Dispatch by experiment name.
inline EnsembleResult run_experiment(const std::string& name, const ExperimentConfig& cfg) {
    if (name != "ode" && cfg.n_paths < 2) throw std::invalid_argument("experiments need n_paths >= 2 for an interval");
    if (name == "lln") return exp_lln(cfg);
    if (name == "passage") return exp_passage(cfg);
    if (name == "explosion") return exp_explosion(cfg);
    if (name == "strip") return exp_strip_local_time(cfg);
    if (name == "exit") return exp_exit_bound(cfg);
    if (name == "ode") return exp_ode_heuristic(cfg);
    throw std::invalid_argument("unknown experiment '" + name + "' (expected lln|passage|explosion|strip|exit|ode)");
}

/// Evaluate the opt-in gates of the configuration; fills res.gate_failures.
inline void apply_gates(const ExperimentConfig& cfg, EnsembleResult& res) {
    if (res.path_errors > 0) res.gate_failures.push_back(std::to_string(res.path_errors) + " path errors");
    for (const auto& e : res.estimates) {
        if (!e.has_target()) continue;
        if (cfg.gate_rel_tol && !(e.rel_error() <= *cfg.gate_rel_tol)) {
            res.gate_failures.push_back(e.name + ": relative error " + std::to_string(e.rel_error()) + " > " +
                                        std::to_string(*cfg.gate_rel_tol));
        }
        if (cfg.gate_ci && !e.agg.covers(e.target)) {
            res.gate_failures.push_back(e.name + ": target outside the 95% interval");
        }
    }
    if (cfg.gate_stability && res.details.contains("stability")) {
        const double s = res.details["stability"].get<double>();
        if (!(s < *cfg.gate_stability)) res.gate_failures.push_back("explosion time not stable under r_max doubling");
        if (res.details["unreached"].get<std::size_t>() > 0) res.gate_failures.push_back("paths did not reach r_max");
        if (!(res.details["start_gap_in_joint_ci_units"].get<double>() <= 3.0)) {
            res.gate_failures.push_back("axis and boundary starts disagree beyond 3 joint CI half-widths");
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical configuration, hashing and output

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    using nlohmann::json;
    auto entry = [](const RationalEntry& e) { return json::array({e.a, e.c, e.shift}); };
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {
        {"domain",
         {{"d", c.profile.d}, {"a0", c.profile.a0}, {"alpha_cusp", c.profile.alpha_cusp}, {"a_inf", c.profile.a_inf},
          {"beta", c.profile.beta}, {"x_lo", c.profile.x_lo}, {"x_hi", c.profile.x_hi}}},
        {"covariance",
         {{"kind", c.covariance.kind == CovarianceKind::isotropic ? "isotropic" : "diagonal_profile"},
          {"v", c.covariance.v}, {"axial", entry(c.covariance.axial)}, {"transverse", entry(c.covariance.transverse)},
          {"delta", c.covariance.delta}}},
        {"reflection",
         {{"s0", c.reflection.s0}, {"c0", c.reflection.c0},
          {"field", c.reflection.field == FieldKind::rotated ? "rotated" : "additive"}}},
        {"lyapunov",
         {{"gammas", c.gammas}, {"theta_margin", c.theta_margin}, {"level", c.drift_level}, {"lag", c.drift_lag},
          {"min_segments", c.min_segments}}},
        {"step",
         {{"dt_max", c.step.dt_max}, {"eta", c.step.eta}, {"dt_min", c.step.dt_min}, {"r_max", c.step.r_max},
          {"t_max", c.step.t_max}, {"max_reflect_iters", c.step.max_reflect_iters}, {"lambda_tol", c.step.lambda_tol},
          {"record_stride", c.step.record_stride}, {"b_handoff", c.step.b_handoff},
          {"handoff_rel_step", c.step.handoff_rel_step}, {"bridge_local_time", c.step.bridge_local_time}}},
        {"experiment",
         {{"name", c.name}, {"n_paths", c.n_paths}, {"seed", c.seed}, {"x0", c.x0},
          {"boundary_offset", c.boundary_offset}, {"t_horizon", c.t_horizon}, {"x_target", c.x_target},
          {"levels", c.levels}, {"r_target", c.r_target}, {"exit_x0", c.exit_x0}, {"strip_b", c.strip_b},
          {"strip_dt", c.strip_dt}, {"strip_t", c.strip_t}, {"gate_rel_tol", opt(c.gate_rel_tol)},
          {"gate_ci", c.gate_ci}, {"gate_stability", opt(c.gate_stability)}, {"gate_qv_max", opt(c.gate_qv_max)},
          {"gate_verdicts", c.gate_verdicts}}},
    };
}

/// Hash of the resolved configuration (thread count and paths excluded, so that the
/// hash and every output byte are independent of where and how wide a run is).
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline void write_results_csv(const std::filesystem::path& file, const EnsembleResult& res, const std::string& hash) {
    std::ofstream os(file, std::ios::binary);
    os << "# manifest_hash=" << hash << " seed=" << res.seed << "\n";
    os << "experiment,estimate,mean,stderr,ci_lo,ci_hi,n,target,rel_error\n";
    for (const auto& e : res.estimates) {
        os << res.experiment << ',' << csv_field(e.name) << ',' << fmt_double(e.agg.mean) << ','
           << fmt_double(e.agg.stderr_) << ',' << fmt_double(e.agg.ci_lo) << ',' << fmt_double(e.agg.ci_hi) << ','
           << e.agg.n << ',' << fmt_double(e.target) << ',' << fmt_double(e.has_target() ? e.rel_error() : kNaN)
           << '\n';
    }
}

inline void write_paths_csv(const std::filesystem::path& file, const EnsembleResult& res, const std::string& hash) {
    std::ofstream os(file, std::ios::binary);
    os << "# manifest_hash=" << hash << " seed=" << res.seed << "\n";
    os << "path,status";
    for (const auto& c : res.path_columns) os << ',' << csv_field(c);
    os << '\n';
    for (const auto& r : res.paths) {
        os << r.index << ',' << r.status;
        for (double v : r.values) os << ',' << fmt_double(v);
        os << '\n';
    }
}

inline void write_curves(const std::filesystem::path& dir, const EnsembleResult& res, const std::string& hash) {
    std::filesystem::create_directories(dir);
    for (const auto& c : res.curves) {
        std::ofstream os(dir / (c.name + ".csv"), std::ios::binary);
        os << "# manifest_hash=" << hash << " seed=" << res.seed << "\n";
        os << csv_field(c.x_label) << ',' << csv_field(c.y_label) << '\n';
        for (const auto& p : c.points) os << fmt_double(p[0]) << ',' << fmt_double(p[1]) << '\n';
    }
}

inline void write_trajectories_jsonl(const std::filesystem::path& file,
                                     const std::vector<std::vector<TrajectoryRecord>>& paths,
                                     const std::vector<std::uint64_t>& indices, const std::string& hash) {
    std::ofstream os(file, std::ios::binary);
    os << "{\"manifest_hash\":\"" << hash << "\"}\n";
    for (std::size_t p = 0; p < paths.size(); ++p) {
        for (const auto& r : paths[p]) {
            os << "{\"path\":" << indices[p] << ",\"t\":" << fmt_double(r.t) << ",\"x\":" << fmt_double(r.x)
               << ",\"y_norm\":" << fmt_double(r.y_norm) << ",\"L\":" << fmt_double(r.L)
               << ",\"B_x\":" << fmt_double(r.B_x) << "}\n";
        }
    }
}

/// results.csv, paths.csv, curves/ and details.json (runtime is deliberately not written).
inline void write_outputs(const std::filesystem::path& dir, const EnsembleResult& res, const std::string& hash) {
    std::filesystem::create_directories(dir);
    write_results_csv(dir / "results.csv", res, hash);
    write_paths_csv(dir / "paths.csv", res, hash);
    write_curves(dir / "curves", res, hash);
    nlohmann::json j = {{"manifest_hash", hash},  {"experiment", res.experiment}, {"seed", res.seed},
                        {"details", res.details}, {"warnings", res.warnings},     {"path_errors", res.path_errors},
                        {"gate_failures", res.gate_failures}};
    std::ofstream(dir / "details.json", std::ios::binary) << j.dump(2) << '\n';
}

/// Per-path error table: path index and message.
inline void write_errors_csv(const std::filesystem::path& file, const EnsembleResult& res, const std::string& hash) {
    std::ofstream os(file, std::ios::binary);
    os << "# manifest_hash=" << hash << " seed=" << res.seed << "\n";
    os << "path,error\n";
    for (const auto& w : res.warnings) {
        if (w.rfind("path ", 0) != 0) continue;
        const auto colon = w.find(':');
        os << w.substr(5, colon - 5) << ',' << csv_field(w.substr(colon + 2)) << '\n';
    }
}

/// paths.csv, trajectories.jsonl and (on failures) errors.csv for a raw simulation.
inline void write_simulation_outputs(const std::filesystem::path& dir, const EnsembleResult& res,
                                     const std::string& hash) {
    std::filesystem::create_directories(dir);
    write_paths_csv(dir / "paths.csv", res, hash);
    std::vector<std::uint64_t> idx;
    for (const auto& r : res.paths) idx.push_back(r.index);
    write_trajectories_jsonl(dir / "trajectories.jsonl", res.trajectories, idx, hash);
    if (res.path_errors > 0) write_errors_csv(dir / "errors.csv", res, hash);
}

// ---------------------------------------------------------------------------
// Lyapunov diagnostics over an ensemble

struct GammaDiagnostics {
    double gamma = 0.0;
    double nu_limit = 0.0;  // s0 - 2 gamma c0
    DriftVerdict expected = DriftVerdict::inconclusive;
    DriftReport drift;
    SignThreshold sign;
    QvGrowth qv;
    QvBound qv_bound;

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = drift.to_json();
        j["expected_verdict"] = to_string(expected);
        j["nu_limit"] = nu_limit;
        j["nu_sign"] = sign.expected_sign;
        j["nu_threshold_x1"] = sign.x1 ? nlohmann::json(*sign.x1) : nlohmann::json(nullptr);
        j["qv"] = qv.to_json();
        j["qv_bound"] = qv_bound.to_json();
        return j;
    }
};

struct DiagnoseResult {
    std::vector<GammaDiagnostics> per_gamma;
    std::vector<std::string> gate_failures;
    std::size_t n_paths = 0;

    [[nodiscard]] nlohmann::json to_json(const std::string& hash, std::uint64_t seed) const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& g : per_gamma) arr.push_back(g.to_json());
        return {{"manifest_hash", hash}, {"seed", seed}, {"n_paths", n_paths}, {"diagnostics", arr},
                {"gate_failures", gate_failures}};
    }
};

/// Geometric grid x_from 2^{k/4} up to x_to, the abscissae for sign checks.
inline std::vector<double> sign_grid(double x_from, double x_to) {
    std::vector<double> g;
    for (int k = 0;; ++k) {
        const double x = x_from * std::pow(2.0, k / 4.0);
        if (x > x_to) break;
        g.push_back(x);
    }
    return g;
}

/// Drift verdicts, nu sign thresholds and QV growth for each configured gamma, on
/// already simulated trajectories. theta = gamma sigma^2 +- theta_margin, on the side
/// the drift sign of g predicts for that gamma.
inline DiagnoseResult diagnose_trajectories(const ExperimentConfig& cfg, const Model& model,
                                            const std::vector<std::vector<TrajectoryRecord>>& paths) {
    DiagnoseResult out;
    out.n_paths = paths.size();
    const double sigma_sq = model.cov.sigma_sq_limit();
    const double s0 = model.refl.axial_limit();
    const double c0 = model.refl.transverse_limit();
    const auto grid = sign_grid(1.0, 1e6);
    const auto dirs = axis_directions(cfg.profile.d);
    for (double gamma : cfg.gammas) {
        GammaDiagnostics gd;
        gd.gamma = gamma;
        gd.nu_limit = s0 - 2.0 * gamma * c0;
        const LyapunovConfig lc(model.profile, gamma);
        double theta = gamma * sigma_sq;
        if (gd.nu_limit < 0.0) {
            gd.expected = DriftVerdict::supermartingale;
            theta += cfg.theta_margin;
        } else if (gd.nu_limit > 0.0) {
            gd.expected = DriftVerdict::submartingale;
            theta -= cfg.theta_margin;
        }
        gd.drift = drift_check(paths, lc, theta, cfg.drift_level, cfg.drift_lag, cfg.min_segments);
        gd.sign = nu_sign_threshold(lc, model.refl, grid, dirs);
        gd.qv = qv_growth(paths, lc);
        gd.qv_bound = qv_bound_ratio(paths, lc);
        if (cfg.gate_verdicts && gd.drift.verdict != gd.expected) {
            out.gate_failures.push_back("gamma=" + detail::level_tag(gamma) + ": verdict " + to_string(gd.drift.verdict) +
                                        ", expected " + to_string(gd.expected));
        }
        if (cfg.gate_qv_max && !(gd.qv.exponent <= *cfg.gate_qv_max)) {
            out.gate_failures.push_back("gamma=" + detail::level_tag(gamma) + ": QV exponent " +
                                        std::to_string(gd.qv.exponent) + " above " + std::to_string(*cfg.gate_qv_max));
        }
        out.per_gamma.push_back(std::move(gd));
    }
    return out;
}

/// Simulate the configured ensemble with trajectory recording, then diagnose it.
inline DiagnoseResult run_diagnose(const ExperimentConfig& cfg, EnsembleResult* ensemble = nullptr) {
    if (cfg.step.record_stride == 0) throw std::invalid_argument("diagnose: [step] record_stride must be positive");
    EnsembleResult ens = exp_lln(cfg);
    DiagnoseResult out = diagnose_trajectories(cfg, cfg.build_model(), ens.trajectories);
    if (ens.path_errors > 0) out.gate_failures.push_back(std::to_string(ens.path_errors) + " path errors");
    if (ensemble) *ensemble = std::move(ens);
    return out;
}

}  // namespace horn
