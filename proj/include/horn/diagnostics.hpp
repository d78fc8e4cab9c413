#pragma once

// Lyapunov diagnostics built on g(x, y) = x + gamma |y|^2 / bt(x), where bt is b
// smoothed near the apex, plus statistical drift and quadratic-variation checks
// on recorded trajectories.

#include "horn/dynamics.hpp"
#include "horn/geometry.hpp"
#include "horn/integrator.hpp"
#include "horn/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace horn {

/// gamma together with the smoothed profile bt: constant b(1) for x <= 1/2, a C^2
/// log-space blend on [1/2, 1], and b itself for x > 1.
class LyapunovConfig {
public:
    LyapunovConfig(const DomainProfile& prof, double gamma) : prof_(prof), gamma_(gamma) {
        const ProfileValue at1 = prof.eval(1.0);
        b1_ = at1.b;
        const double l1 = at1.b1 / at1.b;
        const double l2 = at1.b2 / at1.b - l1 * l1;
        blend_ = QuinticHermite(0.5, 1.0, {std::log(b1_), 0.0, 0.0}, {std::log(at1.b), l1, l2});
    }

    [[nodiscard]] double gamma() const { return gamma_; }
    [[nodiscard]] const DomainProfile& profile() const { return prof_; }

    /// bt, bt', bt''.
    [[nodiscard]] ProfileValue b_tilde(double x) const {
        if (x > 1.0) return prof_.eval(x);
        if (x <= 0.5) return {b1_, 0.0, 0.0};
        const auto l = blend_.eval(x);
        const double v = std::exp(l[0]);
        return {v, v * l[1], v * (l[2] + l[1] * l[1])};
    }

private:
    DomainProfile prof_;
    double gamma_;
    double b1_ = 1.0;
    QuinticHermite blend_;
};

inline double g_eval(const LyapunovConfig& cfg, double x, double r_sq) {
    return x + cfg.gamma() * r_sq / cfg.b_tilde(x).b;
}

inline double g_eval(const LyapunovConfig& cfg, const Point& z) { return g_eval(cfg, z.x, z.y.squaredNorm()); }

inline Vec grad_g(const LyapunovConfig& cfg, const Point& z) {
    const int d = static_cast<int>(z.y.size());
    const ProfileValue bt = cfg.b_tilde(z.x);
    const double gm = cfg.gamma();
    Vec gr(d + 1);
    gr(0) = 1.0 - gm * bt.b1 * z.y.squaredNorm() / (bt.b * bt.b);
    gr.tail(d) = (2.0 * gm / bt.b) * z.y;
    return gr;
}

inline Mat hessian_g(const LyapunovConfig& cfg, const Point& z) {
    const int d = static_cast<int>(z.y.size());
    const ProfileValue bt = cfg.b_tilde(z.x);
    const double gm = cfg.gamma();
    const double b = bt.b;
    Mat h = Mat::Zero(d + 1, d + 1);
    h(0, 0) = gm * (2.0 * bt.b1 * bt.b1 / (b * b * b) - bt.b2 / (b * b)) * z.y.squaredNorm();
    for (int i = 0; i < d; ++i) {
        const double off = -2.0 * gm * bt.b1 * z.y(i) / (b * b);
        h(0, i + 1) = off;
        h(i + 1, 0) = off;
        h(i + 1, i + 1) = 2.0 * gm / b;
    }
    return h;
}

/// trace(H_g Sigma).
inline double delta_sigma_g(const LyapunovConfig& cfg, const CovarianceSpec& cov, const Point& z) {
    return (hessian_g(cfg, z) * cov.matrix(z.x)).trace();
}

/// <phi, grad g> at the boundary point (x, u b(x)).
inline double nu_eval(const LyapunovConfig& cfg, const ReflectionSpec& refl, double x, const Vec& u) {
    require_unit(u);
    const Point p{x, u * cfg.profile().b(x)};
    return phi(refl, cfg.profile(), x, u).dot(grad_g(cfg, p));
}

/// (1/2) [ b(g) Delta_Sigma g + b'(g) |Sigma^{1/2} grad g|^2 ].
inline double mu_eval(const LyapunovConfig& cfg, const CovarianceSpec& cov, const Point& z) {
    const double g = g_eval(cfg, z);
    const ProfileValue bg = cfg.profile().eval(g);
    const Vec gr = grad_g(cfg, z);
    const double quad = gr.dot(cov.matrix(z.x) * gr);
    return 0.5 * (bg.b * delta_sigma_g(cfg, cov, z) + bg.b1 * quad);
}

/// Smallest grid abscissa x1 such that nu has the sign of s0 - 2 gamma c0 at every grid
/// point >= x1 and every sampled direction. Empty if the sign fails at the last point.
struct SignThreshold {
    int expected_sign = 0;  // -1, 0 or +1
    std::optional<double> x1;
    double worst_x = 0.0;   // largest grid x violating the sign
    std::size_t grid_points = 0;
};

inline SignThreshold nu_sign_threshold(const LyapunovConfig& cfg, const ReflectionSpec& refl,
                                       const std::vector<double>& grid, const std::vector<Vec>& dirs) {
    SignThreshold out;
    const double lim = refl.axial_limit() - 2.0 * cfg.gamma() * refl.transverse_limit();
    out.expected_sign = lim > 0.0 ? 1 : (lim < 0.0 ? -1 : 0);
    out.grid_points = grid.size();
    if (out.expected_sign == 0 || grid.empty()) return out;
    std::optional<std::size_t> last_bad;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (const Vec& u : dirs) {
            const double nu = nu_eval(cfg, refl, grid[i], u);
            if (nu * out.expected_sign < 0.0) {
                last_bad = i;
                break;
            }
        }
    }
    if (!last_bad) {
        out.x1 = grid.front();
    } else {
        out.worst_x = grid[*last_bad];
        if (*last_bad + 1 < grid.size()) out.x1 = grid[*last_bad + 1];
    }
    return out;
}

/// Coordinate directions +-e_i in R^d, the sampled u for sign checks.
inline std::vector<Vec> axis_directions(int d) {
    std::vector<Vec> dirs;
    for (int i = 0; i < d; ++i) {
        for (double s : {1.0, -1.0}) {
            Vec u = Vec::Zero(d);
            u(i) = s;
            dirs.push_back(u);
        }
    }
    return dirs;
}

// ---------------------------------------------------------------------------
// Statistical checks on recorded paths

enum class DriftVerdict { supermartingale, submartingale, inconclusive };

inline const char* to_string(DriftVerdict v) {
    switch (v) {
        case DriftVerdict::supermartingale: return "consistent-with-supermartingale";
        case DriftVerdict::submartingale: return "consistent-with-submartingale";
        case DriftVerdict::inconclusive: return "inconclusive";
    }
    return "unknown";
}

struct DriftReport {
    double gamma = 0.0;
    double theta = 0.0;
    double level = 0.0;
    std::size_t lag = 0;
    DriftVerdict verdict = DriftVerdict::inconclusive;
    double mean_increment = 0.0;
    double stderr_ = 0.0;
    double z_score = 0.0;
    std::size_t n_segments = 0;  // number of non-overlapping increments used
    std::size_t n_excursions = 0;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"gamma", gamma},       {"theta", theta},   {"level", level},
                {"lag", lag},           {"verdict", to_string(verdict)},
                {"mean_increment", mean_increment},         {"stderr", stderr_},
                {"z_score", z_score},   {"n_segments", n_segments},
                {"n_excursions", n_excursions}};
    }
};

/// One-sided 3-sigma verdict on a set of increments.
inline DriftReport drift_verdict(const std::vector<double>& inc, std::size_t min_segments, double sigmas = 3.0) {
    DriftReport rep;
    rep.n_segments = inc.size();
    if (inc.size() < std::max<std::size_t>(min_segments, 2)) return rep;
    double mean = 0.0;
    for (double v : inc) mean += v;
    mean /= static_cast<double>(inc.size());
    double ss = 0.0;
    for (double v : inc) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(inc.size() - 1));
    rep.mean_increment = mean;
    rep.stderr_ = sd / std::sqrt(static_cast<double>(inc.size()));
    rep.z_score = rep.stderr_ > 0.0 ? mean / rep.stderr_ : 0.0;
    if (rep.z_score < -sigmas) {
        rep.verdict = DriftVerdict::supermartingale;
    } else if (rep.z_score > sigmas) {
        rep.verdict = DriftVerdict::submartingale;
    }
    return rep;
}

/// Non-overlapping increments of B(kappa_t) - theta t over `lag` records, taken inside
/// excursions where kappa = g(Z) stays at or above `level`.
inline std::vector<double> drift_increments(const std::vector<std::vector<TrajectoryRecord>>& paths,
                                            const LyapunovConfig& cfg, double theta, double level,
                                            std::size_t lag, std::size_t* n_excursions = nullptr) {
    std::vector<double> inc;
    std::size_t exc = 0;
    const DomainProfile& prof = cfg.profile();
    for (const auto& recs : paths) {
        bool inside = false;
        std::vector<double> zeta;
        auto flush = [&] {
            if (zeta.size() > lag) ++exc;
            for (std::size_t j = 0; j + lag < zeta.size(); j += lag) inc.push_back(zeta[j + lag] - zeta[j]);
            zeta.clear();
        };
        for (const TrajectoryRecord& r : recs) {
            const double kappa = g_eval(cfg, r.x, r.y_norm * r.y_norm);
            if (kappa >= level) {
                inside = true;
                zeta.push_back(prof.B(kappa) - theta * r.t);
            } else if (inside) {
                inside = false;
                flush();
            }
        }
        if (inside) flush();
    }
    if (n_excursions) *n_excursions = exc;
    return inc;
}

inline DriftReport drift_check(const std::vector<std::vector<TrajectoryRecord>>& paths, const LyapunovConfig& cfg,
                               double theta, double level, std::size_t lag = 10, std::size_t min_segments = 30) {
    std::size_t exc = 0;
    const auto inc = drift_increments(paths, cfg, theta, level, lag, &exc);
    DriftReport rep = drift_verdict(inc, min_segments);
    rep.gamma = cfg.gamma();
    rep.theta = theta;
    rep.level = level;
    rep.lag = lag;
    rep.n_excursions = exc;
    return rep;
}

/// Control: the same increments with signs flipped by a fair coin.
inline std::vector<double> sign_shuffled(const std::vector<double>& inc, std::uint64_t seed) {
    PathStream rng(seed, 0);
    std::vector<double> out(inc);
    for (double& v : out) {
        if (rng.uniform() < 0.5) v = -v;
    }
    return out;
}

/// Realized quadratic variation of B(kappa) along each path at its record times.
inline std::vector<std::vector<double>> realized_qv(const std::vector<std::vector<TrajectoryRecord>>& paths,
                                                    const LyapunovConfig& cfg) {
    std::vector<std::vector<double>> out;
    out.reserve(paths.size());
    for (const auto& recs : paths) {
        std::vector<double> qv(recs.size(), 0.0);
        double prev = 0.0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const double v = cfg.profile().B(g_eval(cfg, recs[i].x, recs[i].y_norm * recs[i].y_norm));
            if (i > 0) qv[i] = qv[i - 1] + (v - prev) * (v - prev);
            prev = v;
        }
        out.push_back(std::move(qv));
    }
    return out;
}

struct QvGrowth {
    double exponent = std::numeric_limits<double>::quiet_NaN();
    double fit_lo = 0.0;
    double fit_hi = 0.0;
    double qv_final = 0.0;  // ensemble mean QV at fit_hi
    std::vector<std::array<double, 2>> curve;  // (t, mean QV) on the fit grid

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"qv_exponent", exponent}, {"fit_range", {fit_lo, fit_hi}}, {"qv_final", qv_final}};
    }
};

namespace detail {

inline double interp_at(const std::vector<TrajectoryRecord>& recs, const std::vector<double>& v, double t) {
    if (recs.empty()) return 0.0;
    if (t <= recs.front().t) return v.front();
    if (t >= recs.back().t) return v.back();
    const auto it = std::lower_bound(recs.begin(), recs.end(), t,
                                     [](const TrajectoryRecord& r, double s) { return r.t < s; });
    const std::size_t j = static_cast<std::size_t>(it - recs.begin());
    const double t0 = recs[j - 1].t, t1 = recs[j].t;
    const double w = t1 > t0 ? (t - t0) / (t1 - t0) : 1.0;
    return v[j - 1] + w * (v[j] - v[j - 1]);
}

}  // namespace detail

/// Least-squares slope of log E[QV]_t against log t over the last decade of t.
inline QvGrowth qv_growth(const std::vector<std::vector<TrajectoryRecord>>& paths, const LyapunovConfig& cfg,
                          int grid_points = 21) {
    QvGrowth out;
    const auto qv = realized_qv(paths, cfg);
    double t_end = std::numeric_limits<double>::infinity();
    for (const auto& r : paths) {
        if (!r.empty()) t_end = std::min(t_end, r.back().t);
    }
    if (!std::isfinite(t_end) || !(t_end > 0.0)) return out;
    out.fit_hi = t_end;
    out.fit_lo = t_end / 10.0;
    std::vector<double> lx, ly;
    for (int k = 0; k < grid_points; ++k) {
        const double t = out.fit_lo * std::pow(10.0, static_cast<double>(k) / (grid_points - 1));
        double m = 0.0;
        for (std::size_t p = 0; p < paths.size(); ++p) m += detail::interp_at(paths[p], qv[p], t);
        m /= static_cast<double>(paths.size());
        out.curve.push_back({t, m});
        if (m > 0.0) {
            lx.push_back(std::log(t));
            ly.push_back(std::log(m));
        }
    }
    out.qv_final = out.curve.back()[1];
    if (lx.size() >= 2) {
        const double n = static_cast<double>(lx.size());
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sx += lx[i];
            sy += ly[i];
            sxx += lx[i] * lx[i];
            sxy += lx[i] * ly[i];
        }
        out.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    return out;
}

/// Per-path ratio of realized QV of B(kappa) to int b(g(Z_s))^2 ds (trapezoid over records).
struct QvBound {
    std::vector<double> ratios;
    double c_fit = 0.0;        // max over all paths
    double c_first_half = 0.0;  // max over the first half of the paths

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"qv_bound_constant", c_fit}, {"qv_bound_constant_half", c_first_half}, {"n_paths", ratios.size()}};
    }
};

inline QvBound qv_bound_ratio(const std::vector<std::vector<TrajectoryRecord>>& paths, const LyapunovConfig& cfg) {
    QvBound out;
    const auto qv = realized_qv(paths, cfg);
    for (std::size_t p = 0; p < paths.size(); ++p) {
        const auto& recs = paths[p];
        if (recs.size() < 2) continue;
        double integral = 0.0;
        double prev = 0.0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const double bg = cfg.profile().b(g_eval(cfg, recs[i].x, recs[i].y_norm * recs[i].y_norm));
            const double cur = bg * bg;
            if (i > 0) integral += 0.5 * (cur + prev) * (recs[i].t - recs[i - 1].t);
            prev = cur;
        }
        if (integral > 0.0) out.ratios.push_back(qv[p].back() / integral);
    }
    for (std::size_t i = 0; i < out.ratios.size(); ++i) {
        out.c_fit = std::max(out.c_fit, out.ratios[i]);
        if (i < out.ratios.size() / 2) out.c_first_half = std::max(out.c_first_half, out.ratios[i]);
    }
    return out;
}

}  // namespace horn
