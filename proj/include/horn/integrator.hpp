#pragma once

// Euler-Maruyama stepping for the obliquely reflected diffusion
//   dZ = Sigma^{1/2}(Z) dW + phi(Z) dL
// with push-back along phi evaluated at the nearest boundary foot, local-time
// bookkeeping, and passage-time tracking.

#include "horn/dynamics.hpp"
#include "horn/geometry.hpp"
#include "horn/random.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace horn {

/// Domain, covariance and reflection bundled; immutable and shared read-only by workers.
struct Model {
    DomainProfile profile;
    CovarianceSpec cov;
    ReflectionSpec refl;

    /// s0 sigma^2 / (2 c0) using the limiting projections of phi.
    [[nodiscard]] double clock_rate() const {
        return refl.axial_limit() * cov.sigma_sq_limit() / (2.0 * refl.transverse_limit());
    }
};

struct StepConfig {
    double dt_max = 1e-3;
    double eta = 0.01;
    double dt_min = 1e-14;
    double r_max = 1e6;
    double t_max = 1e3;
    int max_reflect_iters = 64;
    double lambda_tol = 1e-12;
    std::uint64_t record_stride = 0;  // 0 disables trajectory recording
    // When b(X) falls below this width (tail region only), the path continues on the
    // one-dimensional averaged equation dX = s0 sigma^2 / (2 c0 b(X)) dt + sqrt(Sigma_xx) dW.
    // 0 disables the handoff.
    double b_handoff = 0.0;
    double handoff_rel_step = 0.01;
    bool zero_noise = false;  // debug: xi == 0
    // Also charge local time for boundary contact between grid points: the maximum of the
    // Brownian bridge of the outward-normal increment is drawn, and the proposal is pushed
    // along phi by its excess over the distance to the wall. Exact for a flat wall and
    // constant Sigma; removes the O(sqrt(dt)) loss of local time of plain push-back.
    // Off: local time accrues only on steps whose proposal leaves D.
    bool bridge_local_time = false;
};

enum class PathStatus { running, reached_level, time_budget, exploded, error };

inline const char* to_string(PathStatus s) {
    switch (s) {
        case PathStatus::running: return "running";
        case PathStatus::reached_level: return "reached_level";
        case PathStatus::time_budget: return "time_budget";
        case PathStatus::exploded: return "exploded";
        case PathStatus::error: return "error";
    }
    return "unknown";
}

struct PathState {
    double t = 0.0;
    Point z;
    double L = 0.0;
    std::uint64_t steps = 0;
    PathStream rng;
    PathStatus status = PathStatus::running;

    std::uint64_t reflections = 0;
    std::uint64_t cusp_steps = 0;    // steps ending with X below the blend start
    std::uint64_t apex_pushes = 0;   // proposals with X < 0
    std::uint64_t averaged_steps = 0;
    bool averaged = false;           // true once the tail handoff has happened
    double handoff_time = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

struct TrajectoryRecord {
    double t;
    double x;
    double y_norm;
    double L;
    double B_x;
};

/// Passage times sigma_r for an ascending list of levels.
class PassageTracker {
public:
    PassageTracker() = default;
    explicit PassageTracker(std::vector<double> levels) : levels_(std::move(levels)), hits_(levels_.size()) {
        for (std::size_t i = 1; i < levels_.size(); ++i) {
            if (!(levels_[i] > levels_[i - 1])) throw std::invalid_argument("passage levels must be ascending");
        }
    }

    /// Geometric levels r0 2^k up to (and including the first level at or above) r_max.
    static PassageTracker geometric(double r0, double r_max) {
        std::vector<double> lv;
        for (double r = r0; ; r *= 2.0) {
            lv.push_back(std::min(r, r_max));
            if (r >= r_max) break;
        }
        return PassageTracker(std::move(lv));
    }

    void update(double x, double t) {
        while (next_ < levels_.size() && x >= levels_[next_]) hits_[next_++] = t;
    }

    [[nodiscard]] const std::vector<double>& levels() const { return levels_; }
    [[nodiscard]] const std::vector<std::optional<double>>& hit_times() const { return hits_; }
    [[nodiscard]] std::size_t levels_hit() const { return next_; }

    std::optional<double> tau_E_estimate;

private:
    std::vector<double> levels_;
    std::vector<std::optional<double>> hits_;
    std::size_t next_ = 0;
};

/// dt = min(dt_max, eta (b(x)/s_max)^2), floored at dt_min.
inline double adaptive_dt(const StepConfig& cfg, const DomainProfile& prof, const CovarianceSpec& cov,
                          const Point& z) {
    const double w = prof.b(z.x) / cov.root_op_norm_bound();
    return std::clamp(cfg.eta * w * w, cfg.dt_min, cfg.dt_max);
}

/// z* = z + sqrt(dt) Sigma^{1/2}(z) xi.
inline Point propose_step(const CovarianceSpec& cov, const Point& z, double dt, const Vec& xi) {
    Vec kick;
    cov.apply_root(z.x, xi, kick);
    const double s = std::sqrt(dt);
    return {z.x + s * kick(0), z.y + s * kick.tail(z.y.size())};
}

inline Point propose_step(const CovarianceSpec& cov, PathState& state, double dt) {
    Vec xi(state.z.y.size() + 1);
    for (auto& v : xi) v = state.rng.normal();
    return propose_step(cov, state.z, dt, xi);
}

struct ReflectionOutcome {
    Point z;
    double dL = 0.0;
    bool ok = true;
    int iterations = 0;
    std::string error;
};

/// Push an exterior proposal back into D along phi at the nearest boundary foot.
/// dL is the multiplier of phi, so the displacement added is dL * phi.
inline ReflectionOutcome resolve_reflection(const DomainProfile& prof, const ReflectionSpec& refl,
                                            const Point& z_from, const Point& z_star, const StepConfig& cfg) {
    (void)z_from;
    ReflectionOutcome out{z_star, 0.0, true, 0, {}};
    if (contains(prof, z_star)) return out;

    const int d = static_cast<int>(z_star.y.size());
    Point cur = z_star;
    // Signed excess |y| - b(x) - tol; negative means admitted. x < 0 is always outside.
    auto excess = [&](const Point& p) {
        if (p.x < 0.0) return std::max(-p.x, 1e-300) + p.y.norm();
        const double bx = prof.b(p.x);
        return p.y.norm() - bx - tol_boundary(bx);
    };
    for (int it = 0; it < cfg.max_reflect_iters; ++it) {
        out.iterations = it + 1;
        const BoundaryFoot foot = nearest_boundary(prof, cur);
        const Vec dir = phi(refl, prof, foot.x, foot.u);
        const Vec base = cur.ambient();
        auto at = [&](double lam) { return Point::from_ambient(base + lam * dir); };

        // Bracket the first admitted multiplier.
        const double f_cur = excess(cur);
        double lo = 0.0;
        double f_lo = f_cur;
        double hi = std::max(std::sqrt(foot.dist_sq), 1e-12);
        double f_hi = excess(at(hi));
        double best = hi, f_best = f_hi;
        int grow = 0;
        while (f_hi > 0.0 && grow < 60) {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = excess(at(hi));
            if (f_hi < f_best) {
                best = hi;
                f_best = f_hi;
            }
            ++grow;
        }
        if (f_hi > 0.0) {
            // The ray misses D (phi nearly tangent at a bulge of b). Move to the point of the
            // ray closest to D and retry with a fresh foot.
            double a = best / 2.0, c = std::min(2.0 * best, hi);
            for (int k = 0; k < 100 && (c - a) > cfg.lambda_tol * (1.0 + c); ++k) {
                const double m1 = a + (c - a) / 3.0, m2 = c - (c - a) / 3.0;
                if (excess(at(m1)) <= excess(at(m2))) {
                    c = m2;
                } else {
                    a = m1;
                }
            }
            const double lam = 0.5 * (a + c);
            if (!(excess(at(lam)) < f_cur)) break;
            cur = at(lam);
            out.dL += lam;
            continue;
        }
        // Illinois regula falsi, keeping hi admitted.
        int side = 0;
        for (int k = 0; k < 200 && (hi - lo) > cfg.lambda_tol; ++k) {
            double mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
            const double fm = excess(at(mid));
            if (fm <= 0.0) {
                hi = mid;
                f_hi = fm;
                if (side == -1) f_lo *= 0.5;
                side = -1;
            } else {
                lo = mid;
                f_lo = fm;
                if (side == 1) f_hi *= 0.5;
                side = 1;
            }
        }
        cur = at(hi);
        out.dL += hi;
        if (contains(prof, cur)) {
            out.z = cur;
            return out;
        }
    }
    out.ok = false;
    std::ostringstream os;
    os.precision(17);
    os << "reflection did not resolve after " << cfg.max_reflect_iters << " iterations; from x=" << z_from.x
       << " |y|=" << z_from.y.norm() << " proposal x=" << z_star.x << " |y|=" << z_star.y.norm()
       << " last x=" << cur.x << " |y|=" << cur.y.norm() << " b=" << prof.b(std::max(cur.x, 0.0))
       << " (d=" << d << ")";
    out.error = os.str();
    return out;
}

namespace detail {

inline void record(std::vector<TrajectoryRecord>* rec, const DomainProfile& prof, const PathState& s) {
    if (rec) rec->push_back({s.t, s.z.x, s.z.y.norm(), s.L, prof.B(std::max(s.z.x, 0.0))});
}

/// Bridge correction for one step from state.z to prop (modified in place). The wall is
/// the nearer sheet |y| = b(x) with the foot approximated at the current x. Returns the
/// local time charged; a uniform is drawn only within eight normal deviations of the wall.
inline double bridge_push(const Model& model, PathState& state, Point& prop, double bx, double dt,
                          double var_x, double var_perp) {
    const DomainProfile& prof = model.profile;
    const int d = prof.d();
    const double yn = state.z.y.norm();
    Vec u = Vec::Zero(d);
    if (yn > 0.0) {
        u = state.z.y / yn;
    } else {
        u(0) = 1.0;
    }
    const double bp = prof.eval(state.z.x).b1;
    const double s = 1.0 / std::hypot(1.0, bp);
    const double h0 = std::max(bx - yn, 0.0) * s;
    const double var_n = dt * s * s * (bp * bp * var_x + var_perp);
    if (!(h0 * h0 < 64.0 * var_n)) return 0.0;
    const double w = s * (-bp * (prop.x - state.z.x) + u.dot(prop.y - state.z.y));
    const double U = state.rng.uniform();
    const double M = 0.5 * (w + std::sqrt(w * w - 2.0 * var_n * std::log(U)));
    const double excess = M - h0;
    if (!(excess > 0.0)) return 0.0;
    const Vec f = phi(model.refl, prof, state.z.x, u);
    const double f_in = s * (bp * f(0) - f.tail(d).dot(u));  // inward normal component
    if (!(f_in > 0.0)) return 0.0;
    const double dL = excess / f_in;
    prop.x += dL * f(0);
    prop.y += dL * f.tail(d);
    return dL;
}

}  // namespace detail

/// Advance a running path until X >= r_max, t >= t_max, or an error.
inline PathState& advance_path(PathState& state, const Model& model, const StepConfig& cfg,
                               PassageTracker& tracker, std::vector<TrajectoryRecord>* records = nullptr) {
    const DomainProfile& prof = model.profile;
    const CovarianceSpec& cov = model.cov;
    const int d = prof.d();
    const double x_lo = prof.params().x_lo;
    const double x_hi = prof.params().x_hi;
    const double sigma_sq = cov.sigma_sq_limit();
    const double c0 = model.refl.transverse_limit();
    Vec xi = Vec::Zero(d + 1);
    Point prop = state.z;
    auto square = [](double v) { return v * v; };

    tracker.update(state.z.x, state.t);
    if (records && records->empty()) detail::record(records, prof, state);
    auto finish = [&](PathStatus st) {
        state.status = st;
        if (!records) return;
        if (state.steps == 0) {
            records->clear();  // a path that never moved has an empty trajectory
        } else if (cfg.record_stride > 0 && (records->empty() || records->back().t != state.t)) {
            detail::record(records, prof, state);
        }
    };

    while (state.status == PathStatus::running) {
        if (state.z.x >= cfg.r_max) {
            finish(PathStatus::reached_level);
            break;
        }
        if (state.t >= cfg.t_max) {
            finish(PathStatus::time_budget);
            break;
        }
        const double bx = prof.b(state.z.x);
        if (!state.averaged && cfg.b_handoff > 0.0 && state.z.x >= x_hi && bx < cfg.b_handoff) {
            state.averaged = true;
            state.handoff_time = state.t;
            state.z.y.setZero();
        }
        if (state.averaged) {
            const double drift = model.clock_rate() / bx;
            double dt = std::min(cfg.dt_max, cfg.handoff_rel_step * state.z.x / drift);
            dt = std::min(dt, cfg.t_max - state.t);
            const double noise = cfg.zero_noise ? 0.0 : state.rng.normal();
            state.z.x += drift * dt + std::sqrt(cov.axial_variance(state.z.x) * dt) * noise;
            state.z.x = std::max(state.z.x, x_hi);
            state.L += sigma_sq / (2.0 * c0 * bx) * dt;
            state.t += dt;
            ++state.steps;
            ++state.averaged_steps;
        } else {
            const double w = bx / cov.root_op_norm_bound();
            double dt = std::clamp(cfg.eta * w * w, cfg.dt_min, cfg.dt_max);
            dt = std::min(dt, cfg.t_max - state.t);
            if (!cfg.zero_noise) {
                for (int i = 0; i <= d; ++i) xi(i) = state.rng.normal();
            }
            const double sq = std::sqrt(dt);
            const double sx = std::sqrt(cov.axial_variance(state.z.x));
            const double sp = std::sqrt(cov.transverse_variance(state.z.x));
            prop.x = state.z.x + sq * sx * xi(0);
            prop.y = state.z.y + (sq * sp) * xi.tail(d);
            double bridge_dL = 0.0;
            if (cfg.bridge_local_time && state.z.x >= x_lo && !cfg.zero_noise) {
                bridge_dL = detail::bridge_push(model, state, prop, bx, dt, sx * sx, sp * sp);
            }
            bool inside = false;
            if (prop.x >= 0.0) {
                const double bp = prof.b(prop.x);
                inside = prop.y.squaredNorm() <= square(bp + tol_boundary(bp));
            } else {
                ++state.apex_pushes;
            }
            if (inside) {
                std::swap(state.z, prop);
                state.L += bridge_dL;
                if (bridge_dL > 0.0) ++state.reflections;
            } else {
                ReflectionOutcome res = resolve_reflection(prof, model.refl, state.z, prop, cfg);
                if (!res.ok) {
                    state.error = res.error;
                    finish(PathStatus::error);
                    break;
                }
                state.z = std::move(res.z);
                state.L += res.dL + bridge_dL;
                if (res.dL + bridge_dL > 0.0) ++state.reflections;
            }
            state.t += dt;
            if (state.z.x < x_lo) ++state.cusp_steps;
            ++state.steps;
        }
        tracker.update(state.z.x, state.t);
        if (records && cfg.record_stride > 0 && state.steps % cfg.record_stride == 0) {
            detail::record(records, prof, state);
        }
    }
    return state;
}

inline PathState start_path(const Point& z0, std::uint64_t seed, std::uint64_t path_index) {
    PathState s;
    s.z = z0;
    s.rng = PathStream(seed, path_index);
    return s;
}

struct ExplosionProbe {
    PassageTracker tracker;
    std::vector<double> increments;  // sigma_{r_{k+1}} - sigma_{r_k}
    bool converged = false;
    PathState final_state;
};

/// Passage times at geometric levels r0 2^k up to r_max; tau_E is estimated by sigma_{r_max}.
inline ExplosionProbe explosion_probe(const Model& model, StepConfig cfg, const Point& z0, double r0,
                                      std::uint64_t seed, std::uint64_t path_index, double conv_fraction = 0.02) {
    ExplosionProbe out;
    out.tracker = PassageTracker::geometric(r0, cfg.r_max);
    out.final_state = start_path(z0, seed, path_index);
    advance_path(out.final_state, model, cfg, out.tracker);
    const auto& hits = out.tracker.hit_times();
    for (std::size_t k = 0; k + 1 < hits.size(); ++k) {
        if (hits[k] && hits[k + 1]) out.increments.push_back(*hits[k + 1] - *hits[k]);
    }
    if (hits.back()) {
        out.tracker.tau_E_estimate = *hits.back();
        if (out.final_state.status == PathStatus::reached_level) out.final_state.status = PathStatus::exploded;
        const std::size_t n = out.increments.size();
        if (n >= 2) {
            out.converged = out.increments[n - 1] + out.increments[n - 2] < conv_fraction * *hits.back();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ensembles

struct PathResult {
    std::uint64_t index = 0;
    PathState state;
    PassageTracker tracker;
    std::vector<TrajectoryRecord> records;
};

struct EnsembleSpec {
    Point z0;
    std::size_t n_paths = 2;
    std::uint64_t seed = 0;
    std::vector<double> levels;
    unsigned threads = 1;
    std::uint64_t index_offset = 0;  // first path index; keeps streams of separate ensembles disjoint
};

/// Run independent paths over a worker pool. Results are stored by path index,
/// so output does not depend on the number of workers.
inline std::vector<PathResult> run_ensemble(const Model& model, const StepConfig& cfg, const EnsembleSpec& spec) {
    std::vector<PathResult> out(spec.n_paths);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= spec.n_paths) break;
            PathResult& r = out[i];
            r.index = spec.index_offset + i;
            r.tracker = PassageTracker(spec.levels);
            r.state = start_path(spec.z0, spec.seed, r.index);
            advance_path(r.state, model, cfg, r.tracker, cfg.record_stride > 0 ? &r.records : nullptr);
        }
    };
    const unsigned n_workers = std::max(1u, std::min<unsigned>(spec.threads, static_cast<unsigned>(spec.n_paths)));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }
    return out;
}

}  // namespace horn
