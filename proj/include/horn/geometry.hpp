#pragma once

// Horn-shaped domains D = {(x, y) : x >= 0, |y| <= b(x)} with a cusp profile near the
// apex, a power-law tail, and a C^2 log-space blend in between.

#include "horn/linalg.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace horn {

/// Quintic Hermite interpolant on [x0, x1] matching value, first and second
/// derivative at both ends.
class QuinticHermite {
public:
    QuinticHermite() = default;
    QuinticHermite(double x0, double x1, std::array<double, 3> left, std::array<double, 3> right)
        : x0_(x0), h_(x1 - x0) {
        const double p0 = left[0], v0 = left[1] * h_, a0 = left[2] * h_ * h_;
        const double p1 = right[0], v1 = right[1] * h_, a1 = right[2] * h_ * h_;
        const double dp = p1 - p0 - v0 - 0.5 * a0;
        const double dv = v1 - v0 - a0;
        const double da = a1 - a0;
        c_ = {p0, v0, 0.5 * a0, 10.0 * dp - 4.0 * dv + 0.5 * da, -15.0 * dp + 7.0 * dv - da,
              6.0 * dp - 3.0 * dv + 0.5 * da};
    }

    /// Value and first two derivatives with respect to x.
    [[nodiscard]] std::array<double, 3> eval(double x) const {
        const double t = (x - x0_) / h_;
        const double p = c_[0] + t * (c_[1] + t * (c_[2] + t * (c_[3] + t * (c_[4] + t * c_[5]))));
        const double dp = c_[1] + t * (2.0 * c_[2] + t * (3.0 * c_[3] + t * (4.0 * c_[4] + t * 5.0 * c_[5])));
        const double ddp = 2.0 * c_[2] + t * (6.0 * c_[3] + t * (12.0 * c_[4] + t * 20.0 * c_[5]));
        return {p, dp / h_, ddp / (h_ * h_)};
    }

    [[nodiscard]] const std::array<double, 6>& coefficients() const { return c_; }

private:
    double x0_ = 0.0;
    double h_ = 1.0;
    std::array<double, 6> c_{};
};

struct ProfileParams {
    int d = 1;
    double a0 = 1.0;
    double alpha_cusp = 0.5;
    double a_inf = 1.0;
    double beta = 0.0;
    double x_lo = 0.5;
    double x_hi = 2.0;
};

struct ProfileValue {
    double b = 0.0;
    double b1 = 0.0;  // b'
    double b2 = 0.0;  // b''
};

/// A point z = (x, y) with y in R^d.
struct Point {
    double x = 0.0;
    Vec y;

    Point() = default;
    Point(double x_, Vec y_) : x(x_), y(std::move(y_)) {}
    static Point on_axis(double x_, int d) { return {x_, Vec::Zero(d)}; }

    [[nodiscard]] double y_norm() const { return y.norm(); }
    [[nodiscard]] Vec ambient() const {
        Vec v(y.size() + 1);
        v(0) = x;
        v.tail(y.size()) = y;
        return v;
    }
    static Point from_ambient(const Vec& v) { return {v(0), v.tail(v.size() - 1)}; }
};

/// Boundary profile b. Immutable after construction and cheap to copy.
class DomainProfile {
public:
    explicit DomainProfile(const ProfileParams& p) : p_(p) {
        if (p.d < 1 || p.d > kMaxTransverse) {
            throw std::invalid_argument("profile: d must lie in [1, " + std::to_string(kMaxTransverse) + "]");
        }
        if (!(p.a0 > 0.0) || !(p.a_inf > 0.0)) throw std::invalid_argument("profile: a0 and a_inf must be positive");
        if (!(p.alpha_cusp > 0.0 && p.alpha_cusp <= 0.5)) {
            throw std::invalid_argument("profile: alpha_cusp must lie in (0, 1/2]");
        }
        if (!std::isfinite(p.beta)) throw std::invalid_argument("profile: beta must be finite");
        if (!(p.x_lo > 0.0 && p.x_lo < p.x_hi)) throw std::invalid_argument("profile: need 0 < x_lo < x_hi");

        const double l0 = std::log(p.a0) + p.alpha_cusp * std::log(p.x_lo);
        const double l1 = std::log(p.a_inf) + p.beta * std::log(p.x_hi);
        blend_ = QuinticHermite(p.x_lo, p.x_hi,
                                {l0, p.alpha_cusp / p.x_lo, -p.alpha_cusp / (p.x_lo * p.x_lo)},
                                {l1, p.beta / p.x_hi, -p.beta / (p.x_hi * p.x_hi)});
        tail_kind_ = classify_exponent(p.beta);
        B_lo_ = p.a0 * std::pow(p.x_lo, p.alpha_cusp + 1.0) / (p.alpha_cusp + 1.0);
        table_ = std::make_shared<const BlendTable>(build_table());
        B_hi_ = B_lo_ + table_->values.back();
    }

    [[nodiscard]] const ProfileParams& params() const { return p_; }
    [[nodiscard]] int d() const { return p_.d; }

    [[nodiscard]] double b(double x) const {
        if (x <= 0.0) return 0.0;
        if (x <= p_.x_lo) return p_.a0 * std::pow(x, p_.alpha_cusp);
        if (x >= p_.x_hi) return tail(x);
        return std::exp(blend_.eval(x)[0]);
    }

    /// b, b', b'' at x > 0.
    [[nodiscard]] ProfileValue eval(double x) const {
        if (!(x > 0.0)) throw std::domain_error("profile derivatives are undefined at x <= 0 (cusp)");
        if (x <= p_.x_lo) {
            const double a = p_.alpha_cusp;
            const double v = p_.a0 * std::pow(x, a);
            return {v, a * v / x, a * (a - 1.0) * v / (x * x)};
        }
        if (x >= p_.x_hi) {
            const double k = p_.beta;
            const double v = tail(x);
            return {v, k * v / x, k * (k - 1.0) * v / (x * x)};
        }
        const auto l = blend_.eval(x);
        const double v = std::exp(l[0]);
        return {v, v * l[1], v * (l[2] + l[1] * l[1])};
    }

    /// B(x) = int_0^x b(u) du.
    [[nodiscard]] double B(double x) const {
        if (x <= 0.0) return 0.0;
        if (x <= p_.x_lo) return p_.a0 * std::pow(x, p_.alpha_cusp + 1.0) / (p_.alpha_cusp + 1.0);
        if (x >= p_.x_hi) return B_hi_ + tail_integral(x);
        return B_lo_ + table_->interpolate(x, *this);
    }

    [[nodiscard]] bool B_finite_at_infinity() const { return p_.beta < -1.0; }

    /// B(infinity); +inf when the tail integral diverges.
    [[nodiscard]] double B_infinity() const {
        if (!B_finite_at_infinity()) return std::numeric_limits<double>::infinity();
        const double k = 1.0 + p_.beta;
        return B_hi_ + p_.a_inf * std::pow(p_.x_hi, k) / (-k);
    }

    [[nodiscard]] const QuinticHermite& blend() const { return blend_; }

private:
    enum class TailKind { zero, minus_one, minus_two, half, general };

    static TailKind classify_exponent(double k) {
        if (k == 0.0) return TailKind::zero;
        if (k == -1.0) return TailKind::minus_one;
        if (k == -2.0) return TailKind::minus_two;
        if (k == 0.5) return TailKind::half;
        return TailKind::general;
    }

    [[nodiscard]] double tail(double x) const {
        switch (tail_kind_) {
            case TailKind::zero: return p_.a_inf;
            case TailKind::minus_one: return p_.a_inf / x;
            case TailKind::minus_two: return p_.a_inf / (x * x);
            case TailKind::half: return p_.a_inf * std::sqrt(x);
            case TailKind::general: break;
        }
        return p_.a_inf * std::pow(x, p_.beta);
    }

    // int_{x_hi}^x a_inf u^beta du, written with expm1 so beta near -1 stays accurate.
    [[nodiscard]] double tail_integral(double x) const {
        const double k = 1.0 + p_.beta;
        const double log_ratio = std::log(x / p_.x_hi);
        const double scale = p_.a_inf * std::pow(p_.x_hi, k);
        if (std::abs(k * log_ratio) < 1e-300) return scale * log_ratio;
        if (k == 0.0) return scale * log_ratio;
        return scale * std::expm1(k * log_ratio) / k;
    }

    // Cumulative integral of b over the blend, tabulated on a uniform grid and
    // interpolated with quintic Hermite pieces using B' = b and B'' = b'.
    struct BlendTable {
        double x0 = 0.0;
        double h = 1.0;
        std::vector<double> values;

        [[nodiscard]] double interpolate(double x, const DomainProfile& prof) const {
            const auto n = static_cast<std::ptrdiff_t>(values.size()) - 1;
            auto k = static_cast<std::ptrdiff_t>((x - x0) / h);
            k = std::clamp<std::ptrdiff_t>(k, 0, n - 1);
            const double xa = x0 + static_cast<double>(k) * h;
            const double xb = (k + 1 == n) ? x0 + static_cast<double>(n) * h : xa + h;
            const auto ea = prof.eval(xa);
            const auto eb = prof.eval(xb);
            const QuinticHermite piece(xa, xb, {values[k], ea.b, ea.b1}, {values[k + 1], eb.b, eb.b1});
            return piece.eval(x)[0];
        }
    };

    [[nodiscard]] BlendTable build_table() const {
        constexpr int kIntervals = 128;
        BlendTable t;
        t.x0 = p_.x_lo;
        t.h = (p_.x_hi - p_.x_lo) / kIntervals;
        t.values.resize(kIntervals + 1, 0.0);
        auto f = [this](double u) { return std::exp(blend_.eval(u)[0]); };
        for (int k = 0; k < kIntervals; ++k) {
            const double a = t.x0 + k * t.h;
            const double b = (k + 1 == kIntervals) ? p_.x_hi : a + t.h;
            t.values[k + 1] =
                t.values[k] + boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 10, 1e-15);
        }
        return t;
    }

    ProfileParams p_;
    QuinticHermite blend_;
    TailKind tail_kind_ = TailKind::general;
    double B_lo_ = 0.0;
    double B_hi_ = 0.0;
    std::shared_ptr<const BlendTable> table_;
};

// ---------------------------------------------------------------------------
// Free-function surface

inline double eval_b(const DomainProfile& prof, double x) {
    if (x < 0.0) throw std::domain_error("eval_b: x must be >= 0");
    return prof.b(x);
}

/// (b'(x), b''(x)); throws at the cusp x = 0.
inline std::pair<double, double> eval_b_derivs(const DomainProfile& prof, double x) {
    const auto v = prof.eval(x);
    return {v.b1, v.b2};
}

inline double eval_B(const DomainProfile& prof, double x) {
    if (x < 0.0) throw std::domain_error("eval_B: x must be >= 0");
    return prof.B(x);
}

struct BetaAudit {
    double beta = 0.0;
    std::vector<std::pair<double, double>> sequence;  // (x, x b'(x) / b(x))
};

inline BetaAudit beta_exponent(const DomainProfile& prof, int grid_points = 40) {
    BetaAudit out{prof.params().beta, {}};
    double x = prof.params().x_hi;
    for (int k = 0; k < grid_points; ++k, x *= 2.0) {
        const auto v = prof.eval(x);
        out.sequence.emplace_back(x, x * v.b1 / v.b);
    }
    return out;
}

/// Tolerance used when admitting a point into the closed domain.
inline double tol_boundary(double b_at_x) { return 1e-12 * (1.0 + b_at_x); }

inline bool contains(const DomainProfile& prof, const Point& z) {
    if (z.x < 0.0) return false;
    const double bx = prof.b(z.x);
    return z.y.norm() <= bx + tol_boundary(bx);
}

/// Transverse direction of z, or e_1 on the axis.
inline Vec transverse_direction(const Vec& y) {
    const double r = y.norm();
    if (r > 0.0) return y / r;
    Vec u = Vec::Zero(y.size());
    u(0) = 1.0;
    return u;
}

inline void require_unit(const Vec& u) {
    if (std::abs(u.norm() - 1.0) > 1e-9) throw std::invalid_argument("direction u must be a unit vector");
}

/// Inward unit normal at the boundary point (x, u b(x)); e_x at the apex.
inline Vec inward_normal(const DomainProfile& prof, double x, const Vec& u) {
    require_unit(u);
    Vec n = Vec::Zero(u.size() + 1);
    if (x <= 0.0) {
        n(0) = 1.0;
        return n;
    }
    const double bp = prof.eval(x).b1;
    const double s = 1.0 / std::hypot(1.0, bp);
    n(0) = bp * s;
    n.tail(u.size()) = -u * s;
    return n;
}

/// Unit tangent at (x, u b(x)) pointing towards increasing x, in the plane of e_x and e_u.
inline Vec axial_tangent(const DomainProfile& prof, double x, const Vec& u) {
    require_unit(u);
    Vec t = Vec::Zero(u.size() + 1);
    if (x <= 0.0) {
        t.tail(u.size()) = u;
        return t;
    }
    const double bp = prof.eval(x).b1;
    const double s = 1.0 / std::hypot(1.0, bp);
    t(0) = s;
    t.tail(u.size()) = u * (bp * s);
    return t;
}

struct BoundaryFoot {
    double x = 0.0;        // boundary parameter x'
    Vec u;                 // transverse direction of the foot
    double dist_sq = 0.0;  // squared distance from the query point
};

namespace detail {

// Squared distance from (x, r) to the boundary point at parameter s along the ray u.
inline double foot_objective(const DomainProfile& prof, double x, double r, double s) {
    const double dx = x - s;
    const double dy = r - prof.b(s);
    return dx * dx + dy * dy;
}

// Golden-section minimisation on [lo, hi] after a coarse scan for the best cell.
inline double robust_foot(const DomainProfile& prof, double x, double r, double lo, double hi) {
    constexpr int kScan = 32;
    double best_s = lo;
    double best_h = foot_objective(prof, x, r, lo);
    int best_k = 0;
    const double step = (hi - lo) / kScan;
    for (int k = 1; k <= kScan; ++k) {
        const double s = (k == kScan) ? hi : lo + k * step;
        const double h = foot_objective(prof, x, r, s);
        if (h < best_h) {
            best_h = h;
            best_s = s;
            best_k = k;
        }
    }
    double a = lo + std::max(best_k - 1, 0) * step;
    double c = std::min(lo + (best_k + 1) * step, hi);
    constexpr double kInvPhi = 0.6180339887498949;
    double s1 = c - kInvPhi * (c - a);
    double s2 = a + kInvPhi * (c - a);
    double h1 = foot_objective(prof, x, r, s1);
    double h2 = foot_objective(prof, x, r, s2);
    for (int it = 0; it < 200 && (c - a) > 1e-15 * (1.0 + std::abs(c)); ++it) {
        if (h1 < h2) {
            c = s2;
            s2 = s1;
            h2 = h1;
            s1 = c - kInvPhi * (c - a);
            h1 = foot_objective(prof, x, r, s1);
        } else {
            a = s1;
            s1 = s2;
            h1 = h2;
            s2 = a + kInvPhi * (c - a);
            h2 = foot_objective(prof, x, r, s2);
        }
    }
    double s = (h1 < h2) ? s1 : s2;
    double hs = std::min(h1, h2);
    if (best_h < hs) {
        s = best_s;
        hs = best_h;
    }
    // Newton polish on the stationarity condition, accepted only when it improves.
    for (int it = 0; it < 4 && s > 0.0; ++it) {
        const auto v = prof.eval(s);
        const double g1 = -2.0 * (x - s) - 2.0 * (r - v.b) * v.b1;
        const double g2 = 2.0 + 2.0 * v.b1 * v.b1 - 2.0 * (r - v.b) * v.b2;
        if (!(g2 > 0.0)) break;
        const double cand = std::clamp(s - g1 / g2, lo, hi);
        if (!(cand > 0.0)) break;
        const double hc = foot_objective(prof, x, r, cand);
        if (!(hc <= hs)) break;
        s = cand;
        hs = hc;
    }
    return s;
}

// Safeguarded Newton on h'(s) = 0 inside [lo, hi]; returns NaN when the
// bracket does not certify a single interior minimum.
inline double newton_foot(const DomainProfile& prof, double x, double r, double lo, double hi) {
    if (!(lo > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    auto deriv = [&](double s) {
        const auto v = prof.eval(s);
        return std::array<double, 2>{-2.0 * (x - s) - 2.0 * (r - v.b) * v.b1,
                                     2.0 + 2.0 * v.b1 * v.b1 - 2.0 * (r - v.b) * v.b2};
    };
    const auto dlo = deriv(lo);
    const auto dhi = deriv(hi);
    if (!(dlo[0] < 0.0 && dhi[0] > 0.0 && dlo[1] > 0.0 && dhi[1] > 0.0)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double a = lo, c = hi;
    double s = std::clamp(x, lo, hi);
    for (int it = 0; it < 60; ++it) {
        const auto ds = deriv(s);
        if (!(ds[1] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        if (ds[0] < 0.0) a = s; else c = s;
        double next = s - ds[0] / ds[1];
        if (!(next > a && next < c)) next = 0.5 * (a + c);
        if (std::abs(next - s) <= 1e-15 * (1.0 + std::abs(s)) || (c - a) <= 1e-15 * (1.0 + std::abs(c))) {
            return next;
        }
        s = next;
    }
    return s;
}

}  // namespace detail

/// Nearest boundary point of a query point (inside or outside D).
inline BoundaryFoot nearest_boundary(const DomainProfile& prof, const Point& z) {
    const double r = z.y.norm();
    BoundaryFoot foot{z.x, transverse_direction(z.y), 0.0};
    double lo = 0.0;
    double hi = 0.0;
    if (z.x >= 0.0) {
        const double g = std::abs(r - prof.b(z.x));
        if (g == 0.0) return foot;
        // |x' - x| <= dist <= g, so this bracket always contains the minimiser.
        const double slack = g * (1.0 + 1e-9);
        lo = std::max(0.0, z.x - slack);
        hi = z.x + slack;
    } else {
        const double g = std::hypot(z.x, r);
        hi = z.x + g * (1.0 + 1e-9);
        if (!(hi > 0.0)) {
            foot.x = 0.0;
            foot.dist_sq = z.x * z.x + r * r;
            return foot;
        }
    }
    double s = detail::newton_foot(prof, z.x, r, lo, hi);
    if (!std::isfinite(s)) s = detail::robust_foot(prof, z.x, r, lo, hi);
    foot.x = s;
    foot.dist_sq = detail::foot_objective(prof, z.x, r, s);
    const double apex = z.x * z.x + r * r;
    if (lo == 0.0 && apex < foot.dist_sq) {
        foot.x = 0.0;
        foot.dist_sq = apex;
    }
    return foot;
}

/// inf over boundary points of |z - z'|^2.
inline double squared_distance(const DomainProfile& prof, const Point& z) {
    return nearest_boundary(prof, z).dist_sq;
}

// ---------------------------------------------------------------------------
// Assumption audit

struct AssumptionCheck {
    std::string name;
    std::string condition;
    bool pass = true;
    double worst_x = 0.0;
    double worst_value = 0.0;
};

struct AssumptionReport {
    std::vector<AssumptionCheck> checks;

    [[nodiscard]] bool all_pass() const {
        for (const auto& c : checks) {
            if (!c.pass) return false;
        }
        return true;
    }
    void append(const AssumptionReport& other) {
        checks.insert(checks.end(), other.checks.begin(), other.checks.end());
    }
};

/// Numerical audit of the domain assumptions D1/D2 on geometric grids.
inline AssumptionReport check_assumptions(const DomainProfile& prof) {
    AssumptionReport rep;
    const auto& p = prof.params();

    // D1: b(0) = 0, b > 0, liminf_{x->0} b b' > 0, b''/b'^3 has a limit in (-inf, 0].
    {
        AssumptionCheck c{"D1.positivity", "b(0) = 0 and b(x) > 0 for x > 0", prof.b(0.0) == 0.0, 0.0, prof.b(0.0)};
        for (double x = p.x_lo * std::pow(2.0, -40); x < 1e6; x *= 1.5) {
            const double v = prof.b(x);
            if (!(v > 0.0)) {
                c.pass = false;
                c.worst_x = x;
                c.worst_value = v;
                break;
            }
        }
        rep.checks.push_back(c);
    }
    {
        AssumptionCheck c{"D1.cusp", "liminf_{x->0} b(x) b'(x) > 0", true, 0.0, std::numeric_limits<double>::infinity()};
        AssumptionCheck c2{"D1.curvature", "lim_{x->0} b''(x)/b'(x)^3 exists in (-inf, 0]", true, 0.0, 0.0};
        std::vector<double> ratios;
        for (int k = 0; k <= 40; ++k) {
            const double x = p.x_lo * std::pow(2.0, -k);
            const auto v = prof.eval(x);
            const double bb = v.b * v.b1;
            if (bb < c.worst_value) {
                c.worst_value = bb;
                c.worst_x = x;
            }
            ratios.push_back(v.b2 / (v.b1 * v.b1 * v.b1));
        }
        c.pass = c.worst_value > 0.0;
        // Ratios must stay non-positive and settle monotonically near the apex.
        c2.worst_value = ratios.back();
        c2.worst_x = p.x_lo * std::pow(2.0, -40);
        for (double q : ratios) {
            if (!(q <= 1e-12) || !std::isfinite(q)) c2.pass = false;
        }
        const std::size_t n = ratios.size();
        bool inc = true, dec = true;
        for (std::size_t i = n - 10; i + 1 < n; ++i) {
            inc = inc && ratios[i + 1] >= ratios[i] - 1e-15;
            dec = dec && ratios[i + 1] <= ratios[i] + 1e-15;
        }
        if (!(inc || dec)) c2.pass = false;
        rep.checks.push_back(c);
        rep.checks.push_back(c2);
    }

    // D2: b', b'', b b'' -> 0 along a geometric grid, and beta < 1.
    {
        std::vector<double> xs;
        for (double x = std::max(p.x_hi, 1.0); xs.size() < 60; x *= 2.0) xs.push_back(x);
        struct Seq {
            const char* name;
            const char* cond;
            double (*f)(const ProfileValue&);
        };
        const Seq seqs[] = {
            {"D2.b1", "lim_{x->inf} b'(x) = 0", [](const ProfileValue& v) { return std::abs(v.b1); }},
            {"D2.b2", "lim_{x->inf} b''(x) = 0", [](const ProfileValue& v) { return std::abs(v.b2); }},
            {"D2.bb2", "lim_{x->inf} b(x) b''(x) = 0", [](const ProfileValue& v) { return std::abs(v.b * v.b2); }},
        };
        for (const auto& s : seqs) {
            AssumptionCheck c{s.name, s.cond, true, xs.back(), 0.0};
            std::vector<double> vals;
            for (double x : xs) vals.push_back(s.f(prof.eval(x)));
            c.worst_value = vals.back();
            c.pass = vals.back() < 1e-6 && std::isfinite(vals.back());
            for (std::size_t i = vals.size() / 2; i + 1 < vals.size(); ++i) {
                if (vals[i + 1] > vals[i] * (1.0 + 1e-12) + 1e-300) {
                    c.pass = false;
                    c.worst_x = xs[i + 1];
                    c.worst_value = vals[i + 1];
                    break;
                }
            }
            rep.checks.push_back(c);
        }
        const auto audit = beta_exponent(prof, 60);
        AssumptionCheck c{"D2.beta", "beta < 1", true, 0.0, -std::numeric_limits<double>::infinity()};
        for (std::size_t i = audit.sequence.size() / 2; i < audit.sequence.size(); ++i) {
            if (audit.sequence[i].second > c.worst_value) {
                c.worst_value = audit.sequence[i].second;
                c.worst_x = audit.sequence[i].first;
            }
        }
        c.pass = c.worst_value < 1.0 && audit.beta < 1.0;
        rep.checks.push_back(c);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// b/B growth relations used by the strong-law argument

/// Midpoint of the admissible range (1, min(2, 2/(1+beta))) for the exponent delta.
inline double default_growth_delta(double beta) {
    const double upper = (beta > -1.0) ? std::min(2.0, 2.0 / (1.0 + beta)) : 2.0;
    return 0.5 * (1.0 + upper);
}

/// Smallest C with b(x)^2 <= C (1 + B(x)^{2-delta}) on a geometric grid over [x_from, x_to].
inline double growth_constant_fit(const DomainProfile& prof, double delta, double x_from, double x_to,
                                  int points_per_decade) {
    const double decades = std::log10(x_to / x_from);
    const int n = static_cast<int>(std::ceil(decades * points_per_decade));
    double c = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double x = x_from * std::pow(10.0, decades * k / n);
        const double b = prof.b(x);
        c = std::max(c, b * b / (1.0 + std::pow(prof.B(x), 2.0 - delta)));
    }
    return c;
}

/// B(x + omega b(x)) / B(x).
inline double shifted_B_ratio(const DomainProfile& prof, double x, double omega) {
    return prof.B(std::max(0.0, x + omega * prof.b(x))) / prof.B(x);
}

inline std::string describe(const ProfileParams& p) {
    std::ostringstream os;
    os << "d=" << p.d << " a0=" << p.a0 << " alpha=" << p.alpha_cusp << " a_inf=" << p.a_inf
       << " beta=" << p.beta << " blend=[" << p.x_lo << "," << p.x_hi << "]";
    return os.str();
}

}  // namespace horn
