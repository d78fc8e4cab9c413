#pragma once

// Interior covariance Sigma(z) and the oblique reflection field phi on the boundary.

#include "horn/geometry.hpp"
#include "horn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace horn {

/// Entry function a + c / (shift + x): bounded, Lipschitz, with limit a.
struct RationalEntry {
    double a = 1.0;
    double c = 0.0;
    double shift = 1.0;

    [[nodiscard]] double operator()(double x) const { return a + c / (shift + std::max(x, 0.0)); }
    [[nodiscard]] double sup() const { return c > 0.0 ? a + c / shift : a; }
    [[nodiscard]] double inf() const { return c < 0.0 ? a + c / shift : a; }
};

enum class CovarianceKind { isotropic, diagonal_profile };

struct CovarianceParams {
    CovarianceKind kind = CovarianceKind::isotropic;
    double v = 1.0;             // isotropic: Sigma = v^2 I
    RationalEntry axial{};      // diagonal_profile: sigma_x^2(x)
    RationalEntry transverse{}; // diagonal_profile: sigma_perp^2(x), shared by all d components
    double delta = 0.0;         // asserted ellipticity bound; 0 means "derive from the entries"
};

/// Sigma(z) = diag(sigma_x^2(x), sigma_perp^2(x) I_d); isotropic is the constant special case.
class CovarianceSpec {
public:
    CovarianceSpec(const CovarianceParams& p, int d) : p_(p), d_(d) {
        if (d < 1 || d > kMaxTransverse) throw std::invalid_argument("covariance: bad dimension");
        if (p.kind == CovarianceKind::isotropic) {
            if (!(p.v > 0.0)) throw std::invalid_argument("covariance: v must be positive");
            p_.axial = {p.v * p.v, 0.0, 1.0};
            p_.transverse = {p.v * p.v, 0.0, 1.0};
        }
        if (!(p_.axial.shift > 0.0) || !(p_.transverse.shift > 0.0)) {
            throw std::invalid_argument("covariance: entry shift must be positive");
        }
        const double lower = std::min(p_.axial.inf(), p_.transverse.inf());
        if (!(lower > 0.0)) throw std::invalid_argument("covariance: Sigma is not uniformly elliptic");
        delta_ = (p.delta > 0.0) ? p.delta : lower;
        if (delta_ > lower * (1.0 + 1e-12)) {
            throw std::invalid_argument("covariance: asserted ellipticity bound " + std::to_string(delta_) +
                                        " exceeds the smallest eigenvalue " + std::to_string(lower));
        }
        // Sampled ellipticity audit on a grid, in addition to the closed-form bound.
        for (double x = 0.0; x < 1e7; x = (x == 0.0) ? 1e-3 : x * 2.0) {
            if (std::min(p_.axial(x), p_.transverse(x)) < delta_ * (1.0 - 1e-12)) {
                throw std::invalid_argument("covariance: ellipticity violated at x = " + std::to_string(x));
            }
        }
        op_norm_ = std::max(p_.axial.sup(), p_.transverse.sup());
        s_max_ = std::sqrt(op_norm_);
        sigma_sq_ = d_ * p_.transverse.a;
        if (is_constant()) {
            const Mat s = matrix(0.0);
            constant_root_ = symmetric_sqrt(s);
        }
    }

    [[nodiscard]] const CovarianceParams& params() const { return p_; }
    [[nodiscard]] int d() const { return d_; }
    [[nodiscard]] double delta() const { return delta_; }
    /// sigma^2, the limit of trace Sigma - e_x' Sigma e_x.
    [[nodiscard]] double sigma_sq_limit() const { return sigma_sq_; }
    /// sup_z |Sigma(z)|_op and sup_z |Sigma^{1/2}(z)|_op.
    [[nodiscard]] double op_norm_bound() const { return op_norm_; }
    [[nodiscard]] double root_op_norm_bound() const { return s_max_; }
    [[nodiscard]] bool is_constant() const { return p_.axial.c == 0.0 && p_.transverse.c == 0.0; }

    [[nodiscard]] double axial_variance(double x) const { return p_.axial(x); }
    [[nodiscard]] double transverse_variance(double x) const { return p_.transverse(x); }

    [[nodiscard]] Mat matrix(double x) const {
        Mat s = Mat::Zero(d_ + 1, d_ + 1);
        s(0, 0) = p_.axial(x);
        for (int i = 1; i <= d_; ++i) s(i, i) = p_.transverse(x);
        return s;
    }
    [[nodiscard]] Mat matrix(const Point& z) const { return matrix(z.x); }

    /// out = Sigma^{1/2}(z) xi without forming the root (diagonal family).
    void apply_root(double x, const Vec& xi, Vec& out) const {
        const double sx = std::sqrt(p_.axial(x));
        const double sp = (p_.transverse.c == 0.0) ? root_perp_const() : std::sqrt(p_.transverse(x));
        out.resize(xi.size());
        out(0) = sx * xi(0);
        out.tail(d_) = sp * xi.tail(d_);
    }

    [[nodiscard]] const Mat& constant_root() const { return constant_root_; }

private:
    [[nodiscard]] double root_perp_const() const { return std::sqrt(p_.transverse.a); }

    CovarianceParams p_;
    int d_;
    double delta_ = 0.0;
    double op_norm_ = 0.0;
    double s_max_ = 0.0;
    double sigma_sq_ = 0.0;
    Mat constant_root_;
};

/// Symmetric square root of Sigma(z).
inline Mat sigma_sqrt(const CovarianceSpec& spec, const Point& z) {
    if (spec.is_constant()) return spec.constant_root();
    return symmetric_sqrt(spec.matrix(z));
}

/// sup over a transverse grid of |trace Sigma - Sigma_xx - sigma^2| at axial position x.
inline double sigma_trace_gap(const CovarianceSpec& spec, const DomainProfile& prof, double x) {
    const double bx = prof.b(x);
    double gap = 0.0;
    for (int k = 0; k <= 8; ++k) {
        Point z = Point::on_axis(x, spec.d());
        z.y(0) = bx * k / 8.0;
        const Mat s = spec.matrix(z);
        gap = std::max(gap, std::abs(s.trace() - s(0, 0) - spec.sigma_sq_limit()));
    }
    return gap;
}

// ---------------------------------------------------------------------------
// Reflection field

enum class FieldKind {
    rotated,   // phi = c0 n + s0 t: projections on e_x and -e_u tend to (s0, c0)
    additive,  // phi = n + s0 e_x - c0 e_u: projections tend to (s0, 1 + c0)
};

struct ReflectionParams {
    double s0 = 1.0;
    double c0 = 1.0;
    FieldKind field = FieldKind::rotated;
};

class ReflectionSpec {
public:
    explicit ReflectionSpec(const ReflectionParams& p) : p_(p) {
        if (!(p.s0 > 0.0) || !(p.c0 > 0.0)) throw std::invalid_argument("reflection: s0 and c0 must be positive");
    }

    [[nodiscard]] const ReflectionParams& params() const { return p_; }
    [[nodiscard]] double s0() const { return p_.s0; }
    [[nodiscard]] double c0() const { return p_.c0; }
    [[nodiscard]] FieldKind field() const { return p_.field; }

    /// Limits of <phi, e_x> and <phi, -e_u> as x -> infinity.
    [[nodiscard]] double axial_limit() const { return p_.s0; }
    [[nodiscard]] double transverse_limit() const {
        return p_.field == FieldKind::rotated ? p_.c0 : 1.0 + p_.c0;
    }
    /// Reflection angle alpha with tan(alpha) = axial_limit / transverse_limit.
    [[nodiscard]] double alpha_angle() const { return std::atan2(axial_limit(), transverse_limit()); }
    /// sup |phi| over the boundary.
    [[nodiscard]] double norm_bound() const { return 1.0 + p_.s0 + p_.c0; }

private:
    ReflectionParams p_;
};

/// phi_x(u) at the boundary point (x, u b(x)); e_x at the apex.
inline Vec phi(const ReflectionSpec& refl, const DomainProfile& prof, double x, const Vec& u) {
    require_unit(u);
    const Eigen::Index d = u.size();
    Vec out = Vec::Zero(d + 1);
    if (x <= 0.0) {
        out(0) = 1.0;
        return out;
    }
    const double bp = prof.eval(x).b1;
    const double s = 1.0 / std::hypot(1.0, bp);
    if (refl.field() == FieldKind::rotated) {
        // c0 (b', -u) s + s0 (1, b' u) s
        out(0) = (refl.c0() * bp + refl.s0()) * s;
        out.tail(d) = u * ((refl.s0() * bp - refl.c0()) * s);
    } else {
        out(0) = bp * s + refl.s0();
        out.tail(d) = -u * (s + refl.c0());
    }
    return out;
}

/// Grid checks of covariance ellipticity and boundedness, a bounded field with positive
/// normal component, and the variance and projection limits (s0, c0 in (0, inf)).
inline AssumptionReport check_dynamics(const CovarianceSpec& cov, const ReflectionParams& rp,
                                       const DomainProfile& prof) {
    AssumptionReport rep;
    {
        AssumptionCheck c{"C.ellipticity", "u' Sigma(z) u >= delta", true, 0.0, 0.0};
        double worst = std::numeric_limits<double>::infinity();
        for (double x = 0.0; x < 1e9; x = (x == 0.0) ? 1e-3 : x * 2.0) {
            const Mat s = cov.matrix(x);
            const double m = jacobi_eigen(s).values.minCoeff();
            if (m < worst) {
                worst = m;
                c.worst_x = x;
            }
        }
        c.worst_value = worst;
        c.pass = worst >= cov.delta() * (1.0 - 1e-12);
        rep.checks.push_back(c);
    }
    {
        AssumptionCheck c{"A.s0c0", "s_0, c_0 in (0, inf)", rp.s0 > 0.0 && rp.c0 > 0.0, 0.0,
                          std::min(rp.s0, rp.c0)};
        rep.checks.push_back(c);
        if (!c.pass) return rep;
    }
    const ReflectionSpec refl(rp);
    std::vector<double> xs;
    for (int k = -30; k <= 60; ++k) xs.push_back(std::max(prof.params().x_hi, 1.0) * std::pow(2.0, k * 0.5));
    const int d = prof.d();
    std::vector<Vec> dirs;
    for (int i = 0; i < d; ++i) {
        Vec u = Vec::Zero(d);
        u(i) = 1.0;
        dirs.push_back(u);
        dirs.push_back(-u);
    }
    if (d > 1) dirs.push_back(Vec::Ones(d) / std::sqrt(static_cast<double>(d)));
    {
        AssumptionCheck bound{"V.bounded", "sup |phi| < inf", true, 0.0, 0.0};
        AssumptionCheck normal{"V.normal", "inf <phi_x(u), n_x(u)> > 0", true, 0.0,
                               std::numeric_limits<double>::infinity()};
        for (double x : xs) {
            for (const auto& u : dirs) {
                const Vec f = phi(refl, prof, x, u);
                const Vec n = inward_normal(prof, x, u);
                if (f.norm() > bound.worst_value) {
                    bound.worst_value = f.norm();
                    bound.worst_x = x;
                }
                const double ip = f.dot(n);
                if (ip < normal.worst_value) {
                    normal.worst_value = ip;
                    normal.worst_x = x;
                }
            }
        }
        bound.pass = bound.worst_value <= refl.norm_bound() * (1.0 + 1e-12);
        normal.pass = normal.worst_value > 0.0;
        rep.checks.push_back(bound);
        rep.checks.push_back(normal);
    }
    {
        // Tail limits: the gap at the largest grid point (about 2e9) must be below 1e-4 and
        // non-increasing over the upper half of the grid. For b ~ x^{1/2} the projections
        // converge only like x^{-1/2}, hence the loose absolute level.
        auto tail_check = [&](const char* name, const char* cond, auto&& gap_at) {
            AssumptionCheck c{name, cond, true, xs.back(), 0.0};
            std::vector<double> gaps;
            for (double x : xs) gaps.push_back(gap_at(x));
            c.worst_value = gaps.back();
            c.pass = gaps.back() < 1e-4;
            for (std::size_t i = gaps.size() / 2; i + 1 < gaps.size(); ++i) {
                if (gaps[i + 1] > gaps[i] * (1.0 + 1e-9) + 1e-15) {
                    c.pass = false;
                    c.worst_x = xs[i + 1];
                    c.worst_value = gaps[i + 1];
                    break;
                }
            }
            rep.checks.push_back(c);
        };
        tail_check("A.sigma", "trace Sigma - e_x' Sigma e_x -> sigma^2",
                   [&](double x) { return sigma_trace_gap(cov, prof, x); });
        tail_check("A.axial", "<phi_x(u), e_x> -> s_0", [&](double x) {
            double g = 0.0;
            for (const auto& u : dirs) g = std::max(g, std::abs(phi(refl, prof, x, u)(0) - refl.axial_limit()));
            return g;
        });
        tail_check("A.transverse", "<phi_x(u), -e_u> -> c_0", [&](double x) {
            double g = 0.0;
            for (const auto& u : dirs) {
                const Vec f = phi(refl, prof, x, u);
                g = std::max(g, std::abs(-f.tail(d).dot(u) - refl.transverse_limit()));
            }
            return g;
        });
    }
    return rep;
}

}  // namespace horn
