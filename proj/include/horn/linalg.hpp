#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace horn {

/// Largest supported transverse dimension d; the ambient space is R^{d+1}.
inline constexpr int kMaxTransverse = 15;
inline constexpr int kMaxAmbient = kMaxTransverse + 1;

// Fixed-capacity storage keeps the stepping loop free of heap traffic.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAmbient, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAmbient, kMaxAmbient>;

struct Eigensystem {
    Vec values;
    Mat vectors;  // columns are eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline Eigensystem jacobi_eigen(const Mat& a_in, int max_sweeps = 64) {
    const Eigen::Index n = a_in.rows();
    if (a_in.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix must be square");
    Mat a = a_in;
    Mat v = Mat::Identity(n, n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        double diag = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            diag += a(p, p) * a(p, p);
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        }
        if (off <= 1e-32 * std::max(diag, 1e-300)) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    return {a.diagonal(), v};
}

/// Symmetric PSD square root R with R*R = A. Negative round-off eigenvalues are clipped to 0.
inline Mat symmetric_sqrt(const Mat& a) {
    const Eigensystem es = jacobi_eigen(a);
    Vec root(es.values.size());
    for (Eigen::Index i = 0; i < root.size(); ++i) root(i) = std::sqrt(std::max(es.values(i), 0.0));
    Mat r = es.vectors * root.asDiagonal() * es.vectors.transpose();
    return 0.5 * (r + r.transpose());
}

}  // namespace horn
