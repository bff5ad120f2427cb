#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "measure.hpp"
#include "spectrum.hpp"

namespace kf {

// Independent finite-dimensional ground truth. Atomic W and V induce a
// weighted cycle (or, pinned at the origin, a path) Laplacian: site masses
// are the V-atoms, conductances are reciprocal W-gap masses. Its generalized
// eigenproblem A f = lambda M f is solved densely and cross-validates the
// secular-function spectrum.
struct cycle_operator {
    std::vector<double> v; // site masses (V-atom masses), length N
    // periodic:  length N,     c[j] couples sites j and (j+1) mod N
    // dirichlet: length N + 1, c[0] grounds site 0 to the pinned origin,
    //            c[j] couples sites j-1 and j, c[N] grounds site N-1
    std::vector<double> c;
    boundary bc = boundary::periodic;

    std::size_t size() const { return v.size(); }

    // dense row-major Laplacian A
    std::vector<double> matrix() const {
        std::size_t n = v.size();
        std::vector<double> a(n * n, 0.0);
        auto edge = [&](std::size_t i, std::size_t j, double w) {
            a[i * n + i] += w;
            a[j * n + j] += w;
            a[i * n + j] -= w;
            a[j * n + i] -= w;
        };
        if (bc == boundary::periodic) {
            for (std::size_t j = 0; j < n; ++j) edge(j, (j + 1) % n, c[j]);
        } else {
            a[0] += c[0]; // grounded ends: the pinned value 0 absorbs the edge
            a[(n - 1) * n + (n - 1)] += c[n];
            for (std::size_t j = 1; j < n; ++j) edge(j - 1, j, c[j]);
        }
        return a;
    }
};

inline cycle_operator assemble_cycle(const atomic_measure& W, const atomic_measure& V,
                                     boundary bc) {
    if (W.chi != chirality::right_continuous || V.chi != chirality::left_continuous)
        throw config_error("assemble_cycle: W must be cadlag and V caglad");
    std::size_t n = V.size();
    if (n < 1) throw config_error("assemble_cycle: V has no atoms");

    cycle_operator op;
    op.bc = bc;
    op.v = V.masses;

    auto gap = [&](double a, double b) {
        double m = W.interval_mass(a, b, closure::left_open_right_closed);
        if (!(m > 0.0))
            throw config_error("assemble_cycle: V-gap carries no W mass; merge those sites");
        return 1.0 / m;
    };

    if (bc == boundary::periodic) {
        if (n < 2) throw config_error("assemble_cycle: periodic operator needs >= 2 sites");
        for (std::size_t j = 0; j + 1 < n; ++j)
            op.c.push_back(gap(V.positions[j], V.positions[j + 1]));
        // wrap gap crosses the origin: (y_{N-1}, 1] then (0, y_0]
        double wrap = W.interval_mass(V.positions[n - 1], 1.0, closure::left_open_right_closed) +
                      W.interval_mass(0.0, V.positions[0], closure::left_open_right_closed);
        if (!(wrap > 0.0))
            throw config_error("assemble_cycle: V-gap carries no W mass; merge those sites");
        op.c.push_back(1.0 / wrap);
    } else {
        op.c.push_back(gap(0.0, V.positions[0]));
        for (std::size_t j = 1; j < n; ++j) op.c.push_back(gap(V.positions[j - 1], V.positions[j]));
        op.c.push_back(gap(V.positions[n - 1], 1.0));
    }
    return op;
}

struct dense_result {
    std::vector<double> lambdas;              // ascending
    std::vector<std::vector<double>> vectors; // M-orthonormal, same order
    int sweeps = 0;
    double off_norm = 0.0;
};

namespace detail {

// cyclic Jacobi on a symmetric row-major matrix, rotations accumulated in u
inline void jacobi(std::vector<double>& s, std::vector<double>& u, std::size_t n, int& sweeps,
                   double& off_norm) {
    u.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) u[i * n + i] = 1.0;
    double frob = 0.0;
    for (double x : s) frob += x * x;
    frob = std::sqrt(frob);
    const double stop = 1e-15 * std::max(frob, 1e-300);

    for (sweeps = 0; sweeps < 30; ++sweeps) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * s[p * n + q] * s[p * n + q];
        off_norm = std::sqrt(off);
        if (off_norm <= stop) return;

        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = s[p * n + q];
                if (apq == 0.0) continue;
                double theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cs = 1.0 / std::sqrt(t * t + 1.0), sn = t * cs;
                for (std::size_t k = 0; k < n; ++k) {
                    double sp = s[k * n + p], sq = s[k * n + q];
                    s[k * n + p] = cs * sp - sn * sq;
                    s[k * n + q] = sn * sp + cs * sq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double sp = s[p * n + k], sq = s[q * n + k];
                    s[p * n + k] = cs * sp - sn * sq;
                    s[q * n + k] = sn * sp + cs * sq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double up = u[k * n + p], uq = u[k * n + q];
                    u[k * n + p] = cs * up - sn * uq;
                    u[k * n + q] = sn * up + cs * uq;
                }
            }
    }
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * s[p * n + q] * s[p * n + q];
    off_norm = std::sqrt(off);
    if (off_norm > stop)
        throw numeric_error("dense_spectrum: rotation sweeps exhausted, off-diagonal norm " +
                            std::to_string(off_norm));
}

// dense LU with partial pivoting; a is overwritten, perm holds row swaps
inline void lu_factor(std::vector<double>& a, std::vector<std::size_t>& perm, std::size_t n) {
    perm.resize(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
        if (a[piv * n + k] == 0.0) throw numeric_error("fredholm: singular operator");
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
            std::swap(perm[k], perm[piv]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            a[i * n + k] /= a[k * n + k];
            for (std::size_t j = k + 1; j < n; ++j) a[i * n + j] -= a[i * n + k] * a[k * n + j];
        }
    }
}

inline void lu_solve(const std::vector<double>& a, const std::vector<std::size_t>& perm,
                     std::size_t n, std::vector<double>& b) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[perm[i]];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) x[i] -= a[i * n + j] * x[j];
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = i + 1; j < n; ++j) x[i] -= a[i * n + j] * x[j];
        x[i] /= a[i * n + i];
    }
    b = std::move(x);
}

} // namespace detail

inline dense_result dense_spectrum(const cycle_operator& op) {
    std::size_t n = op.size();
    if (n < 2) throw config_error("dense_spectrum: need at least 2 sites");

    // symmetrize: M^{-1/2} A M^{-1/2}
    std::vector<double> rs(n);
    for (std::size_t i = 0; i < n; ++i) rs[i] = 1.0 / std::sqrt(op.v[i]);
    std::vector<double> s = op.matrix();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) s[i * n + j] *= rs[i] * rs[j];

    dense_result r;
    std::vector<double> u;
    detail::jacobi(s, u, n, r.sweeps, r.off_norm);

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return s[a * n + a] < s[b * n + b]; });

    r.lambdas.reserve(n);
    r.vectors.reserve(n);
    for (std::size_t k : idx) {
        r.lambdas.push_back(s[k * n + k]);
        std::vector<double> f(n); // back-transform to an M-orthonormal vector
        for (std::size_t i = 0; i < n; ++i) f[i] = u[i * n + k] * rs[i];
        r.vectors.push_back(std::move(f));
    }
    return r;
}

// Coefficients a_k of det(I - zG) = sum_k a_k z^k where G is the inverse of
// the pinned operator (dirichlet) or the pseudo-inverse of the periodic
// operator on the mean-zero complement. Power traces tr(G^m) feed Newton's
// identities; the polynomial degree is the number of nonzero eigenvalues.
inline std::vector<double> fredholm_coefficients(const cycle_operator& op) {
    std::size_t n = op.size();
    std::vector<double> a = op.matrix();
    std::vector<double> g(n * n, 0.0); // dense Green matrix, columns G e_j

    if (op.bc == boundary::dirichlet) {
        std::vector<std::size_t> perm;
        detail::lu_factor(a, perm, n);
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<double> b(n, 0.0);
            b[j] = op.v[j]; // G e_j = A^{-1} M e_j
            detail::lu_solve(a, perm, n, b);
            for (std::size_t i = 0; i < n; ++i) g[i * n + j] = b[i];
        }
    } else {
        // bordered system pins the constant kernel: solve A x + mu*(M 1) = M b
        // with the M-weighted mean of x forced to zero
        std::size_t m = n + 1;
        std::vector<double> bord(m * m, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) bord[i * m + j] = a[i * n + j];
            bord[i * m + n] = op.v[i];
            bord[n * m + i] = op.v[i];
        }
        std::vector<std::size_t> perm;
        detail::lu_factor(bord, perm, m);
        double vtot = std::accumulate(op.v.begin(), op.v.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<double> b(m, 0.0);
            // project e_j onto the mean-zero complement before applying M
            for (std::size_t i = 0; i < n; ++i)
                b[i] = op.v[i] * ((i == j ? 1.0 : 0.0) - op.v[j] / vtot);
            detail::lu_solve(bord, perm, m, b);
            for (std::size_t i = 0; i < n; ++i) g[i * n + j] = b[i];
        }
    }

    // Power traces and Newton's identities cancel violently in the trailing
    // coefficients (the recursion amplifies roundoff by roughly the
    // eigenvalue spread per level), so both run in multiprecision; only the
    // double-rounded coefficients leave the function.
    std::size_t deg = (op.bc == boundary::dirichlet) ? n : n - 1;
    detail::precision_guard pg(static_cast<unsigned>(30 + 2 * deg));
    std::vector<mpf> gq(n * n);
    for (std::size_t i = 0; i < n * n; ++i) gq[i] = g[i];

    std::vector<mpf> p(deg + 1, mpf(0)); // power traces, p[m] = tr(G^m)
    std::vector<mpf> pw = gq;
    for (std::size_t k = 1; k <= deg; ++k) {
        mpf tr(0);
        for (std::size_t i = 0; i < n; ++i) tr += pw[i * n + i];
        p[k] = tr;
        if (k < deg) {
            std::vector<mpf> nx(n * n, mpf(0));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t l = 0; l < n; ++l) {
                    const mpf& gil = gq[i * n + l];
                    for (std::size_t j = 0; j < n; ++j) nx[i * n + j] += gil * pw[l * n + j];
                }
            pw = std::move(nx);
        }
    }

    std::vector<mpf> e(deg + 1, mpf(0)); // elementary symmetric functions
    e[0] = 1;
    for (std::size_t k = 1; k <= deg; ++k) {
        mpf s(0);
        int sign = 1;
        for (std::size_t i = 1; i <= k; ++i) {
            s += sign * e[k - i] * p[i];
            sign = -sign;
        }
        e[k] = s / static_cast<double>(k);
    }

    std::vector<double> coeffs(deg + 1);
    for (std::size_t k = 0; k <= deg; ++k)
        coeffs[k] = static_cast<double>(k % 2 == 0 ? e[k] : -e[k]);
    return coeffs;
}

// One-to-one comparison of the series spectrum with the dense oracle, in the
// L2_V geometry. Eigenvector agreement is measured as the projection norm
// onto the oracle eigenspace clustered around each eigenvalue, so degenerate
// pairs compare subspaces rather than arbitrary basis choices.
inline nlohmann::json compare_spectra(const spectrum_result& series, const dense_result& oracle,
                                      const std::vector<double>& v, double tol) {
    std::size_t ns = series.eigenpairs.size(), no = oracle.lambdas.size();
    if (ns != no)
        throw numeric_error("compare_spectra: count mismatch (series " + std::to_string(ns) +
                            ", oracle " + std::to_string(no) + "), a secular root was missed");
    std::size_t n = v.size();

    double max_gap = 0.0, min_cos = 1.0;
    for (std::size_t k = 0; k < ns; ++k) {
        const auto& e = series.eigenpairs[k];
        double lo = oracle.lambdas[k];
        max_gap = std::max(max_gap, std::abs(e.lambda - lo) / std::max(1.0, lo));

        double cluster = std::max(tol, 1e-6) * std::max(1.0, e.lambda);
        double proj2 = 0.0, norm2 = 0.0;
        for (std::size_t j = 0; j < n; ++j) norm2 += e.values[j] * e.values[j] * v[j];
        for (std::size_t i = 0; i < no; ++i) {
            if (std::abs(oracle.lambdas[i] - e.lambda) > cluster) continue;
            double p = 0.0;
            for (std::size_t j = 0; j < n; ++j) p += e.values[j] * oracle.vectors[i][j] * v[j];
            proj2 += p * p;
        }
        min_cos = std::min(min_cos, std::sqrt(proj2 / norm2));
    }

    return nlohmann::json{{"n", n},
                          {"max_rel_gap", max_gap},
                          {"count_series", ns},
                          {"count_oracle", no},
                          {"min_cosine", min_cos}};
}

} // namespace kf
